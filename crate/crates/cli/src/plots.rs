//! Static SVG figures: rating scatter with marginal densities, validity per
//! subset, and predicted error along the human rating.

use std::collections::BTreeSet;
use std::error::Error;

use normforge::corpus::{Dimension, LikertScale};
use normforge::stats::{ColumnKind, ErrorAnalysis, OlsFit, ValidityCell};
use plotters::prelude::*;

type DrawResult<T> = std::result::Result<T, Box<dyn Error>>;

const FONT: &str = "sans-serif";

/// Gaussian kernel density on `n` grid points over [lo, hi], bandwidth by
/// Silverman's rule.
pub fn kde(values: &[f64], lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let m = values.len() as f64;
    if values.is_empty() {
        return Vec::new();
    }
    let mean = values.iter().sum::<f64>() / m;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (m - 1.0);
        let i = pos.floor() as usize;
        let j = (i + 1).min(sorted.len() - 1);
        sorted[i] + (pos - i as f64) * (sorted[j] - sorted[i])
    };
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let mut h = 0.9 * spread * m.powf(-0.2);
    if h <= 0.0 || !h.is_finite() {
        h = (hi - lo) / 20.0;
    }
    let norm = 1.0 / (m * h * (2.0 * std::f64::consts::PI).sqrt());
    (0..n)
        .map(|k| {
            let x = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let d: f64 = values.iter().map(|v| (-0.5 * ((x - v) / h).powi(2)).exp()).sum();
            (x, d * norm)
        })
        .collect()
}

/// Human (x) against machine (y) ratings on `scale`, with the identity line
/// and a density strip for each axis.
pub fn scatter(
    human: &[f64],
    machine: &[f64],
    dimension: Dimension,
    model: &str,
    scale: LikertScale,
    rho: Option<f64>,
) -> DrawResult<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 640)).into_drawing_area();
        root.fill(&WHITE)?;
        let rho = rho.map(|r| format!(", rho = {r:.3}")).unwrap_or_default();
        let root = root.titled(
            &format!("{dimension}: human vs {model} (n = {}{rho})", human.len()),
            (FONT, 18),
        )?;
        let (upper, lower) = root.split_vertically(110);
        let (top, _) = upper.split_horizontally(520);
        let (main, right) = lower.split_horizontally(520);
        let lo = scale.min_point() as f64 - 0.25;
        let hi = scale.max_point() as f64 + 0.25;

        let mut chart = ChartBuilder::on(&main)
            .margin(8)
            .x_label_area_size(45)
            .y_label_area_size(55)
            .build_cartesian_2d(lo..hi, lo..hi)?;
        chart
            .configure_mesh()
            .x_desc(format!("human {dimension} ({scale})"))
            .y_desc(format!("{model} {dimension} ({scale})"))
            .label_style((FONT, 13))
            .draw()?;
        chart.draw_series(LineSeries::new([(lo, lo), (hi, hi)], BLACK.mix(0.4)))?;
        chart.draw_series(
            human
                .iter()
                .zip(machine)
                .map(|(&x, &y)| Circle::new((x, y), 3, BLUE.mix(0.45).filled())),
        )?;

        let dx = kde(human, lo, hi, 120);
        let dy = kde(machine, lo, hi, 120);
        let peak = dx.iter().chain(&dy).map(|p| p.1).fold(0.0, f64::max).max(1e-9) * 1.05;
        let mut t = ChartBuilder::on(&top)
            .margin(8)
            .y_label_area_size(55)
            .build_cartesian_2d(lo..hi, 0.0..peak)?;
        t.draw_series(LineSeries::new(dx, BLUE.stroke_width(2)))?;
        let mut r = ChartBuilder::on(&right)
            .margin(8)
            .x_label_area_size(45)
            .build_cartesian_2d(0.0..peak, lo..hi)?;
        r.draw_series(LineSeries::new(dy.into_iter().map(|(y, d)| (d, y)), RED.stroke_width(2)))?;
        root.present()?;
    }
    Ok(svg)
}

/// Bars of Spearman rho grouped by dimension and coloured by model, one
/// panel per subset.
pub fn subset_bars(cells: &[ValidityCell]) -> DrawResult<String> {
    let groups: Vec<String> = cells
        .iter()
        .map(|c| c.group.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let models: Vec<String> = cells
        .iter()
        .map(|c| c.model.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let dims: Vec<Dimension> = Dimension::ALL
        .into_iter()
        .filter(|d| cells.iter().any(|c| c.dimension == *d))
        .collect();
    let ymin = cells
        .iter()
        .filter_map(|c| c.result.map(|r| r.rho))
        .fold(0.0, f64::min)
        - 0.05;
    let k = dims.len().max(1);
    let slot = 0.8 / models.len().max(1) as f64;
    let width = (groups.len() as u32 * (150 * k as u32 + 90)).max(360);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (width, 460)).into_drawing_area();
        root.fill(&WHITE)?;
        let root = root.titled("Validity by subset", (FONT, 18))?;
        let panels = root.split_evenly((1, groups.len()));
        for (panel, group) in panels.iter().zip(&groups) {
            let n = cells.iter().filter(|c| &c.group == group).map(|c| c.n).max().unwrap_or(0);
            let mut chart = ChartBuilder::on(panel)
                .caption(format!("{group} (n = {n})"), (FONT, 15))
                .margin(10)
                .x_label_area_size(40)
                .y_label_area_size(50)
                .build_cartesian_2d(-0.5..(k as f64 - 0.5), ymin..1.0)?;
            chart
                .configure_mesh()
                .disable_x_mesh()
                .x_labels(k)
                .x_label_formatter(&|v| {
                    let i = v.round();
                    if (v - i).abs() > 1e-6 || i < 0.0 || i as usize >= dims.len() {
                        return String::new();
                    }
                    dims[i as usize].to_string()
                })
                .y_desc("Spearman rho")
                .label_style((FONT, 13))
                .draw()?;
            chart.draw_series(LineSeries::new([(-0.5, 0.0), (k as f64 - 0.5, 0.0)], BLACK))?;
            for (j, m) in models.iter().enumerate() {
                let color = Palette99::pick(j);
                let bars: Vec<Rectangle<(f64, f64)>> = dims
                    .iter()
                    .enumerate()
                    .filter_map(|(i, d)| {
                        let rho = cells
                            .iter()
                            .find(|c| &c.group == group && c.dimension == *d && &c.model == m)
                            .and_then(|c| c.result.map(|r| r.rho))?;
                        let x0 = i as f64 - 0.4 + j as f64 * slot;
                        Some(Rectangle::new([(x0 + 0.02, 0.0), (x0 + slot - 0.02, rho)], color.filled()))
                    })
                    .collect();
                chart
                    .draw_series(bars)?
                    .label(m.as_str())
                    .legend(move |(x, y)| Rectangle::new([(x, y - 5), (x + 12, y + 5)], color.filled()));
            }
            chart
                .configure_series_labels()
                .position(SeriesLabelPosition::UpperRight)
                .border_style(BLACK)
                .background_style(WHITE.mix(0.85))
                .label_font((FONT, 12))
                .draw()?;
        }
        root.present()?;
    }
    Ok(svg)
}

/// OLS prediction of the error at human rating `x` for `model`, averaged
/// over dimensions with equal weight.
pub fn predicted_error(fit: &OlsFit, model: Option<&str>, x: f64) -> f64 {
    let n_dims = fit.factor_levels.get("dimension").map_or(1, |l| l.len().max(1)) as f64;
    fit.columns
        .iter()
        .zip(&fit.coefficients)
        .map(|(c, b)| {
            let v = match &c.kind {
                ColumnKind::Intercept => 1.0,
                ColumnKind::Numeric { .. } => x,
                ColumnKind::FactorLevel { factor, level } if factor == "model" => {
                    f64::from(model == Some(level.as_str()))
                }
                ColumnKind::FactorLevel { .. } => 1.0 / n_dims,
                ColumnKind::Interaction { factor, level, .. } if factor == "model" => {
                    if model == Some(level.as_str()) {
                        x
                    } else {
                        0.0
                    }
                }
                ColumnKind::Interaction { .. } => x / n_dims,
            };
            b * v
        })
        .sum()
}

/// Predicted absolute error along the human rating, one line per model.
pub fn error_trends(analysis: &ErrorAnalysis, scale: LikertScale, models: &[String]) -> DrawResult<String> {
    let lo = scale.min_point() as f64;
    let hi = scale.max_point() as f64;
    let has_model_factor = analysis.ols.factor_levels.contains_key("model");
    let lines: Vec<(String, Vec<(f64, f64)>)> = models
        .iter()
        .map(|m| {
            let key = has_model_factor.then_some(m.as_str());
            let pts = (0..=60)
                .map(|k| {
                    let x = lo + (hi - lo) * k as f64 / 60.0;
                    (x, predicted_error(&analysis.ols, key, x))
                })
                .collect();
            (m.clone(), pts)
        })
        .collect();
    let top = lines
        .iter()
        .flat_map(|l| l.1.iter().map(|p| p.1))
        .fold(0.5, f64::max)
        * 1.1;
    let bottom = lines
        .iter()
        .flat_map(|l| l.1.iter().map(|p| p.1))
        .fold(0.0, f64::min);
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (640, 460)).into_drawing_area();
        root.fill(&WHITE)?;
        let mut chart = ChartBuilder::on(&root)
            .caption("Absolute error by human rating", (FONT, 18))
            .margin(12)
            .x_label_area_size(45)
            .y_label_area_size(55)
            .build_cartesian_2d(lo..hi, bottom..top)?;
        chart
            .configure_mesh()
            .x_desc(format!("human rating ({scale})"))
            .y_desc("predicted |human - model|")
            .label_style((FONT, 13))
            .draw()?;
        for (i, (name, pts)) in lines.into_iter().enumerate() {
            let color = Palette99::pick(i);
            chart
                .draw_series(LineSeries::new(pts, color.stroke_width(2)))?
                .label(name)
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 18, y)], color.stroke_width(2)));
        }
        chart
            .configure_series_labels()
            .position(SeriesLabelPosition::UpperLeft)
            .border_style(BLACK)
            .background_style(WHITE.mix(0.85))
            .label_font((FONT, 13))
            .draw()?;
        root.present()?;
    }
    Ok(svg)
}
