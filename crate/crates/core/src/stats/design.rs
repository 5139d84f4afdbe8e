//! Model frames and treatment-coded design matrices.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::StatsError;

/// What a design column encodes. Trend analysis reads this to find the
/// interaction terms belonging to a focal predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Intercept,
    Numeric { variable: String },
    FactorLevel { factor: String, level: String },
    Interaction { numeric: String, factor: String, level: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignColumn {
    pub name: String,
    #[serde(flatten)]
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    Numeric(String),
    /// Treatment-coded main effect.
    Factor(String),
    /// Numeric × factor interaction (one column per non-reference level).
    NumericByFactor(String, String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub matrix: DMatrix<f64>,
    pub columns: Vec<DesignColumn>,
    /// Coding order of every factor used, reference level first.
    pub factor_levels: BTreeMap<String, Vec<String>>,
}

impl Design {
    /// Plain numeric design; a column named `(Intercept)` is tagged as such.
    pub fn from_columns(names: &[&str], columns: &[Vec<f64>]) -> Result<Self, StatsError> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) || names.len() != columns.len() {
            return Err(StatsError::LengthMismatch {
                left: names.len(),
                right: columns.len(),
            });
        }
        let matrix = DMatrix::from_fn(n, columns.len(), |i, j| columns[j][i]);
        let columns = names
            .iter()
            .map(|name| DesignColumn {
                name: name.to_string(),
                kind: if *name == "(Intercept)" {
                    ColumnKind::Intercept
                } else {
                    ColumnKind::Numeric {
                        variable: name.to_string(),
                    }
                },
            })
            .collect();
        Ok(Self {
            matrix,
            columns,
            factor_levels: BTreeMap::new(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    pub fn has_intercept(&self) -> bool {
        self.columns.iter().any(|c| c.kind == ColumnKind::Intercept)
    }

    /// Columns whose Gram-Schmidt residual against the preceding columns
    /// vanishes (relative tolerance 1e-9). Empty means full column rank.
    pub fn collinear_columns(&self) -> Vec<String> {
        let x = &self.matrix;
        let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
        let mut bad = Vec::new();
        for j in 0..x.ncols() {
            let col = x.column(j).into_owned();
            let norm = col.norm();
            if norm == 0.0 {
                bad.push(self.columns[j].name.clone());
                continue;
            }
            let mut v = col / norm;
            // two passes of modified Gram-Schmidt for stability
            for _ in 0..2 {
                for q in &basis {
                    let proj = q.dot(&v);
                    v -= q * proj;
                }
            }
            let r = v.norm();
            if r < 1e-9 {
                bad.push(self.columns[j].name.clone());
            } else {
                basis.push(v / r);
            }
        }
        bad
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone)]
enum FrameColumn {
    Numeric(Vec<f64>),
    Factor { values: Vec<String>, reference: Option<String> },
}

/// Named columns of equal length, numeric or categorical.
#[derive(Debug, Clone, Default)]
pub struct ModelFrame {
    nrows: Option<usize>,
    columns: BTreeMap<String, FrameColumn>,
}

impl ModelFrame {
    pub fn new() -> Self {
        Self::default()
    }

    fn check_len(&mut self, len: usize) -> Result<(), StatsError> {
        match self.nrows {
            Some(n) if n != len => Err(StatsError::LengthMismatch { left: n, right: len }),
            _ => {
                self.nrows = Some(len);
                Ok(())
            }
        }
    }

    pub fn numeric(mut self, name: &str, values: Vec<f64>) -> Result<Self, StatsError> {
        self.check_len(values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite);
        }
        self.columns.insert(name.to_string(), FrameColumn::Numeric(values));
        Ok(self)
    }

    pub fn factor(mut self, name: &str, values: Vec<String>) -> Result<Self, StatsError> {
        self.check_len(values.len())?;
        self.columns.insert(
            name.to_string(),
            FrameColumn::Factor {
                values,
                reference: None,
            },
        );
        Ok(self)
    }

    /// Override the alphabetical-first reference level.
    pub fn with_reference(mut self, factor: &str, level: &str) -> Result<Self, StatsError> {
        match self.columns.get_mut(factor) {
            Some(FrameColumn::Factor { values, reference }) => {
                if !values.iter().any(|v| v == level) {
                    return Err(StatsError::UnknownLevel {
                        factor: factor.to_string(),
                        level: level.to_string(),
                    });
                }
                *reference = Some(level.to_string());
                Ok(self)
            }
            _ => Err(StatsError::UnknownVariable(factor.to_string())),
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows.unwrap_or(0)
    }

    /// Levels in coding order: reference first, then the rest sorted.
    pub fn levels(&self, factor: &str) -> Result<Vec<String>, StatsError> {
        match self.columns.get(factor) {
            Some(FrameColumn::Factor { values, reference }) => {
                let set: BTreeSet<&String> = values.iter().collect();
                let mut levels: Vec<String> = set.into_iter().cloned().collect();
                if let Some(r) = reference {
                    levels.retain(|l| l != r);
                    levels.insert(0, r.clone());
                }
                Ok(levels)
            }
            _ => Err(StatsError::UnknownVariable(factor.to_string())),
        }
    }

    fn numeric_values(&self, name: &str) -> Result<&[f64], StatsError> {
        match self.columns.get(name) {
            Some(FrameColumn::Numeric(v)) => Ok(v),
            _ => Err(StatsError::UnknownVariable(name.to_string())),
        }
    }

    fn factor_values(&self, name: &str) -> Result<&[String], StatsError> {
        match self.columns.get(name) {
            Some(FrameColumn::Factor { values, .. }) => Ok(values),
            _ => Err(StatsError::UnknownVariable(name.to_string())),
        }
    }

    pub fn design(&self, terms: &[Term]) -> Result<Design, StatsError> {
        let n = self.nrows();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let mut meta = Vec::new();
        let mut factor_levels = BTreeMap::new();
        for term in terms {
            match term {
                Term::Intercept => {
                    cols.push(vec![1.0; n]);
                    meta.push(DesignColumn {
                        name: "(Intercept)".into(),
                        kind: ColumnKind::Intercept,
                    });
                }
                Term::Numeric(v) => {
                    cols.push(self.numeric_values(v)?.to_vec());
                    meta.push(DesignColumn {
                        name: v.clone(),
                        kind: ColumnKind::Numeric { variable: v.clone() },
                    });
                }
                Term::Factor(f) => {
                    let values = self.factor_values(f)?;
                    factor_levels.insert(f.clone(), self.levels(f)?);
                    for level in self.levels(f)?.into_iter().skip(1) {
                        cols.push(values.iter().map(|v| f64::from(u8::from(*v == level))).collect());
                        meta.push(DesignColumn {
                            name: format!("{f}[{level}]"),
                            kind: ColumnKind::FactorLevel {
                                factor: f.clone(),
                                level,
                            },
                        });
                    }
                }
                Term::NumericByFactor(v, f) => {
                    let x = self.numeric_values(v)?;
                    let values = self.factor_values(f)?;
                    factor_levels.insert(f.clone(), self.levels(f)?);
                    for level in self.levels(f)?.into_iter().skip(1) {
                        cols.push(
                            x.iter()
                                .zip(values)
                                .map(|(xi, fv)| if *fv == level { *xi } else { 0.0 })
                                .collect(),
                        );
                        meta.push(DesignColumn {
                            name: format!("{v}:{f}[{level}]"),
                            kind: ColumnKind::Interaction {
                                numeric: v.clone(),
                                factor: f.clone(),
                                level,
                            },
                        });
                    }
                }
            }
        }
        let matrix = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        Ok(Design {
            matrix,
            columns: meta,
            factor_levels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn treatment_coding_uses_alphabetical_reference() {
        let frame = ModelFrame::new()
            .numeric("h", vec![1.0, 2.0, 3.0, 4.0])
            .unwrap()
            .factor("m", vec!["b".into(), "a".into(), "c".into(), "a".into()])
            .unwrap();
        let d = frame
            .design(&[
                Term::Intercept,
                Term::Numeric("h".into()),
                Term::Factor("m".into()),
                Term::NumericByFactor("h".into(), "m".into()),
            ])
            .unwrap();
        assert_eq!(d.names(), vec!["(Intercept)", "h", "m[b]", "m[c]", "h:m[b]", "h:m[c]"]);
        assert_eq!(d.matrix.column(2).as_slice(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.matrix.column(5).as_slice(), &[0.0, 0.0, 3.0, 0.0]);
    }

    #[test]
    fn reference_override() {
        let frame = ModelFrame::new()
            .factor("m", vec!["b".into(), "a".into()])
            .unwrap()
            .with_reference("m", "b")
            .unwrap();
        assert_eq!(frame.levels("m").unwrap(), vec!["b", "a"]);
        assert!(frame.clone().with_reference("m", "z").is_err());
    }

    #[test]
    fn collinearity_names_the_redundant_column() {
        let d = Design::from_columns(
            &["(Intercept)", "x", "twice_x"],
            &[vec![1.0; 4], vec![1.0, 2.0, 3.0, 5.0], vec![2.0, 4.0, 6.0, 10.0]],
        )
        .unwrap();
        assert_eq!(d.collinear_columns(), vec!["twice_x".to_string()]);
    }
}
