//! Gamma/beta special functions and the Student t distribution.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of |Γ(x)| (Lanczos approximation, reflection below 0.5).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // Γ(x)Γ(1-x) = π / sin(πx)
        (PI / (PI * x).sin().abs()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEF[0];
        for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + LANCZOS_G + 0.5;
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

const CF_EPS: f64 = 1e-15;
const CF_TINY: f64 = 1e-300;
const CF_MAX_ITER: usize = 10_000;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < CF_TINY {
        d = CF_TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < CF_TINY {
            d = CF_TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < CF_TINY {
            c = CF_TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1].
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    assert!(a > 0.0 && b > 0.0, "incomplete beta needs positive shape parameters");
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Student t CDF with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * t_tail_mass(t, df);
    if t > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// P(|T| ≥ |t|): two-sided p-value.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    t_tail_mass(t, df).clamp(0.0, 1.0)
}

fn t_tail_mass(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    regularized_incomplete_beta(df / 2.0, 0.5, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values tabulated with scipy.special / scipy.stats.
    const BETA_TABLE: [(f64, f64, f64, f64); 7] = [
        (0.5, 0.5, 0.3, 0.36901011956554536),
        (2.0, 3.0, 0.4, 0.5247999999999999),
        (10.0, 2.5, 0.9, 0.8121862743088557),
        (1.0, 1.0, 0.77, 0.77),
        (30.0, 40.0, 0.45, 0.6447480085585666),
        (0.5, 15.0, 0.01, 0.4139350352236643),
        (5.0, 5.0, 0.5, 0.5),
    ];

    const T_TABLE: [(f64, f64, f64); 8] = [
        (2.0, 10.0, 0.9633059826146297),
        (-1.5, 3.0, 0.11529193262241141),
        (0.0, 7.0, 0.5),
        (7.09, 1917.0, 0.999999999999061),
        (2.5, 1.0, 0.8788810584091566),
        (1.0, 2.0, 0.7886751345948129),
        (-3.3, 46.0, 0.0009363942356618918),
        (12.0, 5.0, 0.9999645525374142),
    ];

    #[test]
    fn ln_gamma_reference() {
        assert!((ln_gamma(0.5) - 0.5723649429247).abs() < 1e-12);
        assert!((ln_gamma(10.3) - 13.482036786138359).abs() < 1e-12);
        assert!((ln_gamma(1e-3) - 6.907178885383853).abs() < 1e-12);
        assert!(ln_gamma(1.0).abs() < 1e-14);
        assert!(ln_gamma(2.0).abs() < 1e-14);
    }

    #[test]
    fn incomplete_beta_tabulated() {
        for (a, b, x, want) in BETA_TABLE {
            let got = regularized_incomplete_beta(a, b, x);
            assert!(((got - want) / want).abs() < 1e-10, "I_{x}({a},{b}) = {got}, want {want}");
        }
    }

    #[test]
    fn t_cdf_tabulated() {
        for (t, df, want) in T_TABLE {
            let got = student_t_cdf(t, df);
            assert!(((got - want) / want).abs() < 1e-10, "F({t}; {df}) = {got}, want {want}");
        }
    }

    #[test]
    fn two_sided_keeps_tail_precision() {
        // 2 * sf(7.09, 1917) ≈ 1.878e-12, far below what 1 - cdf resolves
        let p = student_t_two_sided(7.09, 1917.0);
        assert!(((p - 2.0 * (1.0 - 0.999999999999061)) / p).abs() < 1e-3);
        assert_eq!(student_t_two_sided(0.0, 5.0), 1.0);
    }
}
