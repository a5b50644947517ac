#![allow(dead_code)]

use brokergame::{ModelParams, RiskAversion, TimeGrid};

/// Exact solution of `y' = c + l y + q y^2` with constant coefficients and a
/// positive discriminant, started from `y0` at time 0.
///
/// Uses the root form `u = (y - r1)/(y - r2)`, `u' = q (r1 - r2) u`, with the
/// roots computed without cancellation.
pub fn riccati_exact(q: f64, l: f64, c: f64, y0: f64, t: f64) -> f64 {
    if q == 0.0 {
        if l == 0.0 {
            return y0 + c * t;
        }
        return (y0 + c / l) * (l * t).exp() - c / l;
    }
    let disc = l * l - 4.0 * q * c;
    assert!(disc > 0.0, "oracle needs a positive discriminant");
    let big = -0.5 * (l + l.signum() * disc.sqrt());
    let (r1, r2) = (c / big, big / q);
    let u = (y0 - r1) / (y0 - r2) * (q * (r1 - r2) * t).exp();
    (r1 - r2 * u) / (1.0 - u)
}

pub fn default_grid() -> TimeGrid {
    TimeGrid::new(1.0, 1000).unwrap()
}

pub fn with_tiny_risk(mut p: ModelParams, beta0: f64) -> ModelParams {
    p.risk_informed.beta0 = beta0;
    p.risk_broker.beta0 = beta0;
    p
}

pub fn zero_risk() -> RiskAversion {
    RiskAversion {
        beta0: 0.0,
        beta1: 0.0,
        rho0: 0.0,
        rho1: 0.0,
    }
}

/// Median of a slice; the input is copied and sorted.
pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}
