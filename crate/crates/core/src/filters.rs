//! Path-coupled Kalman-Bucy filter updates and the deterministic coefficients
//! of the broker's flow-based filter.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    rk4_integrate, write_tables_csv, Direction, ScalarTable, Table, TimeFn, TimeGrid,
};
use crate::params::ModelParams;
use crate::trader::TraderCoefficients;

/// Which estimate a [`FilterState`] carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    /// The trader's estimate of the broker's rate.
    TraderNu,
    /// The broker's estimate of the signal from prices.
    BrokerPrice,
    /// The broker's estimate of the signal from the trader's flow.
    BrokerFlow,
}

/// Conditional mean and variance of one filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub mean: f64,
    pub variance: f64,
    pub kind: FilterKind,
}

impl FilterState {
    pub fn new(kind: FilterKind) -> Self {
        FilterState {
            mean: 0.0,
            variance: 0.0,
            kind,
        }
    }
}

/// One Euler step of the trader's filter. `dy = dS - alpha dt`; `v_i` is the
/// variance at the start of the step and `v_i_next` at its end.
pub fn update_trader_filter(
    state: &FilterState,
    dy: f64,
    dt: f64,
    v_i: f64,
    v_i_next: f64,
    params: &ModelParams,
) -> FilterState {
    let p = params.perm_impact;
    let gain = p * v_i / (params.sigma_s * params.sigma_s);
    let m = state.mean;
    FilterState {
        mean: m - params.theta_b * m * dt + gain * (dy - p * m * dt),
        variance: v_i_next,
        kind: state.kind,
    }
}

/// One Euler step of the broker's price-based filter. `dz = dS - p nu dt`.
pub fn update_broker_price_filter(
    state: &FilterState,
    dz: f64,
    dt: f64,
    v_b: f64,
    v_b_next: f64,
    params: &ModelParams,
) -> FilterState {
    let ss = params.sigma_s;
    let gain = (v_b + params.rho * ss * params.sigma_alpha) / (ss * ss);
    let m = state.mean;
    FilterState {
        mean: m - params.kappa_alpha * m * dt + gain * (dz - m * dt),
        variance: v_b_next,
        kind: state.kind,
    }
}

/// Deterministic coefficients of the flow-based filter.
///
/// Naming follows the observation `gamma = eta - f3 q_I = f1 alpha + f2 nu_hat`:
/// `d gamma = (g_alpha alpha + g0 gamma + g1 nu) dt + g3 dW_alpha + g4 dW_S`,
/// normalised by `g5 = |g3 dW_alpha + g4 dW_S| / sqrt(dt)`.
#[derive(Debug, Clone)]
pub struct FlowFilterCoefficients {
    pub g0: ScalarTable,
    pub g_alpha: ScalarTable,
    pub g1: ScalarTable,
    pub g3: ScalarTable,
    pub g4: ScalarTable,
    pub g5: ScalarTable,
    pub g3_dot: ScalarTable,
    pub g4_dot: ScalarTable,
    pub g6: ScalarTable,
    pub g7: ScalarTable,
    pub g8: ScalarTable,
    pub g9: ScalarTable,
    /// Correlation between the signal noise and the normalised observation noise.
    pub k: ScalarTable,
    /// Conditional variance of the flow-based estimate.
    pub variance: ScalarTable,
    pub kappa_alpha: f64,
    pub sigma_alpha: f64,
}

/// Builds the flow-filter tables from the broker's copy of the trader
/// coefficients and her learning parameters.
pub fn flow_filter_coefficients(
    trader: &TraderCoefficients,
    params: &ModelParams,
) -> Result<FlowFilterCoefficients> {
    let grid = *trader.grid();
    let n = grid.steps();
    let (p, b, ss, sa, rho) = (
        params.perm_impact,
        params.cost_informed,
        params.sigma_s,
        params.sigma_alpha,
        params.rho,
    );
    let (kappa, theta, sb) = (params.kappa_alpha, params.theta_b, params.sigma_b);
    let f1 = trader.f1.values();
    let f2 = trader.f2.values();
    let f3 = trader.f3.values();
    let v = trader.v_i.values();

    let mut g0 = vec![0.0; n + 1];
    let mut g_alpha = vec![0.0; n + 1];
    let mut g1 = vec![0.0; n + 1];
    let mut g3 = vec![0.0; n + 1];
    let mut g4 = vec![0.0; n + 1];
    let mut g5 = vec![0.0; n + 1];
    let mut g3_dot = vec![0.0; n + 1];
    let mut g4_dot = vec![0.0; n + 1];
    let mut g6 = vec![0.0; n + 1];
    let mut g7 = vec![0.0; n + 1];
    let mut g8 = vec![0.0; n + 1];
    let mut g9 = vec![0.0; n + 1];
    let mut k_corr = vec![0.0; n + 1];

    let norm = |x: f64, y: f64| (x * x + y * y + 2.0 * rho * x * y).max(0.0).sqrt();

    for i in 0..=n {
        g3[i] = sa * f1[i];
        g4[i] = p * v[i] * f2[i] / ss;
        g5[i] = norm(g3[i], g4[i]);
        g1[i] = p * p * v[i] * f2[i] / (ss * ss);
        g3_dot[i] = sa * (-1.0 / (2.0 * b) + kappa * f1[i] - f3[i] * f1[i] / 2.0);
        let v_dot = sb * sb - 2.0 * theta * v[i] - (p * v[i] / ss).powi(2);
        g4_dot[i] = p / ss
            * (v[i] * (-p / (2.0 * b) + theta * f2[i] - f3[i] * f2[i] / 2.0) + f2[i] * v_dot);
        if i == n {
            continue;
        }
        if p > 0.0 && f2[i] <= 0.0 {
            return Err(Error::FilterDegeneracy {
                t: grid.t(i),
                what: "f2 vanishes before the horizon",
            });
        }
        if g5[i] <= 0.0 {
            return Err(Error::FilterDegeneracy {
                t: grid.t(i),
                what: "observation noise vanishes before the horizon",
            });
        }
        // Without permanent impact the observation carries no nu_hat term.
        let nu_term = if p > 0.0 { p / (2.0 * f2[i] * b) } else { 0.0 };
        g0[i] = -p * p * v[i] / (ss * ss) - nu_term - f3[i] / 2.0;
        g_alpha[i] = -1.0 / (2.0 * b) - f1[i] * (f3[i] / 2.0 + g0[i]);
        let g5_sq = g5[i] * g5[i];
        g6[i] = -(g3_dot[i] * (g3[i] + rho * g4[i]) + g4_dot[i] * (rho * g3[i] + g4[i])) / g5_sq;
        g7[i] = g_alpha[i] / g5[i];
        g8[i] = g0[i] / g5[i];
        g9[i] = g1[i] / g5[i];
        k_corr[i] = (g3[i] + rho * g4[i]) / g5[i];
    }

    // At the horizon f1 = f2 = 0, so g3 = g4 = g5 = 0. Ratios with a finite
    // limit use the derivatives; the divergent ones reuse the last interior
    // value.
    let slope = norm(g3_dot[n], g4_dot[n]);
    if slope > 0.0 {
        k_corr[n] = -(g3_dot[n] + rho * g4_dot[n]) / slope;
        let g1_dot = p * p / (ss * ss) * v[n] * (-p / (2.0 * b));
        g9[n] = -g1_dot / slope;
    } else {
        k_corr[n] = k_corr[n - 1];
        g9[n] = g9[n - 1];
    }
    g0[n] = g0[n - 1];
    g_alpha[n] = g_alpha[n - 1];
    g6[n] = g6[n - 1];
    g7[n] = g7[n - 1];
    g8[n] = g8[n - 1];

    let mk = |name: &str, values: Vec<f64>| Table::from_values(name, grid, values);
    let g7 = mk("g7", g7)?;
    let k = mk("k", k_corr)?;
    let variance = flow_variance(&g7, &k, kappa, sa)?;
    Ok(FlowFilterCoefficients {
        g0: mk("g0", g0)?,
        g_alpha: mk("g_alpha", g_alpha)?,
        g1: mk("g1", g1)?,
        g3: mk("g3", g3)?,
        g4: mk("g4", g4)?,
        g5: mk("g5", g5)?,
        g3_dot: mk("g3_dot", g3_dot)?,
        g4_dot: mk("g4_dot", g4_dot)?,
        g6: mk("g6", g6)?,
        g7,
        g8: mk("g8", g8)?,
        g9: mk("g9", g9)?,
        k,
        variance,
        kappa_alpha: kappa,
        sigma_alpha: sa,
    })
}

/// Conditional variance of the flow-based estimate, integrated forward from 0:
/// `V' = sigma_alpha^2 - 2 kappa V - (g7 V + sigma_alpha k)^2`.
pub fn flow_variance(
    g7: &ScalarTable,
    k: &ScalarTable,
    kappa: f64,
    sigma_alpha: f64,
) -> Result<ScalarTable> {
    let sa = sigma_alpha;
    rk4_integrate(
        "v_alt",
        |t, &x: &f64| {
            let gain = g7.value(t) * x + sa * k.value(t);
            sa * sa - 2.0 * kappa * x - gain * gain
        },
        0.0,
        g7.grid(),
        Direction::Forward,
    )
}

impl FlowFilterCoefficients {
    pub fn grid(&self) -> &TimeGrid {
        self.g5.grid()
    }

    /// Observation increment over step `k` built from consecutive values of
    /// `gamma` and the broker's rate. `None` on the last step, where the
    /// normalisation vanishes.
    pub fn observation_increment(
        &self,
        k: usize,
        gamma: f64,
        gamma_next: f64,
        nu: f64,
    ) -> Option<f64> {
        let n = self.grid().steps();
        if k + 1 >= n {
            return None;
        }
        let dt = self.grid().dt();
        let z = gamma / self.g5.at(k);
        let z_next = gamma_next / self.g5.at(k + 1);
        let drift = self.g6.at(k) * z + self.g8.at(k) * gamma + self.g9.at(k) * nu;
        Some(z_next - z - drift * dt)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_tables_csv(
            out,
            &[
                &self.g0,
                &self.g_alpha,
                &self.g1,
                &self.g3,
                &self.g4,
                &self.g5,
                &self.g6,
                &self.g7,
                &self.g8,
                &self.g9,
                &self.k,
                &self.variance,
            ],
        )
    }
}

/// One Euler step of the flow-based filter over `[t_k, t_k+1]`. A missing
/// observation increment leaves only the mean-reverting drift.
pub fn update_broker_flow_filter(
    state: &FilterState,
    dz: Option<f64>,
    dt: f64,
    flow: &FlowFilterCoefficients,
    k: usize,
) -> Result<FilterState> {
    let m = state.mean;
    let mut mean = m - flow.kappa_alpha * m * dt;
    if let Some(dz) = dz {
        let innovation = dz - flow.g7.at(k) * m * dt;
        let gain = flow.g7.at(k) * flow.variance.at(k) + flow.sigma_alpha * flow.k.at(k);
        mean += gain * innovation;
    }
    if !mean.is_finite() {
        return Err(Error::FilterDegeneracy {
            t: flow.grid().t(k),
            what: "flow filter mean is not finite",
        });
    }
    Ok(FilterState {
        mean,
        variance: flow.variance.at((k + 1).min(flow.grid().steps())),
        kind: state.kind,
    })
}

/// Signal estimate obtained by inverting the trader's rule with the
/// `nu_hat` term dropped.
///
/// Times in the last grid interval use the coefficients of the last interior
/// point, since `f1` vanishes at the horizon.
pub fn naive_alpha(t: f64, eta: f64, q_i_belief: f64, trader: &TraderCoefficients) -> Result<f64> {
    let grid = trader.grid();
    let last_interior = grid.t(grid.steps() - 1);
    let (f1, f3) = if t > last_interior && t <= grid.horizon() {
        (
            trader.f1.at(grid.steps() - 1),
            trader.f3.at(grid.steps() - 1),
        )
    } else {
        (trader.f1.eval(t)?, trader.f3.eval(t)?)
    };
    naive_from(f1, f3, eta, q_i_belief, t)
}

/// Grid-index version of [`naive_alpha`].
pub fn naive_alpha_at(
    k: usize,
    eta: f64,
    q_i_belief: f64,
    trader: &TraderCoefficients,
) -> Result<f64> {
    let k = k.min(trader.grid().steps() - 1);
    naive_from(
        trader.f1.at(k),
        trader.f3.at(k),
        eta,
        q_i_belief,
        trader.grid().t(k),
    )
}

fn naive_from(f1: f64, f3: f64, eta: f64, q: f64, t: f64) -> Result<f64> {
    if f1.abs() < 1e-14 {
        return Err(Error::FilterDegeneracy {
            t,
            what: "f1 vanishes in the naive estimate",
        });
    }
    Ok((eta - f3 * q) / f1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trader::AdmissibilityPolicy;

    #[test]
    fn fixed_points() {
        let params = ModelParams::default();
        let s = FilterState::new(FilterKind::TraderNu);
        assert_eq!(
            update_trader_filter(&s, 0.0, 1e-3, 100.0, 100.0, &params).mean,
            0.0
        );
        let s = FilterState::new(FilterKind::BrokerPrice);
        assert_eq!(
            update_broker_price_filter(&s, 0.0, 1e-3, 0.05, 0.05, &params).mean,
            0.0
        );
    }

    #[test]
    fn price_filter_arithmetic() {
        let params = ModelParams {
            rho: 0.3,
            sigma_s: 1.7,
            ..Default::default()
        };
        let s = FilterState {
            mean: 0.4,
            variance: 0.08,
            kind: FilterKind::BrokerPrice,
        };
        let (dz, dt, v) = (0.013, 1e-3, 0.08);
        let out = update_broker_price_filter(&s, dz, dt, v, 0.081, &params);
        let gain = (v + 0.3 * 1.7 * 1.0) / (1.7 * 1.7);
        let expected = 0.4 - 5.0 * 0.4 * dt + gain * (dz - 0.4 * dt);
        assert!((out.mean - expected).abs() < 1e-15);
        assert_eq!(out.variance, 0.081);
    }

    #[test]
    fn flow_coefficients_are_normalised() {
        let params = ModelParams::default();
        let grid = TimeGrid::new(1.0, 500).unwrap();
        let trader =
            TraderCoefficients::solve(&params, &grid, AdmissibilityPolicy::Strict).unwrap();
        let flow = flow_filter_coefficients(&trader, &params).unwrap();
        for i in 0..grid.steps() {
            let k = flow.k.at(i);
            let other = flow.g4.at(i) / flow.g5.at(i);
            assert!((k * k + other * other - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&k));
        }
        assert!(flow.variance.values().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn naive_bias_identity() {
        let params = ModelParams::default();
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let trader =
            TraderCoefficients::solve(&params, &grid, AdmissibilityPolicy::Strict).unwrap();
        let (alpha, nu_hat, q) = (0.7, -3.0, 1.5);
        let t = 0.42;
        let eta = trader.control(t, alpha, nu_hat, q).unwrap();
        let naive = naive_alpha(t, eta, q, &trader).unwrap();
        let ratio = trader.f2.eval(t).unwrap() / trader.f1.eval(t).unwrap();
        assert!((naive - (alpha + ratio * nu_hat)).abs() < 1e-10);
    }
}
