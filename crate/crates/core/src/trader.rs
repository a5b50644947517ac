//! The informed trader's value-function coefficients and his feedback control.

use std::io::Write;

use nalgebra::SVector;

use crate::error::{Error, Result};
use crate::numerics::{
    rk4_integrate, solve_scalar_riccati, solve_scalar_riccati_refined, write_tables_csv, Direction,
    ScalarTable, TimeFn, TimeGrid, VARIANCE_SUBSTEPS,
};
use crate::params::ModelParams;

/// How a violated `1 + b f3 > 0` condition is reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AdmissibilityPolicy {
    /// Abort with [`Error::Admissibility`].
    #[default]
    Strict,
    /// Record the violation in [`TraderCoefficients::admissible`] and continue.
    Warn,
}

/// Solved deterministic coefficients of the informed trader.
#[derive(Debug, Clone)]
pub struct TraderCoefficients {
    pub v_i: ScalarTable,
    pub g2: ScalarTable,
    /// `z1 ... z8` in order.
    pub z: [ScalarTable; 8],
    pub f1: ScalarTable,
    pub f2: ScalarTable,
    pub f3: ScalarTable,
    /// Whether `1 + b f3(t) > 0` holds on the whole grid.
    pub admissible: bool,
}

/// Variance of the trader's estimate of the broker's rate, from `V(0) = 0`.
pub fn compute_v_i(params: &ModelParams, grid: &TimeGrid) -> Result<ScalarTable> {
    let q = -(params.perm_impact / params.sigma_s).powi(2);
    let l = -2.0 * params.theta_b;
    let c = params.sigma_b * params.sigma_b;
    solve_scalar_riccati_refined(
        "v_i",
        &q,
        &l,
        &c,
        0.0,
        grid,
        Direction::Forward,
        VARIANCE_SUBSTEPS,
    )
}

/// Quadratic inventory coefficient of the trader's value function.
pub fn compute_g2(params: &ModelParams, v_i: &ScalarTable, grid: &TimeGrid) -> Result<ScalarTable> {
    let risk = params.risk_informed;
    let b = params.cost_informed;
    let running = |t: f64| -risk.running(v_i.value(t));
    let terminal = -risk.terminal(v_i.last());
    let g2 = solve_scalar_riccati(
        "g2",
        &(1.0 / b),
        &0.0,
        &running,
        terminal,
        grid,
        Direction::Backward,
    )?;
    let strictly_negative_source =
        terminal < 0.0 || risk.rho0 > 0.0 || (risk.rho1 > 0.0 && v_i.max_abs() > 0.0);
    let last = grid.steps();
    for (k, &v) in g2.values().iter().enumerate() {
        let bad = v > 0.0 || (k < last && strictly_negative_source && v >= 0.0);
        if bad {
            return Err(Error::ModelInconsistency(format!(
                "g2 must be negative, found {v} at t = {}",
                grid.t(k)
            )));
        }
    }
    Ok(g2)
}

/// The eight linear coefficients `z1 ... z8`, all vanishing at `T`.
pub fn compute_z(
    params: &ModelParams,
    g2: &ScalarTable,
    v_i: &ScalarTable,
    grid: &TimeGrid,
) -> Result<[ScalarTable; 8]> {
    let b = params.cost_informed;
    let p = params.perm_impact;
    let kappa = params.kappa_alpha;
    let theta = params.theta_b;
    let (sa, ss, rho) = (params.sigma_alpha, params.sigma_s, params.rho);
    // Indices 0..8 hold z1..z8. The system is triangular, so integrating it
    // jointly is equivalent to solving it block by block.
    let rhs = |t: f64, z: &SVector<f64, 8>| {
        let g = g2.value(t);
        let v = v_i.value(t);
        let damp = g / (2.0 * b);
        let (z1, z2) = (z[0], z[1]);
        let z6 = z[5];
        let z7 = z[6];
        let z8 = z[7];
        let gain = p * v / ss;
        SVector::<f64, 8>::from([
            -1.0 + kappa * z1 - damp * z1,
            -p + theta * z2 - damp * z2,
            -(gain * sa * rho * z6 + sa * sa * z7 + gain * gain * z8),
            -damp * z1 + kappa * z[3],
            -damp * z2 + theta * z[4],
            -z1 * z2 / (2.0 * b) + (kappa + theta) * z6,
            -z1 * z1 / (4.0 * b) + 2.0 * kappa * z7,
            -z2 * z2 / (4.0 * b) + 2.0 * theta * z8,
        ])
    };
    let joint = rk4_integrate(
        "z",
        rhs,
        SVector::<f64, 8>::zeros(),
        grid,
        Direction::Backward,
    )?;
    let tables: [ScalarTable; 8] =
        std::array::from_fn(|i| joint.map(format!("z{}", i + 1), move |v: SVector<f64, 8>| v[i]));
    for (name, table) in [("z1", &tables[0]), ("z2", &tables[1])] {
        if let Some(k) = table.values().iter().position(|&v| v < 0.0) {
            return Err(Error::ModelInconsistency(format!(
                "{name} must be non-negative, found {} at t = {}",
                table.at(k),
                grid.t(k)
            )));
        }
    }
    Ok(tables)
}

impl TraderCoefficients {
    /// Solves the whole trader system for `params` on `grid`.
    pub fn solve(
        params: &ModelParams,
        grid: &TimeGrid,
        policy: AdmissibilityPolicy,
    ) -> Result<Self> {
        params.validate()?;
        let b = params.cost_informed;
        let v_i = compute_v_i(params, grid)?;
        let g2 = compute_g2(params, &v_i, grid)?;
        let z = compute_z(params, &g2, &v_i, grid)?;
        let f1 = z[0].map("f1", |v| v / (2.0 * b));
        let f2 = z[1].map("f2", |v| v / (2.0 * b));
        let f3 = g2.map("f3", |v| v / b);
        let mut admissible = true;
        for (k, &f) in f3.values().iter().enumerate() {
            let margin = 1.0 + b * f;
            if margin <= 0.0 {
                admissible = false;
                if policy == AdmissibilityPolicy::Strict {
                    return Err(Error::Admissibility {
                        t: grid.t(k),
                        what: "1 + b f3",
                        value: margin,
                    });
                }
            }
        }
        Ok(TraderCoefficients {
            v_i,
            g2,
            z,
            f1,
            f2,
            f3,
            admissible,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.v_i.grid()
    }

    /// Optimal rate at an arbitrary time in `[0, T]`.
    pub fn control(&self, t: f64, alpha: f64, nu_hat: f64, q_i: f64) -> Result<f64> {
        Ok(self.f1.eval(t)? * alpha + self.f2.eval(t)? * nu_hat + self.f3.eval(t)? * q_i)
    }

    /// Optimal rate at grid index `k`.
    pub fn control_at(&self, k: usize, alpha: f64, nu_hat: f64, q_i: f64) -> f64 {
        self.f1.at(k) * alpha + self.f2.at(k) * nu_hat + self.f3.at(k) * q_i
    }

    /// Writes `t, v_i, g2, z1..z8, f1, f2, f3`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut cols: Vec<&ScalarTable> = vec![&self.v_i, &self.g2];
        cols.extend(self.z.iter());
        cols.extend([&self.f1, &self.f2, &self.f3]);
        write_tables_csv(out, &cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve_default() -> TraderCoefficients {
        TraderCoefficients::solve(
            &ModelParams::default(),
            &TimeGrid::default(),
            AdmissibilityPolicy::Strict,
        )
        .unwrap()
    }

    #[test]
    fn sign_structure_on_grid() {
        let c = solve_default();
        let n = c.grid().steps();
        assert!(c.g2.values()[..n].iter().all(|&v| v < 0.0));
        assert!(c.z[0].values().iter().all(|&v| v >= 0.0));
        assert!(c.z[1].values().iter().all(|&v| v >= 0.0));
        assert!(c.admissible);
    }

    #[test]
    fn terminal_values() {
        let c = solve_default();
        for z in &c.z {
            assert_eq!(z.last(), 0.0);
        }
        assert_eq!(c.control_at(c.grid().steps(), 3.0, -2.0, 0.0), 0.0);
    }

    #[test]
    fn control_is_linear() {
        let c = solve_default();
        let t = 0.37;
        let x = c.control(t, 1.3, -0.4, 2.0).unwrap();
        let sum = c.control(t, 1.3, 0.0, 0.0).unwrap()
            + c.control(t, 0.0, -0.4, 0.0).unwrap()
            + c.control(t, 0.0, 0.0, 2.0).unwrap();
        assert!((x - sum).abs() < 1e-12);
    }

    #[test]
    fn long_inventory_is_sold() {
        let c = solve_default();
        assert!(c.control(0.5, 0.0, 0.0, 1.0).unwrap() < 0.0);
        assert_eq!(c.control(0.5, 0.0, 0.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn inadmissible_fee_detected() {
        // A terminal penalty far above the fee pushes b f3 below -1.
        let mut p = ModelParams {
            cost_informed: 1.0,
            ..ModelParams::default()
        };
        p.risk_informed.beta0 = 10.0;
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let err = TraderCoefficients::solve(&p, &grid, AdmissibilityPolicy::Strict).unwrap_err();
        assert!(matches!(err, Error::Admissibility { .. }), "{err}");
        let warned = TraderCoefficients::solve(&p, &grid, AdmissibilityPolicy::Warn).unwrap();
        assert!(!warned.admissible);
    }
}
