//! The broker's value-function coefficients and her feedback control.
//!
//! The broker's state is `y = (q_B, alpha_hat, xi, q_I)`.

use std::io::Write;

use nalgebra::{Matrix2, Matrix4, RowVector4, SymmetricEigen, Vector4};

use crate::error::{Error, Result};
use crate::numerics::{
    fmt_f64, rk4_integrate, rk4_integrate_projected, solve_scalar_riccati_refined, Direction,
    ScalarTable, Table, TimeFn, TimeGrid, VARIANCE_SUBSTEPS,
};
use crate::params::ModelParams;
use crate::trader::TraderCoefficients;

/// Variance of the broker's price-based estimate of the signal, from `V(0) = 0`.
pub fn compute_v_b_price(params: &ModelParams, grid: &TimeGrid) -> Result<ScalarTable> {
    let (ss, sa, rho) = (params.sigma_s, params.sigma_alpha, params.rho);
    let q = -1.0 / (ss * ss);
    let l = 2.0 * (-params.kappa_alpha - rho * sa / ss);
    let c = (1.0 - rho * rho) * sa * sa;
    solve_scalar_riccati_refined(
        "v_b",
        &q,
        &l,
        &c,
        0.0,
        grid,
        Direction::Forward,
        VARIANCE_SUBSTEPS,
    )
}

/// Trader coefficients and filter variance at one instant, as the broker sees
/// them. `f2` is the raw trader coefficient; the belief scale is applied when
/// the matrices are built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrokerInputs {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
    pub v_b: f64,
}

impl BrokerInputs {
    /// Linear interpolation of the tables at `t`.
    pub fn at_time(trader: &TraderCoefficients, v_b: &ScalarTable, t: f64) -> Result<Self> {
        Ok(BrokerInputs {
            f1: trader.f1.eval(t)?,
            f2: trader.f2.eval(t)?,
            f3: trader.f3.eval(t)?,
            v_b: v_b.eval(t)?,
        })
    }

    fn sample(trader: &TraderCoefficients, v_b: &ScalarTable, t: f64) -> Self {
        BrokerInputs {
            f1: trader.f1.value(t),
            f2: trader.f2.value(t),
            f3: trader.f3.value(t),
            v_b: v_b.value(t),
        }
    }

    fn at_index(trader: &TraderCoefficients, v_b: &ScalarTable, k: usize) -> Self {
        BrokerInputs {
            f1: trader.f1.at(k),
            f2: trader.f2.at(k),
            f3: trader.f3.at(k),
            v_b: v_b.at(k),
        }
    }
}

/// Coefficient matrices of the broker's polynomial value function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PMatrices {
    pub p2: Matrix4<f64>,
    pub p5: Matrix4<f64>,
    pub p7: RowVector4<f64>,
    pub p8: RowVector4<f64>,
    pub p9: Matrix4<f64>,
    /// `a - b f2^2` with the belief-scaled `f2`.
    pub denom: f64,
}

fn effective_denominator(params: &ModelParams, f2: f64) -> Result<f64> {
    let denom = params.cost_broker - f2 * f2 * params.cost_informed;
    if denom > 0.0 {
        Ok(denom)
    } else {
        Err(Error::Admissibility {
            t: f64::NAN,
            what: "a - b f2^2",
            value: denom,
        })
    }
}

/// Builds `P2, P5, P7, P8, P9` from the instantaneous inputs.
pub fn build_p_matrices(inputs: &BrokerInputs, params: &ModelParams) -> Result<PMatrices> {
    let BrokerInputs { f1, f3, v_b, .. } = *inputs;
    let f2 = params.c_belief * inputs.f2;
    let (p, b, c) = (
        params.perm_impact,
        params.cost_informed,
        params.cost_uninformed,
    );
    let denom = effective_denominator(params, f2)?;
    let root = denom.sqrt();
    let k = params.kappa_alpha;
    let ku = params.kappa_u;
    #[rustfmt::skip]
    let p2 = Matrix4::new(
        0.0, 0.0, 0.0, 0.0,
        -f1, -k, 0.0, f1,
        -1.0, 0.0, -ku, 0.0,
        -f3, 0.0, 0.0, f3,
    );
    let running = params.risk_broker.running(v_b);
    #[rustfmt::skip]
    let p5 = Matrix4::new(
        -running, 0.5, 0.0, 0.0,
        0.5, f1 * f1 * b, 0.0, f1 * f3 * b,
        0.0, 0.0, c, 0.0,
        0.0, f1 * f3 * b, 0.0, f3 * f3 * b,
    );
    let p7 = RowVector4::new(p / 2.0, f1 * f2 * b, 0.0, f2 * f3 * b) / root;
    let p8 = RowVector4::new(1.0 - f2, 0.0, 0.0, f2) / (2.0 * root);
    let p9 = 2.0 * p8.transpose() * p7 + p2.transpose();
    Ok(PMatrices {
        p2,
        p5,
        p7,
        p8,
        p9,
        denom,
    })
}

impl PMatrices {
    /// Right-hand side `dG2/dt` of the full matrix Riccati equation.
    pub fn riccati_rhs(&self, g: &Matrix4<f64>) -> Matrix4<f64> {
        let p8g = self.p8 * g;
        -(self.p7.transpose() * self.p7
            + 4.0 * p8g.transpose() * p8g
            + g * self.p9
            + self.p9.transpose() * g
            + self.p5)
    }

    /// Feedback row: `nu = gain . y`.
    pub fn feedback(&self, g: &Matrix4<f64>) -> RowVector4<f64> {
        (self.p7 + 2.0 * self.p8 * g) / self.denom.sqrt()
    }
}

/// Matrices of the 2x2 Riccati equation for the `(q_B, q_I)` block of `G2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedMatrices {
    pub u: Matrix2<f64>,
    pub v: Matrix2<f64>,
    pub b: Matrix2<f64>,
}

pub fn reduced_matrices(inputs: &BrokerInputs, params: &ModelParams) -> Result<ReducedMatrices> {
    let BrokerInputs { f3, v_b, .. } = *inputs;
    let f2 = params.c_belief * inputs.f2;
    let (p, a, b) = (params.perm_impact, params.cost_broker, params.cost_informed);
    let d = effective_denominator(params, f2)?;
    let running = params.risk_broker.running(v_b);
    let u = Matrix2::new(
        (1.0 - f2) * (1.0 - f2),
        f2 * (1.0 - f2),
        f2 * (1.0 - f2),
        f2 * f2,
    ) / d;
    let v = Matrix2::new(
        p * (1.0 - f2) / 2.0,
        -f3 * (a - f2 * b),
        p * f2 / 2.0,
        a * f3,
    ) / d;
    let off = p * f2 * f3 * b / 2.0;
    let bm = Matrix2::new(p * p / 4.0 - d * running, off, off, f3 * f3 * a * b) / d;
    Ok(ReducedMatrices { u, v, b: bm })
}

impl ReducedMatrices {
    pub fn riccati_rhs(&self, g: &Matrix2<f64>) -> Matrix2<f64> {
        -(g * self.u * g + g * self.v + self.v.transpose() * g + self.b)
    }

    /// `L + L^T` from the existence argument, with `C = diag(0, 1)`.
    pub fn existence_matrix(&self) -> Matrix4<f64> {
        let c = Matrix2::new(0.0, 0.0, 0.0, 1.0);
        let top_left = c * self.v + self.v.transpose() * c + 2.0 * self.b;
        let top_right = c * self.u;
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&top_left);
        m.fixed_view_mut::<2, 2>(0, 2).copy_from(&top_right);
        m.fixed_view_mut::<2, 2>(2, 0)
            .copy_from(&top_right.transpose());
        m.fixed_view_mut::<2, 2>(2, 2).copy_from(&(-2.0 * self.u));
        m
    }
}

/// Eigenvalues of the existence matrix at one instant.
///
/// The eigenvalue closest to zero (the one forced by the rank-one structure)
/// is reported last; the other three are sorted in descending order.
pub fn existence_eigenvalues(m: &Matrix4<f64>) -> Vector4<f64> {
    let eig = SymmetricEigen::new(*m).eigenvalues;
    let mut vals: Vec<f64> = eig.iter().copied().collect();
    let zero_idx = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .map(|(i, _)| i)
        .unwrap_or(3);
    let zero = vals.remove(zero_idx);
    vals.sort_by(|a, b| b.total_cmp(a));
    Vector4::new(vals[0], vals[1], vals[2], zero)
}

/// Determinant after dividing every row by its largest absolute entry.
pub fn row_scaled_determinant(m: &Matrix4<f64>) -> f64 {
    let mut s = *m;
    for mut row in s.row_iter_mut() {
        let scale = row.amax();
        if scale > 0.0 {
            row /= scale;
        }
    }
    s.determinant()
}

/// Existence diagnostic over the whole grid.
#[derive(Debug, Clone)]
pub struct ExistenceDiagnostic {
    pub eigenvalues: Table<Vector4<f64>>,
    pub scaled_det: ScalarTable,
    /// Grid indices where the leading three eigenvalues are not below
    /// `-1e-6` or the fourth exceeds `1e-8` in magnitude.
    pub flagged: Vec<usize>,
}

pub fn existence_diagnostic(
    params: &ModelParams,
    trader: &TraderCoefficients,
    v_b: &ScalarTable,
) -> Result<ExistenceDiagnostic> {
    let grid = *v_b.grid();
    let mut eigen = Vec::with_capacity(grid.len());
    let mut dets = Vec::with_capacity(grid.len());
    let mut flagged = Vec::new();
    for k in 0..grid.len() {
        let m = reduced_matrices(&BrokerInputs::at_index(trader, v_b, k), params)
            .map_err(|e| with_time(e, grid.t(k)))?
            .existence_matrix();
        let ev = existence_eigenvalues(&m);
        if ev[0] >= -1e-6 || ev[1] >= -1e-6 || ev[2] >= -1e-6 || ev[3].abs() > 1e-8 {
            flagged.push(k);
        }
        eigen.push(ev);
        dets.push(row_scaled_determinant(&m));
    }
    Ok(ExistenceDiagnostic {
        eigenvalues: Table::from_values("eigenvalues", grid, eigen)?,
        scaled_det: Table::from_values("scaled_det", grid, dets)?,
        flagged,
    })
}

fn with_time(e: Error, t: f64) -> Error {
    match e {
        Error::Admissibility { what, value, .. } => Error::Admissibility { t, what, value },
        other => other,
    }
}

fn symmetrize4(g: Matrix4<f64>) -> Matrix4<f64> {
    (g + g.transpose()) * 0.5
}

fn symmetrize2(g: Matrix2<f64>) -> Matrix2<f64> {
    (g + g.transpose()) * 0.5
}

fn existence_error(e: Error) -> Error {
    match e {
        Error::IntegrationBlowup { t, .. } => Error::ExistenceViolation { t },
        other => other,
    }
}

/// Solved deterministic coefficients of the broker.
#[derive(Debug, Clone)]
pub struct BrokerCoefficients {
    pub v_b: ScalarTable,
    /// Symmetric 4x4 quadratic coefficient; the `(q_B, q_I)` block comes from
    /// the reduced 2x2 solve, the rest from the full 4x4 solve.
    pub g2: Table<Matrix4<f64>>,
    /// Independent 4x4 solve, kept for the consistency check.
    pub g2_full: Table<Matrix4<f64>>,
    pub g2_reduced: Table<Matrix2<f64>>,
    pub g0: ScalarTable,
    pub c_belief: f64,
    /// Feedback row at every grid point.
    pub gain: Table<RowVector4<f64>>,
    pub existence: ExistenceDiagnostic,
    /// Largest absolute difference between reduced and full solves.
    pub reduction_gap: f64,
}

/// Terminal value of `G2`.
pub fn terminal_g2(params: &ModelParams, v_b_terminal: f64) -> Matrix4<f64> {
    let mut g = Matrix4::zeros();
    g[(0, 0)] = -params.risk_broker.terminal(v_b_terminal);
    g
}

impl BrokerCoefficients {
    /// Solves the broker system. `params` and `trader` are the broker's model
    /// of the world (her learning parameters and her copy of the trader's
    /// coefficients).
    pub fn solve(
        params: &ModelParams,
        trader: &TraderCoefficients,
        v_b: &ScalarTable,
    ) -> Result<Self> {
        params.validate()?;
        let grid = *v_b.grid();
        if trader.grid() != &grid {
            return Err(Error::ModelInconsistency(
                "trader and broker grids differ".into(),
            ));
        }
        for k in 0..grid.len() {
            build_p_matrices(&BrokerInputs::at_index(trader, v_b, k), params)
                .map_err(|e| with_time(e, grid.t(k)))?;
        }
        let terminal = terminal_g2(params, v_b.last());

        let full = rk4_integrate_projected(
            "g2",
            |t, g: &Matrix4<f64>| {
                build_p_matrices(&BrokerInputs::sample(trader, v_b, t), params)
                    .expect("checked on grid")
                    .riccati_rhs(g)
            },
            terminal,
            &grid,
            Direction::Backward,
            symmetrize4,
        )
        .map_err(existence_error)?;

        let reduced_terminal = Matrix2::new(terminal[(0, 0)], 0.0, 0.0, 0.0);
        let reduced = rk4_integrate_projected(
            "g2_reduced",
            |t, g: &Matrix2<f64>| {
                reduced_matrices(&BrokerInputs::sample(trader, v_b, t), params)
                    .expect("checked on grid")
                    .riccati_rhs(g)
            },
            reduced_terminal,
            &grid,
            Direction::Backward,
            symmetrize2,
        )
        .map_err(existence_error)?;

        let mut gap: f64 = 0.0;
        let embedded: Vec<Matrix4<f64>> = full
            .values()
            .iter()
            .zip(reduced.values())
            .map(|(f, r)| {
                let mut g = *f;
                for (i, j, ri, rj) in [(0, 0, 0, 0), (0, 3, 0, 1), (3, 0, 1, 0), (3, 3, 1, 1)] {
                    gap = gap.max((g[(i, j)] - r[(ri, rj)]).abs());
                    g[(i, j)] = r[(ri, rj)];
                }
                g
            })
            .collect();
        let g2 = Table::from_values("g2", grid, embedded)?;

        let (ss, sa, rho, su) = (
            params.sigma_s,
            params.sigma_alpha,
            params.rho,
            params.sigma_u,
        );
        let g0 = rk4_integrate(
            "g0",
            |t, _: &f64| {
                let g = g2.sample(t);
                let vol = (v_b.value(t) + rho * ss * sa) / ss;
                -(vol * vol * g[(1, 1)] + su * su * g[(2, 2)])
            },
            0.0,
            &grid,
            Direction::Backward,
        )?;

        let gain = Table::from_values(
            "gain",
            grid,
            (0..grid.len())
                .map(|k| {
                    build_p_matrices(&BrokerInputs::at_index(trader, v_b, k), params)
                        .expect("checked on grid")
                        .feedback(&g2.at(k))
                })
                .collect(),
        )?;

        let existence = existence_diagnostic(params, trader, v_b)?;
        Ok(BrokerCoefficients {
            v_b: v_b.clone(),
            g2,
            g2_full: full,
            g2_reduced: reduced,
            g0,
            c_belief: params.c_belief,
            gain,
            existence,
            reduction_gap: gap,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.v_b.grid()
    }

    /// Per-coordinate contributions to the broker's rate at time `t`.
    pub fn control_components(&self, t: f64, y: &Vector4<f64>) -> Result<Vector4<f64>> {
        let g = self.gain.eval(t)?;
        Ok(g.transpose().component_mul(y))
    }

    /// The broker's optimal rate at time `t`.
    pub fn control(&self, t: f64, y: &Vector4<f64>) -> Result<f64> {
        Ok((self.gain.eval(t)? * y)[0])
    }

    pub fn control_at(&self, k: usize, y: &Vector4<f64>) -> f64 {
        (self.gain.at(k) * y)[0]
    }

    /// Maximum `|G2 - G2^T|` entry over the grid.
    pub fn max_asymmetry(&self) -> f64 {
        self.g2
            .values()
            .iter()
            .map(|g| (g - g.transpose()).amax())
            .fold(0.0, f64::max)
    }

    /// Writes `t`, the ten distinct `G2` entries, `g0` and `v_b`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "t")?;
        for i in 0..4 {
            for j in i..4 {
                write!(out, ",g2_{}{}", i + 1, j + 1)?;
            }
        }
        writeln!(out, ",g0,v_b")?;
        let grid = self.grid();
        for k in 0..grid.len() {
            write!(out, "{}", fmt_f64(grid.t(k)))?;
            let g = self.g2.at(k);
            for i in 0..4 {
                for j in i..4 {
                    write!(out, ",{}", fmt_f64(g[(i, j)]))?;
                }
            }
            writeln!(
                out,
                ",{},{}",
                fmt_f64(self.g0.at(k)),
                fmt_f64(self.v_b.at(k))
            )?;
        }
        Ok(())
    }
}

impl ExistenceDiagnostic {
    /// Writes `t, lambda1..lambda4, scaled_det`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,lambda1,lambda2,lambda3,lambda4,scaled_det")?;
        let grid = self.eigenvalues.grid();
        for k in 0..grid.len() {
            let e = self.eigenvalues.at(k);
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt_f64(grid.t(k)),
                fmt_f64(e[0]),
                fmt_f64(e[1]),
                fmt_f64(e[2]),
                fmt_f64(e[3]),
                fmt_f64(self.scaled_det.at(k))
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trader::AdmissibilityPolicy;

    fn inputs() -> BrokerInputs {
        BrokerInputs {
            f1: 0.3,
            f2: 0.02,
            f3: -50.0,
            v_b: 0.09,
        }
    }

    #[test]
    fn p5_is_symmetric_and_p9_matches_definition() {
        let p = build_p_matrices(&inputs(), &ModelParams::default()).unwrap();
        assert_eq!(p.p5, p.p5.transpose());
        let direct = 2.0 * p.p8.transpose() * p.p7 + p.p2.transpose();
        assert!((direct - p.p9).amax() < 1e-14);
    }

    #[test]
    fn zero_impact_kills_p7() {
        let params = ModelParams {
            perm_impact: 0.0,
            ..Default::default()
        };
        let mut x = inputs();
        x.f2 = 0.0;
        let p = build_p_matrices(&x, &params).unwrap();
        assert_eq!(p.p7, RowVector4::zeros());
        let root = params.cost_broker.sqrt();
        assert_eq!(p.p8, RowVector4::new(1.0 / (2.0 * root), 0.0, 0.0, 0.0));
    }

    #[test]
    fn denominator_guard() {
        let mut x = inputs();
        x.f2 = 2.0;
        let err = build_p_matrices(&x, &ModelParams::default()).unwrap_err();
        assert!(matches!(err, Error::Admissibility { .. }));
    }

    #[test]
    fn reduced_block_matches_full_rhs() {
        let params = ModelParams::default();
        let x = inputs();
        let p = build_p_matrices(&x, &params).unwrap();
        let r = reduced_matrices(&x, &params).unwrap();
        let g = Matrix4::new(
            -0.1, 0.2, 0.05, 0.03, 0.2, 0.4, 0.0, -0.1, 0.05, 0.0, 0.3, 0.02, 0.03, -0.1, 0.02,
            -0.07,
        );
        let full = p.riccati_rhs(&g);
        let gr = Matrix2::new(g[(0, 0)], g[(0, 3)], g[(3, 0)], g[(3, 3)]);
        let red = r.riccati_rhs(&gr);
        for (i, j, ri, rj) in [(0, 0, 0, 0), (0, 3, 0, 1), (3, 3, 1, 1)] {
            let scale = full[(i, j)].abs().max(1.0);
            assert!(
                (full[(i, j)] - red[(ri, rj)]).abs() < 1e-10 * scale,
                "({i},{j})"
            );
        }
    }

    #[test]
    fn eigen_ordering_puts_zero_last() {
        let m = Matrix4::from_diagonal(&Vector4::new(-3.0, 0.0, -1.0, -2.0));
        let ev = existence_eigenvalues(&m);
        assert_eq!(ev, Vector4::new(-1.0, -2.0, -3.0, 0.0));
    }

    #[test]
    fn default_solution_is_symmetric_with_terminal_corner() {
        let params = ModelParams::default();
        let grid = TimeGrid::new(1.0, 200).unwrap();
        let trader =
            TraderCoefficients::solve(&params, &grid, AdmissibilityPolicy::Strict).unwrap();
        let v_b = compute_v_b_price(&params, &grid).unwrap();
        let broker = BrokerCoefficients::solve(&params, &trader, &v_b).unwrap();
        assert!(broker.max_asymmetry() < 1e-10);
        assert_eq!(broker.g2.last(), terminal_g2(&params, v_b.last()));
        assert!(broker.reduction_gap < 1e-8, "gap {}", broker.reduction_gap);
        let y = Vector4::new(1.0, -0.5, 20.0, 3.0);
        let parts = broker.control_components(0.3, &y).unwrap();
        assert!((parts.sum() - broker.control(0.3, &y).unwrap()).abs() < 1e-12);
    }
}
