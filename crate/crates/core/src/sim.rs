//! Euler-Maruyama simulation of the coupled market and the Monte Carlo
//! experiment harness.

use std::io::Write;

use nalgebra::Vector4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::broker::{compute_v_b_price, BrokerCoefficients};
use crate::error::{Error, Result};
use crate::filters::{
    flow_filter_coefficients, naive_alpha_at, update_broker_flow_filter,
    update_broker_price_filter, update_trader_filter, FilterKind, FilterState,
    FlowFilterCoefficients,
};
use crate::numerics::{fmt_f64, TimeGrid};
use crate::params::ModelParams;
use crate::trader::{AdmissibilityPolicy, TraderCoefficients};

/// Everything that is deterministic given the parameters: both agents'
/// coefficients under the true dynamics and under the broker's model.
#[derive(Debug, Clone)]
pub struct Model {
    /// Parameters of the simulated market and of the trader's own model.
    pub truth: ModelParams,
    /// The broker's model of the world.
    pub belief: ModelParams,
    /// Coefficients the trader actually trades with.
    pub trader: TraderCoefficients,
    /// The broker's copy of the trader's coefficients.
    pub trader_belief: TraderCoefficients,
    pub broker: BrokerCoefficients,
    pub flow: FlowFilterCoefficients,
}

impl Model {
    pub fn new(params: &ModelParams, grid: &TimeGrid) -> Result<Self> {
        Model::with_belief(params, params, grid, AdmissibilityPolicy::Strict)
    }

    /// Model where the broker's learning parameters differ from the truth.
    pub fn with_belief(
        truth: &ModelParams,
        belief: &ModelParams,
        grid: &TimeGrid,
        policy: AdmissibilityPolicy,
    ) -> Result<Self> {
        truth.validate()?;
        belief.validate()?;
        let trader = TraderCoefficients::solve(truth, grid, policy)?;
        let trader_belief = if belief == truth {
            trader.clone()
        } else {
            TraderCoefficients::solve(belief, grid, policy)?
        };
        let v_b = compute_v_b_price(belief, grid)?;
        let broker = BrokerCoefficients::solve(belief, &trader_belief, &v_b)?;
        let flow = flow_filter_coefficients(&trader_belief, belief)?;
        Ok(Model {
            truth: *truth,
            belief: *belief,
            trader,
            trader_belief,
            broker,
            flow,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        self.trader.grid()
    }
}

/// How the broker trades in the lit market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrokerMode {
    Optimal,
    /// Externalise the trader's flow and unwind inventory linearly.
    Benchmark1,
    /// Internalise all flow and unwind inventory linearly.
    Benchmark2,
    /// Externalise all client flow.
    Benchmark3,
}

impl BrokerMode {
    pub const BENCHMARKS: [BrokerMode; 3] = [
        BrokerMode::Benchmark1,
        BrokerMode::Benchmark2,
        BrokerMode::Benchmark3,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            BrokerMode::Optimal => "optimal",
            BrokerMode::Benchmark1 => "benchmark1",
            BrokerMode::Benchmark2 => "benchmark2",
            BrokerMode::Benchmark3 => "benchmark3",
        }
    }

    pub fn benchmark_index(&self) -> Option<usize> {
        match self {
            BrokerMode::Optimal => None,
            BrokerMode::Benchmark1 => Some(1),
            BrokerMode::Benchmark2 => Some(2),
            BrokerMode::Benchmark3 => Some(3),
        }
    }
}

/// Which estimate of the signal feeds the optimal broker control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignalSource {
    #[default]
    Price,
    Flow,
    Naive,
}

impl SignalSource {
    pub fn label(&self) -> &'static str {
        match self {
            SignalSource::Price => "price",
            SignalSource::Flow => "flow",
            SignalSource::Naive => "naive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub broker_mode: BrokerMode,
    pub signal_source: SignalSource,
    /// Draw the trader's initial inventory from N(0, 1) while the broker
    /// believes it is 0.
    pub mispecify_qi: bool,
    /// Steps before the horizon during which the optimal broker ignores her
    /// signal estimate when `mispecify_qi` is set.
    pub unwind_steps: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            broker_mode: BrokerMode::Optimal,
            signal_source: SignalSource::Price,
            mispecify_qi: false,
            unwind_steps: 10,
        }
    }
}

/// Gaussian inputs of one path: standard normal draws scaled by `sqrt(dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Increments {
    pub dw_s: Vec<f64>,
    /// Signal noise component independent of the price noise.
    pub dw_perp: Vec<f64>,
    pub dw_u: Vec<f64>,
    /// Standard normal used as the trader's initial inventory when mispecified.
    pub q_i0_draw: f64,
}

impl Increments {
    pub fn generate(grid: &TimeGrid, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = grid.steps();
        let sd = grid.dt().sqrt();
        let q_i0_draw: f64 = StandardNormal.sample(&mut rng);
        let mut dw_s = Vec::with_capacity(n);
        let mut dw_perp = Vec::with_capacity(n);
        let mut dw_u = Vec::with_capacity(n);
        for _ in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let c: f64 = StandardNormal.sample(&mut rng);
            dw_s.push(a * sd);
            dw_perp.push(b * sd);
            dw_u.push(c * sd);
        }
        Increments {
            dw_s,
            dw_perp,
            dw_u,
            q_i0_draw,
        }
    }

    pub fn zeros(grid: &TimeGrid) -> Self {
        let n = grid.steps();
        Increments {
            dw_s: vec![0.0; n],
            dw_perp: vec![0.0; n],
            dw_u: vec![0.0; n],
            q_i0_draw: 0.0,
        }
    }
}

/// Seed of path `n` in an experiment with base seed `base`.
///
/// The base is scrambled first so that nearby base seeds do not share most
/// of their path seeds.
pub fn path_seed(base: u64, n: u64) -> u64 {
    splitmix64(base) ^ n
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Full record of one simulated path; every series has one entry per grid
/// point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub t: Vec<f64>,
    pub s: Vec<f64>,
    pub alpha: Vec<f64>,
    pub xi: Vec<f64>,
    pub nu: Vec<f64>,
    pub eta: Vec<f64>,
    pub q_b: Vec<f64>,
    pub q_i: Vec<f64>,
    pub q_i_belief: Vec<f64>,
    pub x_b: Vec<f64>,
    pub x_i: Vec<f64>,
    pub nu_hat: Vec<f64>,
    pub alpha_hat_price: Vec<f64>,
    pub alpha_hat_flow: Vec<f64>,
    pub alpha_hat_naive: Vec<f64>,
    /// Signal estimate used in the broker's control.
    pub alpha_hat_used: Vec<f64>,
    /// Contributions of `(q_B, alpha_hat, xi, q_I)` to the optimal rate.
    pub nu_components: [Vec<f64>; 4],
    pub v_i: Vec<f64>,
    pub v_b: Vec<f64>,
    pub v_alt: Vec<f64>,
}

impl PathResult {
    fn with_capacity(n: usize) -> Self {
        let v = || Vec::with_capacity(n);
        PathResult {
            t: v(),
            s: v(),
            alpha: v(),
            xi: v(),
            nu: v(),
            eta: v(),
            q_b: v(),
            q_i: v(),
            q_i_belief: v(),
            x_b: v(),
            x_i: v(),
            nu_hat: v(),
            alpha_hat_price: v(),
            alpha_hat_flow: v(),
            alpha_hat_naive: v(),
            alpha_hat_used: v(),
            nu_components: [v(), v(), v(), v()],
            v_i: v(),
            v_b: v(),
            v_alt: v(),
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Marked-to-market terminal wealth of the broker.
    pub fn terminal_wealth(&self) -> f64 {
        let n = self.len() - 1;
        self.x_b[n] + self.q_b[n] * self.s[n]
    }

    /// Trapezoidal integral of `S (|nu| + |eta| + |xi|)`.
    pub fn traded_notional(&self) -> f64 {
        let f: Vec<f64> = (0..self.len())
            .map(|k| self.s[k] * (self.nu[k].abs() + self.eta[k].abs() + self.xi[k].abs()))
            .collect();
        trapezoid(&self.t, &f)
    }

    pub fn metrics(&self) -> PathMetrics {
        PathMetrics {
            wealth: self.terminal_wealth(),
            notional: self.traded_notional(),
        }
    }

    pub const CSV_COLUMNS: [&'static str; 24] = [
        "t",
        "s",
        "alpha",
        "xi",
        "nu",
        "eta",
        "q_b",
        "q_i",
        "q_i_belief",
        "x_b",
        "x_i",
        "nu_hat",
        "alpha_hat_price",
        "alpha_hat_flow",
        "alpha_hat_naive",
        "alpha_hat_used",
        "nu_q_b",
        "nu_alpha_hat",
        "nu_xi",
        "nu_q_i",
        "v_i",
        "v_b",
        "v_alt",
        "w_b",
    ];

    fn row(&self, k: usize) -> [f64; 24] {
        [
            self.t[k],
            self.s[k],
            self.alpha[k],
            self.xi[k],
            self.nu[k],
            self.eta[k],
            self.q_b[k],
            self.q_i[k],
            self.q_i_belief[k],
            self.x_b[k],
            self.x_i[k],
            self.nu_hat[k],
            self.alpha_hat_price[k],
            self.alpha_hat_flow[k],
            self.alpha_hat_naive[k],
            self.alpha_hat_used[k],
            self.nu_components[0][k],
            self.nu_components[1][k],
            self.nu_components[2][k],
            self.nu_components[3][k],
            self.v_i[k],
            self.v_b[k],
            self.v_alt[k],
            self.x_b[k] + self.q_b[k] * self.s[k],
        ]
    }

    /// Writes every series as one CSV row per grid point.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", Self::CSV_COLUMNS.join(","))?;
        for k in 0..self.len() {
            let row: Vec<String> = self.row(k).iter().map(|&x| fmt_f64(x)).collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Named series in CSV column order.
    pub fn series(&self) -> Vec<(&'static str, Vec<f64>)> {
        Self::CSV_COLUMNS
            .iter()
            .enumerate()
            .map(|(c, &name)| (name, (0..self.len()).map(|k| self.row(k)[c]).collect()))
            .collect()
    }
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (fw[0] + fw[1]) * (tw[1] - tw[0]))
        .sum()
}

/// Per-path quantities an experiment keeps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub wealth: f64,
    pub notional: f64,
}

/// Benchmark rate at time-to-horizon `remaining` (floored at `dt`).
pub fn benchmark_control(
    mode: BrokerMode,
    remaining: f64,
    dt: f64,
    eta: f64,
    xi: f64,
    q_b: f64,
) -> f64 {
    let twap = q_b / remaining.max(dt);
    match mode {
        BrokerMode::Benchmark1 => eta - twap,
        BrokerMode::Benchmark2 => -twap,
        BrokerMode::Benchmark3 => eta + xi,
        BrokerMode::Optimal => panic!("benchmark_control called with the optimal mode"),
    }
}

fn check(step: usize, pairs: &[(&'static str, f64)]) -> Result<()> {
    for &(field, v) in pairs {
        if !v.is_finite() {
            return Err(Error::SimulationBlowup { step, field });
        }
    }
    Ok(())
}

/// Simulates one path from the supplied Gaussian increments.
pub fn simulate_with_increments(
    model: &Model,
    config: &StrategyConfig,
    inc: &Increments,
) -> Result<PathResult> {
    let grid = *model.grid();
    let n = grid.steps();
    let dt = grid.dt();
    if inc.dw_s.len() != n || inc.dw_perp.len() != n || inc.dw_u.len() != n {
        return Err(Error::ModelInconsistency(
            "increment length does not match the grid".into(),
        ));
    }
    let tp = &model.truth;
    let bp = &model.belief;
    let trader = &model.trader;
    let tb = &model.trader_belief;
    let flow = &model.flow;
    let v_b = &model.broker.v_b;
    let (p, a, b, c) = (
        tp.perm_impact,
        tp.cost_broker,
        tp.cost_informed,
        tp.cost_uninformed,
    );
    let rho_perp = (1.0 - tp.rho * tp.rho).max(0.0).sqrt();

    let q_i0 = if config.mispecify_qi {
        inc.q_i0_draw
    } else {
        0.0
    };
    let mut s = tp.s0;
    let mut alpha = tp.alpha0;
    let mut xi = 0.0;
    let mut q_b = 0.0;
    let mut q_i = q_i0;
    let mut q_i_belief = 0.0;
    let mut x_b = 0.0;
    let mut x_i = 0.0;
    let mut nu_hat = FilterState::new(FilterKind::TraderNu);
    let mut alpha_price = FilterState::new(FilterKind::BrokerPrice);
    let mut alpha_flow = FilterState::new(FilterKind::BrokerFlow);
    let mut eta = trader.control_at(0, alpha, nu_hat.mean, q_i);
    let mut gamma = eta - tb.f3.at(0) * q_i_belief;
    let mut last_naive = 0.0;

    let mut rec = PathResult::with_capacity(n + 1);
    for k in 0..=n {
        let t = grid.t(k);
        let naive = if k < n {
            naive_alpha_at(k, eta, q_i_belief, tb).map_err(|_| Error::SimulationBlowup {
                step: k,
                field: "alpha_hat_naive",
            })?
        } else {
            last_naive
        };
        last_naive = naive;
        let mut used = match config.signal_source {
            SignalSource::Price => alpha_price.mean,
            SignalSource::Flow => alpha_flow.mean,
            SignalSource::Naive => naive,
        };
        if config.mispecify_qi && k + config.unwind_steps >= n {
            used = 0.0;
        }
        let y = Vector4::new(q_b, used, xi, q_i_belief);
        let (nu, parts) = match config.broker_mode {
            BrokerMode::Optimal => {
                let gain = model.broker.gain.at(k);
                let parts = gain.transpose().component_mul(&y);
                (parts.sum(), parts)
            }
            mode => (
                benchmark_control(mode, grid.horizon() - t, dt, eta, xi, q_b),
                Vector4::zeros(),
            ),
        };
        check(k, &[("nu", nu), ("eta", eta)])?;

        rec.t.push(t);
        rec.s.push(s);
        rec.alpha.push(alpha);
        rec.xi.push(xi);
        rec.nu.push(nu);
        rec.eta.push(eta);
        rec.q_b.push(q_b);
        rec.q_i.push(q_i);
        rec.q_i_belief.push(q_i_belief);
        rec.x_b.push(x_b);
        rec.x_i.push(x_i);
        rec.nu_hat.push(nu_hat.mean);
        rec.alpha_hat_price.push(alpha_price.mean);
        rec.alpha_hat_flow.push(alpha_flow.mean);
        rec.alpha_hat_naive.push(naive);
        rec.alpha_hat_used.push(used);
        for (i, series) in rec.nu_components.iter_mut().enumerate() {
            series.push(parts[i]);
        }
        rec.v_i.push(trader.v_i.at(k));
        rec.v_b.push(v_b.at(k));
        rec.v_alt.push(flow.variance.at(k));
        if k == n {
            break;
        }

        let dw_s = inc.dw_s[k];
        let dw_alpha = tp.rho * dw_s + rho_perp * inc.dw_perp[k];
        let dw_u = inc.dw_u[k];
        let ds = (p * nu + alpha) * dt + tp.sigma_s * dw_s;
        let s_next = s + ds;
        let alpha_next = alpha - tp.kappa_alpha * alpha * dt + tp.sigma_alpha * dw_alpha;
        let xi_next = xi - tp.kappa_u * xi * dt + tp.sigma_u * dw_u;
        q_b += (nu - eta - xi) * dt;
        q_i += eta * dt;
        q_i_belief += eta * dt;
        x_b += (-nu * (s + a * nu) + eta * (s + b * eta) + xi * (s + c * xi)) * dt;
        x_i -= eta * (s + b * eta) * dt;

        nu_hat = update_trader_filter(
            &nu_hat,
            ds - alpha * dt,
            dt,
            trader.v_i.at(k),
            trader.v_i.at(k + 1),
            tp,
        );
        alpha_price = update_broker_price_filter(
            &alpha_price,
            ds - p * nu * dt,
            dt,
            v_b.at(k),
            v_b.at(k + 1),
            bp,
        );

        s = s_next;
        alpha = alpha_next;
        xi = xi_next;
        let eta_next = trader.control_at(k + 1, alpha, nu_hat.mean, q_i);
        let gamma_next = eta_next - tb.f3.at(k + 1) * q_i_belief;
        let dz = flow.observation_increment(k, gamma, gamma_next, nu);
        alpha_flow = update_broker_flow_filter(&alpha_flow, dz, dt, flow, k).map_err(|_| {
            Error::SimulationBlowup {
                step: k + 1,
                field: "alpha_hat_flow",
            }
        })?;
        eta = eta_next;
        gamma = gamma_next;
        check(
            k + 1,
            &[
                ("s", s),
                ("q_b", q_b),
                ("x_b", x_b),
                ("x_i", x_i),
                ("nu_hat", nu_hat.mean),
                ("alpha_hat_price", alpha_price.mean),
                ("alpha_hat_flow", alpha_flow.mean),
            ],
        )?;
    }
    Ok(rec)
}

/// Simulates one path with increments drawn from `seed`.
pub fn simulate_path(model: &Model, config: &StrategyConfig, seed: u64) -> Result<PathResult> {
    simulate_with_increments(model, config, &Increments::generate(model.grid(), seed))
}

/// Outcome of one arm on one path.
pub type ArmOutcome = std::result::Result<PathMetrics, usize>;

/// Per-path metrics of every arm, simulated with common random numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub seed: u64,
    /// Optimal arm first, then the requested benchmarks in order. `Err`
    /// holds the step at which the arm blew up.
    pub arms: Vec<ArmOutcome>,
}

/// Runs `paths` coupled paths of the optimal strategy and `benchmarks`.
///
/// Path `n` uses seed `path_seed(base_seed, n)` for every arm. Results are in
/// path order regardless of the thread count.
pub fn run_paths(
    model: &Model,
    template: &StrategyConfig,
    benchmarks: &[BrokerMode],
    paths: usize,
    base_seed: u64,
) -> Vec<PathRecord> {
    (0..paths as u64)
        .into_par_iter()
        .map(|n| {
            let seed = path_seed(base_seed, n);
            let inc = Increments::generate(model.grid(), seed);
            let arms = std::iter::once(BrokerMode::Optimal)
                .chain(benchmarks.iter().copied())
                .map(|mode| {
                    let cfg = StrategyConfig {
                        broker_mode: mode,
                        ..*template
                    };
                    match simulate_with_increments(model, &cfg, &inc) {
                        Ok(path) => Ok(path.metrics()),
                        Err(Error::SimulationBlowup { step, .. }) => Err(step),
                        Err(e) => panic!("unexpected simulation error: {e}"),
                    }
                })
                .collect();
            PathRecord { seed, arms }
        })
        .collect()
}
