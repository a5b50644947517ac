//! Experiment statistics and the stress-test driver.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::broker::BrokerCoefficients;
use crate::error::{Error, Result};
use crate::numerics::{fmt_f64, ScalarTable, Table, TimeGrid};
use crate::params::{LearningParam, ModelParams};
use crate::sim::{
    run_paths, BrokerMode, Model, PathMetrics, PathRecord, PathResult, StrategyConfig,
};
use crate::trader::{AdmissibilityPolicy, TraderCoefficients};

/// Version of the report JSON layout.
pub const REPORT_VERSION: u32 = 1;

/// Wealth gap between two strategies per million dollars traded by the second.
pub fn outperformance_from_metrics(opt: &PathMetrics, bench: &PathMetrics) -> Result<f64> {
    if bench.notional.is_nan() || bench.notional <= 0.0 {
        return Err(Error::UndefinedMetric("traded notional is zero".into()));
    }
    Ok((opt.wealth - bench.wealth) / bench.notional * 1e6)
}

/// [`outperformance_from_metrics`] on full path records.
pub fn outperformance(opt: &PathResult, bench: &PathResult) -> Result<f64> {
    outperformance_from_metrics(&opt.metrics(), &bench.metrics())
}

/// Mean and sample standard deviation; the deviation is 0 for fewer than two
/// samples.
pub fn mean_std(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Result of a one-sided test of `H0: mean = 0` against `H1: mean > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_stat: f64,
    pub p_value: f64,
    /// True when the sample is too small or has zero spread.
    pub degenerate: bool,
}

/// Upper tail `P(T > t)` of Student's t with `dof` degrees of freedom.
pub fn student_t_upper_tail(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    let tail = 0.5 * beta_reg(dof / 2.0, 0.5, x);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

pub fn one_sided_t_test(samples: &[f64]) -> TTest {
    let n = samples.len();
    let (mean, std) = mean_std(samples);
    if n < 2 || std.is_nan() || std <= 0.0 {
        return TTest {
            t_stat: 0.0,
            p_value: 0.5,
            degenerate: true,
        };
    }
    let t_stat = mean / (std / (n as f64).sqrt());
    TTest {
        t_stat,
        p_value: student_t_upper_tail(t_stat, (n - 1) as f64),
        degenerate: false,
    }
}

/// Clamp that keeps rates at least `epsilon` away from zero, preserving sign.
pub fn clamp_away_from_zero(x: f64, epsilon: f64) -> f64 {
    if x >= 0.0 {
        x.max(epsilon)
    } else {
        x.min(-epsilon)
    }
}

/// Ratio of the broker's rate to the trader's rate with both clamped away
/// from zero.
pub fn externalisation_quotient(nu: f64, eta: f64, epsilon: f64) -> f64 {
    clamp_away_from_zero(nu, epsilon) / clamp_away_from_zero(eta, epsilon)
}

/// Ratio of the broker's signal feedback to the trader's.
///
/// The horizon point, where the trader's coefficient vanishes, reuses the
/// last interior value.
pub fn effective_externalisation(
    trader: &TraderCoefficients,
    broker: &BrokerCoefficients,
) -> Result<ScalarTable> {
    let grid = *trader.grid();
    let n = grid.steps();
    let mut values = Vec::with_capacity(n + 1);
    for k in 0..n {
        let f1 = trader.f1.at(k);
        if f1.abs() < 1e-14 {
            return Err(Error::FilterDegeneracy {
                t: grid.t(k),
                what: "f1 vanishes in the externalisation ratio",
            });
        }
        values.push(broker.gain.at(k)[1] / f1);
    }
    values.push(values[n - 1]);
    Table::from_values("effective_externalisation", grid, values)
}

/// Time average of a table by the trapezoidal rule.
pub fn time_average(table: &ScalarTable) -> f64 {
    let grid = table.grid();
    let t: Vec<f64> = grid.times().collect();
    crate::sim::trapezoid(&t, table.values()) / grid.horizon()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    pearson(&rx, &ry)
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkStats {
    pub benchmark: usize,
    pub mean: f64,
    pub std: f64,
    pub t_stat: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub degenerate: bool,
    /// Paths dropped because this arm blew up.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawStats {
    pub arm: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: u32,
    pub params_hash: String,
    pub belief_hash: String,
    pub base_seed: u64,
    pub paths_requested: usize,
    pub signal_source: String,
    pub mispecify_qi: bool,
    pub c_belief: f64,
    pub steps: usize,
    pub horizon: f64,
    /// Paths dropped from every statistic because the optimal arm blew up.
    pub excluded_optimal: usize,
    pub benchmarks: Vec<BenchmarkStats>,
    pub raw: Vec<RawStats>,
}

impl ExperimentReport {
    pub fn benchmark(&self, index: usize) -> Option<&BenchmarkStats> {
        self.benchmarks.iter().find(|b| b.benchmark == index)
    }

    /// Table layout: one row per benchmark.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "benchmark,mean,std,t_stat,p_value,n_effective,excluded"
        )?;
        for b in &self.benchmarks {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                b.benchmark,
                fmt_f64(b.mean),
                fmt_f64(b.std),
                fmt_f64(b.t_stat),
                fmt_f64(b.p_value),
                b.n_effective,
                b.excluded
            )?;
        }
        Ok(())
    }
}

/// Aggregates per-path records into a report.
pub fn summarize(
    model: &Model,
    template: &StrategyConfig,
    benchmarks: &[BrokerMode],
    records: &[PathRecord],
    base_seed: u64,
) -> ExperimentReport {
    let grid = model.grid();
    let excluded_optimal = records.iter().filter(|r| r.arms[0].is_err()).count();
    let mut stats = Vec::new();
    for (j, mode) in benchmarks.iter().enumerate() {
        let mut outs = Vec::new();
        let mut excluded = 0;
        for r in records {
            match (&r.arms[0], &r.arms[j + 1]) {
                (Ok(opt), Ok(bench)) => match outperformance_from_metrics(opt, bench) {
                    Ok(v) => outs.push(v),
                    Err(_) => excluded += 1,
                },
                (Ok(_), Err(_)) => excluded += 1,
                (Err(_), _) => {}
            }
        }
        let (mean, std) = mean_std(&outs);
        let test = one_sided_t_test(&outs);
        stats.push(BenchmarkStats {
            benchmark: mode.benchmark_index().unwrap_or(0),
            mean,
            std,
            t_stat: test.t_stat,
            p_value: test.p_value,
            n_effective: outs.len(),
            degenerate: test.degenerate,
            excluded,
        });
    }
    let mut raw = Vec::new();
    for (j, mode) in std::iter::once(&BrokerMode::Optimal)
        .chain(benchmarks)
        .enumerate()
    {
        let w: Vec<f64> = records
            .iter()
            .filter_map(|r| r.arms[j].as_ref().ok().map(|m| m.wealth))
            .collect();
        let (mean, std) = mean_std(&w);
        raw.push(RawStats {
            arm: mode.label().to_string(),
            mean,
            std,
            n: w.len(),
        });
    }
    ExperimentReport {
        version: REPORT_VERSION,
        params_hash: model.truth.fingerprint(),
        belief_hash: model.belief.fingerprint(),
        base_seed,
        paths_requested: records.len(),
        signal_source: template.signal_source.label().to_string(),
        mispecify_qi: template.mispecify_qi,
        c_belief: model.belief.c_belief,
        steps: grid.steps(),
        horizon: grid.horizon(),
        excluded_optimal,
        benchmarks: stats,
        raw,
    }
}

/// Simulates `paths` coupled paths and aggregates them.
pub fn run_experiment(
    model: &Model,
    template: &StrategyConfig,
    benchmarks: &[BrokerMode],
    paths: usize,
    base_seed: u64,
) -> Result<(ExperimentReport, Vec<PathRecord>)> {
    if paths == 0 {
        return Err(Error::invalid("paths", "need at least one path"));
    }
    let records = run_paths(model, template, benchmarks, paths, base_seed);
    let report = summarize(model, template, benchmarks, &records, base_seed);
    Ok((report, records))
}

/// One cell of a stress sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StressCell {
    pub param: LearningParam,
    pub multiplier: f64,
    pub report: ExperimentReport,
}

impl StressCell {
    /// Significance marker: `*` when the one-sided p-value is below 0.01.
    pub fn marker(stats: &BenchmarkStats) -> &'static str {
        if stats.p_value < 0.01 {
            "*"
        } else {
            ""
        }
    }
}

/// Runs one experiment per `(param, multiplier)`; the stressed value enters
/// only the broker's model while the simulated market keeps `base`.
#[allow(clippy::too_many_arguments)]
pub fn stress_runner(
    base: &ModelParams,
    grid: &TimeGrid,
    params: &[LearningParam],
    multipliers: &[f64],
    template: &StrategyConfig,
    benchmarks: &[BrokerMode],
    paths: usize,
    base_seed: u64,
) -> Result<Vec<StressCell>> {
    let mut cells = Vec::new();
    for &param in params {
        for &m in multipliers {
            let belief = param.scaled(base, m);
            let model = Model::with_belief(base, &belief, grid, AdmissibilityPolicy::Strict)?;
            let (report, _) = run_experiment(&model, template, benchmarks, paths, base_seed)?;
            cells.push(StressCell {
                param,
                multiplier: m,
                report,
            });
        }
    }
    Ok(cells)
}

/// Writes one row per stress cell and benchmark.
pub fn write_stress_csv<W: Write>(mut out: W, cells: &[StressCell]) -> Result<()> {
    writeln!(
        out,
        "param,multiplier,benchmark,mean,std,p_value,significant"
    )?;
    for cell in cells {
        for b in &cell.report.benchmarks {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                cell.param.name(),
                fmt_f64(cell.multiplier),
                b.benchmark,
                fmt_f64(b.mean),
                fmt_f64(b.std),
                fmt_f64(b.p_value),
                StressCell::marker(b)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_test_examples() {
        let flat = one_sided_t_test(&[0.0; 5]);
        assert!(flat.degenerate);
        assert_eq!(flat.p_value, 0.5);
        let sym = one_sided_t_test(&[-1.0, 1.0]);
        assert_eq!(sym.t_stat, 0.0);
        assert!((sym.p_value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn t_tail_matches_closed_form_for_one_dof() {
        // With one degree of freedom Student's t is Cauchy.
        for t in [-3.0f64, -0.5, 0.0, 0.7, 2.0, 10.0] {
            let exact = 0.5 - t.atan() / std::f64::consts::PI;
            assert!(
                (student_t_upper_tail(t, 1.0) - exact).abs() < 1e-12,
                "t = {t}"
            );
        }
    }

    #[test]
    fn quotient_examples() {
        assert_eq!(externalisation_quotient(5.0, 5.0, 0.1), 1.0);
        assert_eq!(externalisation_quotient(0.05, 0.05, 0.1), 1.0);
        assert!((externalisation_quotient(-0.05, 2.0, 0.1) + 0.05).abs() < 1e-15);
    }

    #[test]
    fn spearman_handles_ties_and_monotone_maps() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[10.0, 20.0, 30.0, 40.0]) - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[4.0, 3.0, 2.0, 1.0]) + 1.0).abs() < 1e-15);
        assert_eq!(ranks(&[5.0, 1.0, 5.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn outperformance_arithmetic() {
        let opt = PathMetrics {
            wealth: 1.001,
            notional: 1.0,
        };
        let bench = PathMetrics {
            wealth: 1.0,
            notional: 300.0,
        };
        let out = outperformance_from_metrics(&opt, &bench).unwrap();
        assert!((out - 0.001 / 300.0 * 1e6).abs() < 1e-9);
        let zero = PathMetrics {
            wealth: 0.0,
            notional: 0.0,
        };
        assert!(outperformance_from_metrics(&opt, &zero).is_err());
    }
}
