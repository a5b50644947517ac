use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use brokergame::analytics::{run_experiment, stress_runner, write_stress_csv, StressCell};
use brokergame::broker::existence_diagnostic;
use brokergame::numerics::fmt_f64;
use brokergame::sim::{path_seed, simulate_path};
use brokergame::{BrokerMode, LearningParam, Model, PathResult};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::CliError;

fn create(dir: &Path, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let file = File::create(&path)?;
    Ok((path, BufWriter::new(file)))
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
) -> Result<PathBuf, CliError> {
    let (path, mut out) = create(dir, name)?;
    body(&mut out)?;
    out.flush()?;
    Ok(path)
}

fn benchmark_modes(indices: &[usize]) -> Vec<BrokerMode> {
    indices
        .iter()
        .map(|i| BrokerMode::BENCHMARKS[i - 1])
        .collect()
}

fn model(cfg: &RunConfig) -> Result<Model, CliError> {
    Ok(Model::new(&cfg.params, &cfg.grid)?)
}

/// Coefficient tables of both agents plus the eigenvalue diagnostic.
pub fn coeffs(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let m = model(cfg)?;
    let diag = existence_diagnostic(&m.belief, &m.trader_belief, &m.broker.v_b)?;
    let dir = &cfg.run.out_dir;
    Ok(vec![
        write_file(dir, "trader_coeffs.csv", |o| Ok(m.trader.write_csv(o)?))?,
        write_file(dir, "broker_coeffs.csv", |o| Ok(m.broker.write_csv(o)?))?,
        write_file(dir, "flow_coeffs.csv", |o| Ok(m.flow.write_csv(o)?))?,
        write_file(dir, "eigenvalues.csv", |o| {
            writeln!(o, "lambda1,lambda2,lambda3,lambda4")?;
            for e in diag.eigenvalues.values() {
                let row: Vec<String> = e.iter().map(|&x| fmt_f64(x)).collect();
                writeln!(o, "{}", row.join(","))?;
            }
            Ok(())
        })?,
    ])
}

/// Existence diagnostic with a one-line verdict on stdout.
pub fn diag(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let m = model(cfg)?;
    let diag = existence_diagnostic(&m.belief, &m.trader_belief, &m.broker.v_b)?;
    let path = write_file(&cfg.run.out_dir, "diagnostic.csv", |o| {
        Ok(diag.write_csv(o)?)
    })?;
    let top = diag
        .eigenvalues
        .values()
        .iter()
        .map(|e| e[0])
        .fold(f64::NEG_INFINITY, f64::max);
    println!(
        "flagged grid points: {} of {}; max lambda1 = {}; max |scaled det| = {}",
        diag.flagged.len(),
        cfg.grid.len(),
        fmt_f64(top),
        fmt_f64(diag.scaled_det.max_abs())
    );
    Ok(vec![path])
}

/// Linear interpolation between order statistics.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn write_bands<W: Write>(out: &mut W, paths: &[PathResult]) -> Result<(), CliError> {
    let series: Vec<Vec<(&str, Vec<f64>)>> = paths.iter().map(PathResult::series).collect();
    let names: Vec<&str> = series[0].iter().skip(1).map(|(n, _)| *n).collect();
    let mut header = vec!["t".to_string()];
    for n in &names {
        header.push(format!("{n}_p05"));
        header.push(format!("{n}_p95"));
    }
    writeln!(out, "{}", header.join(","))?;
    for k in 0..paths[0].len() {
        let mut row = vec![fmt_f64(paths[0].t[k])];
        for c in 1..=names.len() {
            let mut xs: Vec<f64> = series.iter().map(|s| s[c].1[k]).collect();
            xs.sort_by(f64::total_cmp);
            row.push(fmt_f64(percentile(&xs, 0.05)));
            row.push(fmt_f64(percentile(&xs, 0.95)));
        }
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// One path for the configured seed, plus optional percentile bands.
pub fn path(cfg: &RunConfig, mode: Option<BrokerMode>) -> Result<(), CliError> {
    let m = model(cfg)?;
    let strategy = brokergame::StrategyConfig {
        broker_mode: mode.unwrap_or(cfg.strategy.broker_mode),
        ..cfg.strategy
    };
    let single = simulate_path(&m, &strategy, cfg.run.seed)?;
    write_file(&cfg.run.out_dir, "path.csv", |o| Ok(single.write_csv(o)?))?;
    if cfg.run.band_paths > 0 {
        let paths: Vec<PathResult> = (0..cfg.run.band_paths as u64)
            .into_par_iter()
            .map(|n| simulate_path(&m, &strategy, path_seed(cfg.run.seed, n)))
            .collect::<Result<_, _>>()?;
        write_file(&cfg.run.out_dir, "bands.csv", |o| write_bands(o, &paths))?;
    }
    Ok(())
}

/// Monte Carlo comparison of the optimal broker with the benchmarks.
pub fn experiment(cfg: &RunConfig) -> Result<(), CliError> {
    let m = model(cfg)?;
    let (report, _) = run_experiment(
        &m,
        &cfg.strategy,
        &benchmark_modes(&cfg.run.benchmarks),
        cfg.run.paths,
        cfg.run.seed,
    )?;
    let dir = &cfg.run.out_dir;
    write_file(dir, "report.json", |o| {
        serde_json::to_writer_pretty(&mut *o, &report)?;
        writeln!(o)?;
        Ok(())
    })?;
    write_file(dir, "report.csv", |o| Ok(report.write_csv(o)?))?;
    println!(
        "{} paths, signal source {}, excluded {}",
        report.paths_requested, report.signal_source, report.excluded_optimal
    );
    for b in &report.benchmarks {
        println!(
            "Out({}) mean {:.2} std {:.2} p {:.3e}{}",
            b.benchmark,
            b.mean,
            b.std,
            b.p_value,
            StressCell::marker(b)
        );
    }
    Ok(())
}

/// Experiments with each learning parameter scaled in the broker's model.
pub fn stress(cfg: &RunConfig) -> Result<(), CliError> {
    let cells = stress_runner(
        &cfg.params,
        &cfg.grid,
        &LearningParam::ALL,
        &cfg.run.stress_multipliers,
        &cfg.strategy,
        &benchmark_modes(&cfg.run.benchmarks),
        cfg.run.paths,
        cfg.run.seed,
    )?;
    let dir = &cfg.run.out_dir;
    write_file(dir, "stress.csv", |o| Ok(write_stress_csv(o, &cells)?))?;
    write_file(dir, "stress.json", |o| {
        serde_json::to_writer_pretty(&mut *o, &cells)?;
        writeln!(o)?;
        Ok(())
    })?;
    for cell in &cells {
        let means: Vec<String> = cell
            .report
            .benchmarks
            .iter()
            .map(|b| format!("{:.1}{}", b.mean, StressCell::marker(b)))
            .collect();
        println!(
            "{} x {}: {}",
            cell.param.name(),
            cell.multiplier,
            means.join(" / ")
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::percentile;

    #[test]
    fn percentile_interpolates() {
        let xs: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(percentile(&xs, 0.05), 5.0);
        assert_eq!(percentile(&xs, 0.95), 95.0);
        assert_eq!(percentile(&[1.0, 2.0], 0.5), 1.5);
        assert_eq!(percentile(&[7.0], 0.95), 7.0);
    }
}
