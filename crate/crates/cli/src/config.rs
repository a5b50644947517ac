//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use brokergame::{ModelParams, StrategyConfig, TimeGrid};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            horizon: 1.0,
            steps: 1000,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub paths: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Benchmark arms compared against the optimal broker (subset of 1, 2, 3).
    pub benchmarks: Vec<usize>,
    /// Paths used for percentile bands by `path`; 0 disables bands.
    pub band_paths: usize,
    /// Multipliers applied to each learning parameter by `stress`.
    pub stress_multipliers: Vec<f64>,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            paths: 10_000,
            seed: 0,
            out_dir: PathBuf::from("out"),
            benchmarks: vec![1, 2, 3],
            band_paths: 0,
            stress_multipliers: vec![0.5, 1.5],
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub params: ModelParams,
    pub grid: GridConfig,
    pub strategy: StrategyConfig,
    pub run: RunSection,
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub params: ModelParams,
    pub grid: TimeGrid,
    pub strategy: StrategyConfig,
    pub run: RunSection,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn resolve(self) -> Result<RunConfig, CliError> {
        self.params.validate()?;
        let grid = TimeGrid::new(self.grid.horizon, self.grid.steps)?;
        if self.run.paths == 0 {
            return Err(CliError::Validation("run.paths must be at least 1".into()));
        }
        if let Some(b) = self.run.benchmarks.iter().find(|b| !(1..=3).contains(*b)) {
            return Err(CliError::Validation(format!(
                "run.benchmarks: unknown benchmark {b}, expected 1, 2 or 3"
            )));
        }
        if let Some(m) = self
            .run
            .stress_multipliers
            .iter()
            .find(|m| !m.is_finite() || **m <= 0.0)
        {
            return Err(CliError::Validation(format!(
                "run.stress_multipliers: {m} must be finite and > 0"
            )));
        }
        Ok(RunConfig {
            params: self.params,
            grid,
            strategy: self.strategy,
            run: self.run,
        })
    }
}
