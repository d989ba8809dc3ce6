//! Experiment configuration files (TOML).
//!
//! ```toml
//! kind = "lln"            # lln | potential | moment
//! rho = 1.0
//! n_grid = [100, 1000, 10000]
//! replicas = 200
//! horizon = 5.0
//! seed = 7                # optional, defaults to DEFAULT_SEED
//!
//! [kernel]
//! family = "constant"
//! params = { a = 1.0, b = 1.0 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::{KernelSpec, RateKernel};

/// Seed used when a config does not set one; echoed into every manifest.
pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lln,
    Potential,
    Moment,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Lln => "lln",
            ExperimentKind::Potential => "potential",
            ExperimentKind::Moment => "moment",
        }
    }
}

/// Regime declared by the user for the long-time potential study. Finite
/// data cannot tell the two apart, so it is only recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `liminf Q_i^(1/i) > 0`.
    Liminf,
    /// `lim Q_i^(1/i)` exists.
    Limit,
}

/// How the time supremum of the LLN distance is taken.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupMode {
    /// Max over the sampling grid; a lower bound on the path supremum.
    #[default]
    Grid,
    /// Max over the grid and both sides of every jump.
    Jumps,
}

/// Where the mass left over by the floor approximation goes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderPlacement {
    /// One cluster holding all leftover particles.
    #[default]
    LargeCluster,
    /// Leftover particles added as monomers.
    Monomers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub kernel: KernelSpec,
    pub rho: f64,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Points of the uniform time grid on `[0, horizon]`.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// ODE truncation size `I`.
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<Regime>,
    #[serde(default)]
    pub sup_mode: SupMode,
    #[serde(default)]
    pub remainder: RemainderPlacement,
    /// Superlinear weight thresholds `N_0 < N_1 < ...`; derived from the
    /// initial data when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<usize>>,
}

fn default_replicas() -> usize {
    100
}
fn default_horizon() -> f64 {
    5.0
}
fn default_grid_points() -> usize {
    101
}
fn default_truncation() -> usize {
    64
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn time_grid(&self) -> Vec<f64> {
        crate::ssa::uniform_grid(self.horizon, self.grid_points)
    }

    pub fn kernel(&self) -> Result<RateKernel> {
        self.kernel.build()
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel()?;
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::config("rho", format!("must be > 0, got {}", self.rho)));
        }
        if self.n_grid.is_empty() {
            return Err(Error::config("n_grid", "must not be empty"));
        }
        if self.n_grid[0] == 0 {
            return Err(Error::config("n_grid", "entries must be >= 1"));
        }
        if self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config("n_grid", "must be strictly increasing"));
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas", "must be >= 1"));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config(
                "horizon",
                format!("must be > 0, got {}", self.horizon),
            ));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid_points", "must be >= 2"));
        }
        if self.truncation < 2 {
            return Err(Error::config("truncation", "must be >= 2"));
        }
        if self.seed.is_some_and(|s| s > i64::MAX as u64) {
            return Err(Error::config("seed", "must be below 2^63"));
        }
        if let Some(t) = &self.thresholds {
            crate::experiments::SuperlinearWeight::from_thresholds(t.clone())
                .map_err(|e| Error::config("thresholds", e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let location = e
                .span()
                .map(|span| {
                    let line = text[..span.start].matches('\n').count() + 1;
                    format!("line {line}: ")
                })
                .unwrap_or_default();
            Error::config("", format!("{location}{message}"))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentConfig::from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LLN: &str = r#"
kind = "lln"
rho = 1.0
n_grid = [100, 1000]

[kernel]
family = "constant"
params = { a = 1.0, b = 1.0 }
"#;

    #[test]
    fn defaults_fill_in() {
        let c = ExperimentConfig::from_toml(LLN).unwrap();
        assert_eq!(c.replicas, 100);
        assert_eq!(c.grid_points, 101);
        assert_eq!(c.truncation, 64);
        assert_eq!(c.seed, None);
        assert_eq!(c.seed(), DEFAULT_SEED);
        assert_eq!(c.sup_mode, SupMode::Grid);
        assert_eq!(c.remainder, RemainderPlacement::LargeCluster);
    }

    #[test]
    fn toml_round_trip() {
        let mut c = ExperimentConfig::from_toml(LLN).unwrap();
        c.seed = Some(99);
        c.regime = Some(Regime::Limit);
        c.thresholds = Some(vec![2, 4, 6]);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn errors_name_the_field() {
        let bad = LLN.replace("constant", "quadratic");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "kernel.family"),
            other => panic!("{other:?}"),
        }
        let bad = LLN.replace("[100, 1000]", "[100, 50]");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "n_grid"),
            other => panic!("{other:?}"),
        }
        let bad = LLN.replace("rho = 1.0", "rho = 1.0\nrepetitions = 3");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { message, .. }) => {
                assert!(message.contains("repetitions"), "{message}");
                assert!(message.contains("line 4"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let bad = LLN.replace("params = { a = 1.0, b = 1.0 }", "params = { a = 1.0 }");
        match ExperimentConfig::from_toml(&bad) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "kernel.params.b"),
            other => panic!("{other:?}"),
        }
    }
}
