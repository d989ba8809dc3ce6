//! Experiment drivers, configuration and result files.

mod config;
mod lln;
mod moment;
mod output;
mod potential;
mod weight;

use rayon::prelude::*;

use crate::error::Result;

pub use config::{
    load_config, ExperimentConfig, ExperimentKind, Regime, RemainderPlacement, SupMode, DEFAULT_SEED,
};
pub use lln::{
    lln_experiment, lln_point, ode_reference, replica_distance, weighted_distance, LlnPoint, ReplicaDistance,
    TRUNCATION_TAIL_TOL,
};
pub use moment::{experiment_weight, moment_experiment, moment_experiment_with, moment_point, MomentPoint};
pub use output::{config_hash, emit_results, fmt_f64, CsvTable, ExperimentOutput, RunManifest};
pub use potential::{
    floor_approximation, limit_activity, potential_experiment, potential_point, Criticality, LimitActivity,
    PotentialPoint,
};
pub use weight::{build_superlinear_weight, thresholds_from_measures, SuperlinearWeight};

/// Dispatches on `cfg.kind`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    match cfg.kind {
        ExperimentKind::Lln => lln_experiment(cfg),
        ExperimentKind::Potential => potential_experiment(cfg),
        ExperimentKind::Moment => moment_experiment(cfg),
    }
}

/// Runs `f(0..replicas)` in parallel and returns results in replica order.
pub(crate) fn run_replicas<T, F>(replicas: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    (0..replicas).into_par_iter().map(f).collect()
}

/// Streaming mean and unbiased variance of fixed-width vectors.
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    pub(crate) fn new(width: usize) -> Self {
        Welford {
            count: 0,
            mean: vec![0.0; width],
            m2: vec![0.0; width],
        }
    }

    pub(crate) fn push(&mut self, x: &[f64]) {
        self.count += 1;
        let k = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / k;
            *s += d * (v - *m);
        }
    }

    pub(crate) fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub(crate) fn variance(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|s| {
                if self.count > 1 {
                    (s / (self.count - 1) as f64).max(0.0)
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub(crate) fn standard_error(&self) -> Vec<f64> {
        let k = self.count.max(1) as f64;
        self.variance().into_iter().map(|v| (v / k).sqrt()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [3.0, 1.5, -2.0, 7.25, 0.0];
        let mut w = Welford::new(1);
        for x in xs {
            w.push(&[x]);
        }
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((w.mean()[0] - mean).abs() < 1e-15);
        assert!((w.variance()[0] - var).abs() < 1e-14);
    }
}
