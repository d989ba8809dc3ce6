//! Superlinear moment `sum_i phi(i) c_i(t)` along SSA ensembles.

use std::time::Instant;

use super::config::ExperimentConfig;
use super::output::{fmt_f64, CsvTable, ExperimentOutput, RunManifest};
use super::weight::{build_superlinear_weight, SuperlinearWeight};
use super::{run_replicas, Welford};
use crate::error::Result;
use crate::kinetics::RateKernel;
use crate::rng;
use crate::ssa::Simulator;
use crate::state::Configuration;

/// Threshold levels used when the weight is derived from the initial data.
pub const DERIVED_LEVELS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentPoint {
    pub n: usize,
    pub replicas: usize,
    /// Ensemble mean of the moment at each grid time.
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Mean over replicas of the grid supremum of the moment.
    pub mean_sup: f64,
    pub sup_std_error: f64,
    /// Largest `|mass - rho|` seen in any replica.
    pub mass_error: f64,
}

impl MomentPoint {
    pub fn max_mean(&self) -> f64 {
        self.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn moment(counts: &[u64], max_size: usize, scale: f64, weight: &SuperlinearWeight) -> (f64, f64) {
    let mut m = 0.0;
    let mut units = 0u128;
    for (i, &x) in counts.iter().enumerate().take(max_size + 1).skip(1) {
        if x > 0 {
            m += weight.value(i as f64) * scale * x as f64;
            units += i as u128 * x as u128;
        }
    }
    (m, scale * units as f64)
}

#[allow(clippy::too_many_arguments)]
pub fn moment_point(
    n: usize,
    rho: f64,
    kernel: &RateKernel,
    weight: &SuperlinearWeight,
    grid: &[f64],
    replicas: usize,
    seed: u64,
    family: u32,
) -> Result<MomentPoint> {
    let cfg0 = Configuration::from_monomers(n, rho)?;
    let runs = run_replicas(replicas, |r| {
        let mut sim = Simulator::new(&cfg0, kernel, rng::stream(seed, family, r as u32));
        let mut series = Vec::with_capacity(grid.len());
        let mut mass_error = 0.0f64;
        for &t in grid {
            sim.advance_to(t)?;
            let (m, mass) = moment(sim.counts(), sim.max_size(), cfg0.scale(), weight);
            mass_error = mass_error.max((mass - rho).abs());
            series.push(m);
        }
        Ok((series, mass_error))
    })?;
    let mut series = Welford::new(grid.len());
    let mut sup = Welford::new(1);
    let mut mass_error = 0.0f64;
    for (s, e) in &runs {
        series.push(s);
        sup.push(&[s.iter().copied().fold(f64::NEG_INFINITY, f64::max)]);
        mass_error = mass_error.max(*e);
    }
    Ok(MomentPoint {
        n,
        replicas,
        mean: series.mean().to_vec(),
        std_error: series.standard_error(),
        mean_sup: sup.mean()[0],
        sup_std_error: sup.standard_error()[0],
        mass_error,
    })
}

/// The configured weight, or one built from the monomeric initial data.
pub fn experiment_weight(cfg: &ExperimentConfig) -> Result<SuperlinearWeight> {
    match &cfg.thresholds {
        Some(t) => SuperlinearWeight::from_thresholds(t.clone()),
        None => {
            // initial measures nu^n = sum_i c_i delta_i, all mass on size 1
            let measures: Vec<Vec<f64>> = cfg.n_grid.iter().map(|_| vec![cfg.rho]).collect();
            build_superlinear_weight(&measures, DERIVED_LEVELS)
        }
    }
}

pub fn moment_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let weight = experiment_weight(cfg)?;
    moment_experiment_with(cfg, &weight)
}

pub fn moment_experiment_with(
    cfg: &ExperimentConfig,
    weight: &SuperlinearWeight,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let kernel = cfg.kernel()?;
    let grid = cfg.time_grid();
    let mut series = CsvTable::new("moment", &["n", "t", "mean_moment", "std_error"]);
    let mut summary = CsvTable::new(
        "moment_summary",
        &[
            "n",
            "replicas",
            "initial_moment",
            "max_mean_moment",
            "mean_sup_moment",
            "sup_std_error",
        ],
    );
    let mut points = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let p = moment_point(
            n,
            cfg.rho,
            &kernel,
            weight,
            &grid,
            cfg.replicas,
            cfg.seed(),
            k as u32,
        )?;
        for ((t, m), se) in grid.iter().zip(&p.mean).zip(&p.std_error) {
            series.push([n.to_string(), fmt_f64(*t), fmt_f64(*m), fmt_f64(*se)]);
        }
        summary.push([
            n.to_string(),
            p.replicas.to_string(),
            fmt_f64(p.mean[0]),
            fmt_f64(p.max_mean()),
            fmt_f64(p.mean_sup),
            fmt_f64(p.sup_std_error),
        ]);
        points.push(p);
    }
    let max = points
        .iter()
        .map(|p| p.mean_sup)
        .fold(f64::NEG_INFINITY, f64::max);
    let min = points.iter().map(|p| p.mean_sup).fold(f64::INFINITY, f64::min);
    let mut manifest = RunManifest::for_config(cfg, if cfg.seed.is_some() { "config" } else { "default" })?;
    manifest.summary = serde_json::json!({
        "thresholds": weight.thresholds(),
        "max_over_n_of_mean_sup": max,
        "spread_ratio": max / min,
        "max_mass_error": points.iter().map(|p| p.mass_error).fold(0.0, f64::max),
    });
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        tables: vec![series, summary],
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monomeric_start_is_half_rho() {
        let k = RateKernel::constant(1.0, 1.0).unwrap();
        let w = SuperlinearWeight::from_thresholds(vec![2, 4, 8, 16]).unwrap();
        let p = moment_point(50, 1.3, &k, &w, &[0.0, 1.0], 4, 1, 0).unwrap();
        assert_eq!(p.mean[0], 0.65);
        assert!(p.mass_error < 1e-12);
        assert!(p.mean[1] > p.mean[0]);
    }
}
