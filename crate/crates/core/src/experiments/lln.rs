//! Law of large numbers: distance between SSA paths and the ODE solution.

use std::time::Instant;

use super::config::{ExperimentConfig, SupMode};
use super::output::{fmt_f64, CsvTable, ExperimentOutput, RunManifest};
use super::{run_replicas, Welford};
use crate::error::{Error, Result};
use crate::kinetics::RateKernel;
use crate::ode::{integrate, DbdState, IntegratorConfig, OdeSolution};
use crate::rng;
use crate::ssa::Simulator;
use crate::state::Configuration;

/// Mass allowed in sizes above `I/2` before the truncation is rejected.
pub const TRUNCATION_TAIL_TOL: f64 = 1e-8;

/// `sum_{i<=I} i |c^n_i - c_i| + sum_{i>I} i c^n_i` for dense SSA counts.
pub fn weighted_distance(counts: &[u64], max_size: usize, scale: f64, c: &[f64]) -> f64 {
    let mut d = 0.0;
    let top = max_size.max(c.len());
    for i in 1..=top {
        let x = if i <= max_size {
            scale * counts[i] as f64
        } else {
            0.0
        };
        let y = c.get(i - 1).copied().unwrap_or(0.0);
        d += i as f64 * (x - y).abs();
    }
    d
}

/// Deterministic reference from monomeric data, checked for truncation adequacy.
pub fn ode_reference(
    kernel: &RateKernel,
    rho: f64,
    horizon: f64,
    grid: &[f64],
    truncation: usize,
    keep_dense: bool,
) -> Result<OdeSolution> {
    let cfg = IntegratorConfig {
        grid: grid.to_vec(),
        keep_dense,
        ..IntegratorConfig::with_truncation(truncation)
    };
    let sol = integrate(&DbdState::monomeric(rho, truncation), kernel, horizon, &cfg)?;
    let tail = sol.max_tail_mass(truncation / 2);
    if !(tail < TRUNCATION_TAIL_TOL) {
        return Err(Error::TruncationInadequate {
            truncation,
            tail_mass: tail,
        });
    }
    Ok(sol)
}

/// One replica: distance at each grid time and the supremum.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaDistance {
    pub on_grid: Vec<f64>,
    pub sup: f64,
    pub jumps: u64,
}

pub fn replica_distance(
    cfg0: &Configuration,
    kernel: &RateKernel,
    reference: &OdeSolution,
    mode: SupMode,
    rng: rng::SimRng,
) -> Result<ReplicaDistance> {
    let mut sim = Simulator::new(cfg0, kernel, rng);
    let scale = cfg0.scale();
    let mut on_grid = Vec::with_capacity(reference.times.len());
    let mut sup = 0.0f64;
    let mut scratch = vec![0.0; reference.truncation];
    for (t, c) in reference.times.iter().zip(&reference.states) {
        match mode {
            SupMode::Grid => {
                sim.advance_to(*t)?;
            }
            SupMode::Jumps => {
                let mut failure = None;
                sim.advance_to_with(*t, |at, s| {
                    if failure.is_some() {
                        return;
                    }
                    match reference.eval(at, &mut scratch) {
                        Ok(()) => {
                            let d = weighted_distance(s.counts(), s.max_size(), scale, &scratch);
                            sup = sup.max(d);
                        }
                        Err(e) => failure = Some(e),
                    }
                })?;
                if let Some(e) = failure {
                    return Err(e);
                }
            }
        }
        let d = weighted_distance(sim.counts(), sim.max_size(), scale, c);
        sup = sup.max(d);
        on_grid.push(d);
    }
    Ok(ReplicaDistance {
        on_grid,
        sup,
        jumps: sim.jumps(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlnPoint {
    pub n: usize,
    pub replicas: usize,
    /// Mean over replicas of `sup_t ||c^n(t) - c(t)||`.
    pub estimate: f64,
    pub std_error: f64,
    pub mean_distance: Vec<f64>,
    pub mean_jumps: f64,
}

/// Runs `replicas` SSA paths at size `n` from monomers against `reference`,
/// drawing from stream family `family`.
#[allow(clippy::too_many_arguments)]
pub fn lln_point(
    n: usize,
    rho: f64,
    kernel: &RateKernel,
    reference: &OdeSolution,
    replicas: usize,
    seed: u64,
    family: u32,
    mode: SupMode,
) -> Result<LlnPoint> {
    if mode == SupMode::Jumps && !reference.has_dense_output() {
        return Err(Error::InvalidArgument(
            "jump-wise supremum needs an ODE reference with dense output".into(),
        ));
    }
    let cfg0 = Configuration::from_monomers(n, rho)?;
    let runs = run_replicas(replicas, |r| {
        replica_distance(
            &cfg0,
            kernel,
            reference,
            mode,
            rng::stream(seed, family, r as u32),
        )
    })?;
    let mut sup = Welford::new(1);
    let mut series = Welford::new(reference.times.len());
    let mut jumps = 0.0;
    for run in &runs {
        sup.push(&[run.sup]);
        series.push(&run.on_grid);
        jumps += run.jumps as f64;
    }
    Ok(LlnPoint {
        n,
        replicas,
        estimate: sup.mean()[0],
        std_error: sup.standard_error()[0],
        mean_distance: series.mean().to_vec(),
        mean_jumps: jumps / replicas as f64,
    })
}

pub fn lln_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let kernel = cfg.kernel()?;
    let grid = cfg.time_grid();
    let reference = ode_reference(
        &kernel,
        cfg.rho,
        cfg.horizon,
        &grid,
        cfg.truncation,
        cfg.sup_mode == SupMode::Jumps,
    )?;
    let ode_tail = reference.max_tail_mass(cfg.truncation / 2);

    let mut summary = CsvTable::new(
        "lln",
        &[
            "n",
            "replicas",
            "estimate",
            "std_error",
            "mean_jumps",
            "ode_tail_mass",
        ],
    );
    let mut series = CsvTable::new("lln_distance", &["n", "t", "mean_distance"]);
    let mut points = Vec::new();
    for (k, &n) in cfg.n_grid.iter().enumerate() {
        let p = lln_point(
            n,
            cfg.rho,
            &kernel,
            &reference,
            cfg.replicas,
            cfg.seed(),
            k as u32,
            cfg.sup_mode,
        )?;
        summary.push([
            n.to_string(),
            p.replicas.to_string(),
            fmt_f64(p.estimate),
            fmt_f64(p.std_error),
            fmt_f64(p.mean_jumps),
            fmt_f64(ode_tail),
        ]);
        for (t, d) in grid.iter().zip(&p.mean_distance) {
            series.push([n.to_string(), fmt_f64(*t), fmt_f64(*d)]);
        }
        points.push(p);
    }
    let mut manifest = RunManifest::for_config(cfg, if cfg.seed.is_some() { "config" } else { "default" })?;
    manifest.summary = serde_json::json!({
        "sup_mode": cfg.sup_mode,
        "estimates": points.iter().map(|p| serde_json::json!({
            "n": p.n, "estimate": p.estimate, "std_error": p.std_error
        })).collect::<Vec<_>>(),
        "ode": {
            "truncation": cfg.truncation,
            "relative_mass_drift": reference.relative_mass_drift(),
            "tail_mass_above_half": ode_tail,
            "accepted_steps": reference.stats.accepted,
            "rejected_steps": reference.stats.rejected,
        },
    });
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        tables: vec![summary, series],
        manifest,
    })
}
