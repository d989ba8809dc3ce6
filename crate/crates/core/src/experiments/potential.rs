//! Non-equilibrium potential of floor approximations of an equilibrium profile.
//!
//! For `n` in the grid, `x_i = floor((n/rho) c^{z*}_i)` for `i <= n - 1`, the
//! leftover particles are placed according to [`RemainderPlacement`], and the
//! exact potential `-(rho/n) ln Pi(x)` is compared with its limit
//! `H(c^{z*} | c^{z*}) = 0`. Here `z* = z(rho)` when `rho <= rho_s` and
//! `z* = z_s` otherwise.

use std::time::Instant;

use super::config::{ExperimentConfig, RemainderPlacement};
use super::output::{fmt_f64, CsvTable, ExperimentOutput, RunManifest};
use crate::error::{Error, Result};
use crate::kinetics::{
    critical_mass, detailed_balance_coefficients, solve_z_of_rho, CriticalMass, RateKernel,
};
use crate::state::{partition_count, Configuration};
use crate::stationary::{decompose, log_normalizer, log_stationary_weight, EntropyReport, DECOMPOSITION_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criticality {
    Subcritical,
    Supercritical,
}

impl Criticality {
    pub fn as_str(self) -> &'static str {
        match self {
            Criticality::Subcritical => "subcritical",
            Criticality::Supercritical => "supercritical",
        }
    }
}

/// The activity whose equilibrium the potential converges to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LimitActivity {
    pub z: f64,
    pub z_s: f64,
    pub rho_s: f64,
    pub criticality: Criticality,
}

pub fn limit_activity(kernel: &RateKernel, rho: f64) -> Result<LimitActivity> {
    let z_s = kernel.critical_activity();
    if !(z_s > 0.0 && z_s.is_finite()) {
        return Err(Error::NoEquilibrium(format!(
            "critical activity z_s = {z_s}; the limit needs 0 < z_s < inf"
        )));
    }
    let rho_s = critical_mass(kernel, z_s, 1e-12);
    let supercritical = matches!(rho_s, CriticalMass::Finite { value, .. } if rho > value);
    let (z, criticality) = if supercritical {
        (z_s, Criticality::Supercritical)
    } else {
        (solve_z_of_rho(kernel, rho, 1e-13)?, Criticality::Subcritical)
    };
    Ok(LimitActivity {
        z,
        z_s,
        rho_s: rho_s.value(),
        criticality,
    })
}

/// Floor approximation of `c^z` in `E^n_rho`.
pub fn floor_approximation(
    n: usize,
    rho: f64,
    kernel: &RateKernel,
    z: f64,
    placement: RemainderPlacement,
) -> Result<(Configuration, usize)> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::InvalidArgument(format!("z must be > 0, got {z}")));
    }
    let log_q = detailed_balance_coefficients(kernel, n)?;
    let ln_z = z.ln();
    let scale = n as f64 / rho;
    let mut counts: Vec<(usize, u64)> = Vec::new();
    let mut used = 0usize;
    for i in 1..n {
        let x = (scale * (log_q[i - 1] + i as f64 * ln_z).exp()).floor();
        if x >= 1.0 {
            counts.push((i, x as u64));
            used += i * x as usize;
        }
    }
    if used > n {
        return Err(Error::InternalInconsistency(format!(
            "floor counts hold {used} particles, more than n = {n}"
        )));
    }
    let remainder = n - used;
    if remainder > 0 {
        match placement {
            RemainderPlacement::LargeCluster => counts.push((remainder, 1)),
            RemainderPlacement::Monomers => counts.push((1, remainder as u64)),
        }
    }
    Ok((Configuration::from_counts(n, rho, counts)?, remainder))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialPoint {
    pub n: usize,
    pub states: Option<u128>,
    pub state: Configuration,
    pub remainder: usize,
    pub potential: f64,
    pub target: f64,
    pub gap: f64,
    pub report: EntropyReport,
}

pub fn potential_point(
    n: usize,
    rho: f64,
    kernel: &RateKernel,
    limit: &LimitActivity,
    placement: RemainderPlacement,
) -> Result<PotentialPoint> {
    let (state, remainder) = floor_approximation(n, rho, kernel, limit.z, placement)?;
    let log_b = log_normalizer(n, rho, kernel, limit.z)?;
    let log_pi = log_stationary_weight(&state, kernel, limit.z)? - log_b;
    let potential = -state.scale() * log_pi;
    let report = decompose(&state, kernel, limit.z, log_b, potential)?;
    if !(report.error() <= DECOMPOSITION_TOL) {
        return Err(Error::InternalInconsistency(format!(
            "potential identity off by {:e} at n = {n}",
            report.error()
        )));
    }
    // H(c^{z*} | c^{z*}) = 0
    let target = 0.0;
    Ok(PotentialPoint {
        n,
        states: partition_count(n),
        state,
        remainder,
        potential,
        target,
        gap: (potential - target).abs(),
        report,
    })
}

pub fn potential_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let kernel = cfg.kernel()?;
    let limit = limit_activity(&kernel, cfg.rho)?;
    let mut table = CsvTable::new(
        "potential",
        &[
            "n",
            "states",
            "state",
            "remainder",
            "potential",
            "target",
            "gap",
            "entropy",
            "tail",
            "stirling",
            "scaled_log_b",
        ],
    );
    let mut points = Vec::new();
    for &n in &cfg.n_grid {
        let p = potential_point(n, cfg.rho, &kernel, &limit, cfg.remainder)?;
        table.push([
            n.to_string(),
            p.states.map_or_else(String::new, |s| s.to_string()),
            p.state.to_string(),
            p.remainder.to_string(),
            fmt_f64(p.potential),
            fmt_f64(p.target),
            fmt_f64(p.gap),
            fmt_f64(p.report.entropy),
            fmt_f64(p.report.tail),
            fmt_f64(p.report.stirling),
            fmt_f64(p.report.scaled_log_b),
        ]);
        points.push(p);
    }
    let mut manifest = RunManifest::for_config(cfg, if cfg.seed.is_some() { "config" } else { "default" })?;
    manifest.summary = serde_json::json!({
        "criticality": limit.criticality.as_str(),
        "z_limit": limit.z,
        "z_s": limit.z_s,
        "rho_s": if limit.rho_s.is_finite() { serde_json::json!(limit.rho_s) } else { serde_json::json!("inf") },
        "remainder": cfg.remainder,
        "gaps": points.iter().map(|p| p.gap).collect::<Vec<_>>(),
    });
    manifest.wall_seconds = start.elapsed().as_secs_f64();
    Ok(ExperimentOutput {
        config: cfg.clone(),
        tables: vec![table],
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floor_states_for_constant_kernel() {
        let k = RateKernel::constant(1.0, 1.0).unwrap();
        let lim = limit_activity(&k, 1.0).unwrap();
        assert_eq!(lim.criticality, Criticality::Subcritical);
        assert!((lim.z - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);
        let (s, r) = floor_approximation(10, 1.0, &k, lim.z, RemainderPlacement::LargeCluster).unwrap();
        assert_eq!(s.to_string(), "1:3,2:1,5:1");
        assert_eq!(r, 5);
        let (s, _) = floor_approximation(20, 1.0, &k, lim.z, RemainderPlacement::Monomers).unwrap();
        assert_eq!(s.to_string(), "1:13,2:2,3:1");
    }

    #[test]
    fn supercritical_power_law() {
        let k = RateKernel::power_db(4.0).unwrap();
        let lim = limit_activity(&k, 2.0).unwrap();
        assert_eq!(lim.criticality, Criticality::Supercritical);
        assert_eq!(lim.z, 1.0);
        assert!((lim.rho_s - 1.202_056_903_159_594).abs() < 1e-9);
        let p = potential_point(10, 2.0, &k, &lim, RemainderPlacement::LargeCluster).unwrap();
        assert_eq!(p.state.to_string(), "1:5,5:1");
        assert!((p.potential - 0.765_537_572_245_443_6).abs() < 1e-9);
    }
}
