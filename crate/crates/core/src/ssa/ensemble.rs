//! Replica ensembles with streaming statistics.
//!
//! Replica `r` of family `f` draws from `rng::stream(master_seed, f, r)`.
//! Replicas run in fixed-size blocks in parallel, and each block is folded
//! into the running statistics in replica order, so the result does not
//! depend on the number of worker threads.

use rayon::prelude::*;

use super::{run_on_grid, validate_grid, Observe, Sample, Simulator};
use crate::error::{Error, Result};
use crate::kinetics::RateKernel;
use crate::rng;
use crate::state::Configuration;

const BLOCK: usize = 64;

/// Samples, absorption time and jump count of one replica.
type ReplicaRun = (Vec<Sample>, Option<f64>, u64);

/// Per grid point and per column: mean and unbiased sample variance.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub replicas: usize,
    /// `c_1..c_K`, then `tail_mass`, `mass` and, if requested, `moment`.
    pub columns: Vec<String>,
    /// `mean[t][col]`.
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
    pub total_jumps: u64,
    /// Replicas that reached an absorbing state before the last grid time.
    pub absorbed: usize,
}

impl EnsembleStats {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Standard error of the mean at `(t, col)`.
    pub fn standard_error(&self, t: usize, col: usize) -> f64 {
        (self.variance[t][col] / self.replicas as f64).sqrt()
    }
}

fn row(sample: &Sample) -> impl Iterator<Item = f64> + '_ {
    sample
        .concentrations
        .iter()
        .copied()
        .chain([sample.tail_mass, sample.mass])
        .chain(sample.moment)
}

pub fn ensemble(
    cfg0: &Configuration,
    kernel: &RateKernel,
    t_end: f64,
    grid: &[f64],
    replicas: usize,
    master_seed: u64,
    observe: &Observe<'_>,
) -> Result<EnsembleStats> {
    ensemble_in_family(cfg0, kernel, t_end, grid, replicas, master_seed, 0, observe)
}

/// Ensemble whose replicas use stream family `family`, so that several
/// ensembles sharing one master seed stay independent.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_in_family(
    cfg0: &Configuration,
    kernel: &RateKernel,
    t_end: f64,
    grid: &[f64],
    replicas: usize,
    master_seed: u64,
    family: u32,
    observe: &Observe<'_>,
) -> Result<EnsembleStats> {
    validate_grid(grid, t_end)?;
    if replicas == 0 {
        return Err(Error::InvalidArgument("replica count must be >= 1".into()));
    }
    let cutoff = observe.cutoff.unwrap_or(cfg0.n());
    let mut columns: Vec<String> = (1..=cutoff).map(|i| format!("c_{i}")).collect();
    columns.push("tail_mass".into());
    columns.push("mass".into());
    if observe.weight.is_some() {
        columns.push("moment".into());
    }
    let width = columns.len();
    let mut mean = vec![vec![0.0; width]; grid.len()];
    let mut m2 = vec![vec![0.0; width]; grid.len()];
    let mut seen = 0usize;
    let mut total_jumps = 0u64;
    let mut absorbed = 0usize;

    for start in (0..replicas).step_by(BLOCK) {
        let end = (start + BLOCK).min(replicas);
        let block: Vec<Result<ReplicaRun>> = (start..end)
            .into_par_iter()
            .map(|r| {
                let mut sim = Simulator::new(cfg0, kernel, rng::stream(master_seed, family, r as u32));
                let (samples, absorbed_at) = run_on_grid(&mut sim, grid, observe)?;
                Ok((samples, absorbed_at, sim.jumps()))
            })
            .collect();
        for item in block {
            let (samples, absorbed_at, jumps) = item?;
            seen += 1;
            total_jumps += jumps;
            if absorbed_at.is_some_and(|t| t < grid[grid.len() - 1]) {
                absorbed += 1;
            }
            for (k, s) in samples.iter().enumerate() {
                for (col, x) in row(s).enumerate() {
                    let delta = x - mean[k][col];
                    mean[k][col] += delta / seen as f64;
                    m2[k][col] += delta * (x - mean[k][col]);
                }
            }
        }
    }
    let variance = m2
        .into_iter()
        .map(|r| {
            r.into_iter()
                .map(|v| {
                    if seen > 1 {
                        (v / (seen - 1) as f64).max(0.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    Ok(EnsembleStats {
        times: grid.to_vec(),
        replicas: seen,
        columns,
        mean,
        variance,
        total_jumps,
        absorbed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssa::{simulate, uniform_grid};

    #[test]
    fn single_replica_is_the_trajectory() {
        let k = RateKernel::constant(1.0, 1.0).unwrap();
        let c = Configuration::from_monomers(30, 1.0).unwrap();
        let grid = uniform_grid(2.0, 11);
        let obs = Observe {
            cutoff: Some(5),
            weight: None,
        };
        let e = ensemble(&c, &k, 2.0, &grid, 1, 42, &obs).unwrap();
        let mut sim = Simulator::new(&c, &k, rng::stream(42, 0, 0));
        let (samples, _) = run_on_grid(&mut sim, &grid, &obs).unwrap();
        for (t, s) in samples.iter().enumerate() {
            let expect: Vec<f64> = row(s).collect();
            assert_eq!(e.mean[t], expect);
            assert!(e.variance[t].iter().all(|&v| v == 0.0));
        }
        // simulate uses the same stream rule with family 0, replica 0
        let tr = simulate(&c, &k, 2.0, &grid, 42, &obs).unwrap();
        assert_eq!(tr.samples, samples);
    }

    #[test]
    fn mass_has_zero_variance_and_thread_count_is_irrelevant() {
        let k = RateKernel::constant(1.0, 1.0).unwrap();
        let c = Configuration::from_monomers(40, 1.0).unwrap();
        let grid = uniform_grid(1.0, 5);
        let obs = Observe {
            cutoff: Some(4),
            weight: None,
        };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| ensemble(&c, &k, 1.0, &grid, 150, 7, &obs).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
        let mass = one.column("mass").unwrap();
        for t in 0..grid.len() {
            assert_eq!(one.mean[t][mass], 1.0);
            assert_eq!(one.variance[t][mass], 0.0);
        }
    }

    /// n = 2: the two states {1:2} and {2:1} each hold probability 1/2.
    #[test]
    fn two_state_occupancy_at_large_time() {
        let k = RateKernel::constant(1.0, 1.0).unwrap();
        let c = Configuration::from_monomers(2, 1.0).unwrap();
        let obs = Observe {
            cutoff: Some(2),
            weight: None,
        };
        let e = ensemble(&c, &k, 20.0, &[20.0], 4000, 3, &obs).unwrap();
        // c_2 = (1/2) x_2 so P(dimer) = 2 E[c_2]
        let p = 2.0 * e.mean[0][1];
        let se = 2.0 * e.standard_error(0, 1);
        assert!((p - 0.5).abs() < 3.0 * se, "{p} +- {se}");
    }
}
