//! Exact stationary law of the stochastic process on `E^n_rho`.
//!
//! With `lambda_i = (n/rho) Q_i z^i` the reversible measure is
//!
//! ```text
//! Pi(x) = (1/B) prod_{i=1}^{n} lambda_i^{x_i} / x_i! * exp(-lambda_i)
//! ```
//!
//! Since `sum_i i x_i = n` on the state space, `z` only enters through the
//! state-independent factor `z^n exp(-sum_i lambda_i)`, so weights are stored
//! as a z-free core `s(x) = sum_i x_i ln((n/rho) Q_i) - ln x_i!` plus that
//! constant. Probabilities are then exactly independent of `z`.

use std::collections::HashMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::kinetics::{detailed_balance_coefficients, moment_series, RateKernel, SeriesOutcome};
use crate::ssa::channel_rates;
use crate::state::{
    check_cap, enumerate_states_capped, for_each_partition, Configuration, Direction, DEFAULT_ENUMERATION_CAP,
};

/// Largest `n` accepted by the dense linear-solve oracle.
pub const ORACLE_MAX_N: usize = 12;

fn core_weight(counts: &[(usize, u64)], log_lambda0: &[f64]) -> f64 {
    counts
        .iter()
        .map(|&(s, x)| x as f64 * log_lambda0[s - 1] - ln_factorial(x))
        .sum()
}

/// `ln((n/rho) Q_i)` for `i = 1..=n`.
fn log_lambda0(n: usize, rho: f64, kernel: &RateKernel) -> Result<Vec<f64>> {
    let shift = (n as f64 / rho).ln();
    Ok(detailed_balance_coefficients(kernel, n)?
        .into_iter()
        .map(|lq| lq + shift)
        .collect())
}

/// `n ln z - (n/rho) sum_{i<=n} Q_i z^i`, the state-independent part of every log weight.
fn log_weight_offset(n: usize, rho: f64, log_q: &[f64], z: f64) -> f64 {
    let ln_z = z.ln();
    let lambda_sum: f64 = log_q
        .iter()
        .enumerate()
        .map(|(k, lq)| (lq + (k + 1) as f64 * ln_z).exp())
        .sum::<f64>()
        * (n as f64 / rho);
    n as f64 * ln_z - lambda_sum
}

fn check_z(z: f64) -> Result<()> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::InvalidArgument(format!("z must be > 0, got {z}")));
    }
    Ok(())
}

/// Unnormalized `ln Pi(x)` including every `exp(-lambda_i)` factor.
pub fn log_stationary_weight(cfg: &Configuration, kernel: &RateKernel, z: f64) -> Result<f64> {
    check_z(z)?;
    let (n, rho) = (cfg.n(), cfg.rho());
    let l0 = log_lambda0(n, rho, kernel)?;
    let log_q: Vec<f64> = detailed_balance_coefficients(kernel, n)?;
    Ok(core_weight(cfg.counts(), &l0) + log_weight_offset(n, rho, &log_q, z))
}

/// `ln B^z_n` without materializing the state space; deterministic visit order.
pub fn log_normalizer(n: usize, rho: f64, kernel: &RateKernel, z: f64) -> Result<f64> {
    log_normalizer_capped(n, rho, kernel, z, DEFAULT_ENUMERATION_CAP)
}

pub fn log_normalizer_capped(n: usize, rho: f64, kernel: &RateKernel, z: f64, cap: usize) -> Result<f64> {
    check_z(z)?;
    check_cap(n, cap)?;
    // validates n and rho
    Configuration::from_monomers(n, rho)?;
    let l0 = log_lambda0(n, rho, kernel)?;
    let log_q = detailed_balance_coefficients(kernel, n)?;
    // two passes: the max first, then a plain sum, for an order-stable result
    let mut max = f64::NEG_INFINITY;
    for_each_partition(n, |counts| max = max.max(core_weight(counts, &l0)));
    let mut sum = 0.0;
    for_each_partition(n, |counts| sum += (core_weight(counts, &l0) - max).exp());
    Ok(max + sum.ln() + log_weight_offset(n, rho, &log_q, z))
}

/// The enumerated state space with exact stationary probabilities.
#[derive(Debug, Clone)]
pub struct StationaryTable {
    pub n: usize,
    pub rho: f64,
    pub z: f64,
    pub kernel: RateKernel,
    /// Canonical partition order.
    pub states: Vec<Configuration>,
    /// Unnormalized `ln Pi`.
    pub log_weights: Vec<f64>,
    /// z-free cores `s(x)`; `log_weights` minus a state-independent constant.
    pub log_cores: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// `ln B^z_n`.
    pub log_b: f64,
    log_q: Vec<f64>,
    /// `ln sum_x exp(s(x))` over the z-free cores.
    log_core_sum: f64,
    lookup: OnceLock<HashMap<Vec<(usize, u64)>, usize>>,
}

impl StationaryTable {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn index_of(&self, cfg: &Configuration) -> Option<usize> {
        if cfg.n() != self.n || cfg.rho() != self.rho {
            return None;
        }
        let map = self.lookup.get_or_init(|| {
            self.states
                .iter()
                .enumerate()
                .map(|(k, s)| (s.counts().to_vec(), k))
                .collect()
        });
        map.get(cfg.counts()).copied()
    }

    /// `ln Pi(cfg)` after normalization.
    pub fn log_probability(&self, cfg: &Configuration) -> Result<f64> {
        let k = self.index_of(cfg).ok_or_else(|| {
            Error::InvalidState(format!("{cfg} is not in E^{} with rho = {}", self.n, self.rho))
        })?;
        Ok(self.log_cores[k] - self.log_core_sum)
    }

    /// `ln B^{z'}_n` for another activity `z'`.
    pub fn log_b_at(&self, z: f64) -> Result<f64> {
        check_z(z)?;
        Ok(self.log_core_sum + log_weight_offset(self.n, self.rho, &self.log_q, z))
    }

    /// The most probable state.
    pub fn mode(&self) -> &Configuration {
        let k = self.probabilities.iter().enumerate().fold(0, |best, (k, p)| {
            if *p > self.probabilities[best] {
                k
            } else {
                best
            }
        });
        &self.states[k]
    }
}

pub fn stationary_table(n: usize, rho: f64, kernel: &RateKernel, z: f64) -> Result<StationaryTable> {
    stationary_table_capped(n, rho, kernel, z, DEFAULT_ENUMERATION_CAP)
}

pub fn stationary_table_capped(
    n: usize,
    rho: f64,
    kernel: &RateKernel,
    z: f64,
    cap: usize,
) -> Result<StationaryTable> {
    check_z(z)?;
    let states = enumerate_states_capped(n, rho, cap)?;
    let l0 = log_lambda0(n, rho, kernel)?;
    let log_q = detailed_balance_coefficients(kernel, n)?;
    let cores: Vec<f64> = states.par_iter().map(|s| core_weight(s.counts(), &l0)).collect();
    let max = cores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = cores.iter().map(|c| (c - max).exp()).sum();
    let log_core_sum = max + sum.ln();
    let offset = log_weight_offset(n, rho, &log_q, z);
    let probabilities = cores.iter().map(|c| (c - log_core_sum).exp()).collect();
    let log_weights = cores.iter().map(|c| c + offset).collect();
    Ok(StationaryTable {
        n,
        rho,
        z,
        kernel: kernel.clone(),
        states,
        log_weights,
        log_cores: cores,
        probabilities,
        log_b: log_core_sum + offset,
        log_q,
        log_core_sum,
        lookup: OnceLock::new(),
    })
}

/// Concentration-form rate `A_i(c)` of the forward reaction `i`.
fn forward_rate(cfg: &Configuration, kernel: &RateKernel, i: usize) -> f64 {
    let h = cfg.scale();
    let c1 = h * cfg.count(1) as f64;
    if i == 1 {
        kernel.a(1) * c1 * (c1 - h)
    } else {
        kernel.a(i) * c1 * h * cfg.count(i) as f64
    }
}

/// Largest relative violation of `A_i(c) Pi(c) = B_{i+1}(c') Pi(c')` over all
/// feasible forward edges `c -> c' = c + (rho/n) Delta_i`; 0 when there are none.
pub fn detailed_balance_check(table: &StationaryTable) -> Result<f64> {
    let kernel = &table.kernel;
    let mut worst = 0.0f64;
    for (k, cfg) in table.states.iter().enumerate() {
        for i in 1..table.n {
            if !cfg.can_jump(i, Direction::Forward) {
                continue;
            }
            let next = cfg.apply_jump(i, Direction::Forward)?;
            let j = table
                .index_of(&next)
                .ok_or_else(|| Error::InternalInconsistency(format!("{next} missing from table")))?;
            let a = forward_rate(cfg, kernel, i);
            let b = kernel.b(i + 1) * next.scale() * next.count(i + 1) as f64;
            // ratio of the two edge fluxes, in log space
            // cores, not full weights: the shared offset can be large
            let log_ratio = (b.ln() + table.log_cores[j]) - (a.ln() + table.log_cores[k]);
            worst = worst.max(log_ratio.exp_m1().abs());
        }
    }
    Ok(worst)
}

/// Stationary vector of the generator built from [`channel_rates`], by dense LU.
pub fn ctmc_stationary_oracle(n: usize, rho: f64, kernel: &RateKernel) -> Result<Vec<f64>> {
    if n > ORACLE_MAX_N {
        return Err(Error::StateSpaceTooLarge {
            n,
            cap: ORACLE_MAX_N,
            estimate: crate::state::partition_count_estimate(n),
        });
    }
    let states = enumerate_states_capped(n, rho, ORACLE_MAX_N)?;
    let m = states.len();
    let index: HashMap<Vec<(usize, u64)>, usize> = states
        .iter()
        .enumerate()
        .map(|(k, s)| (s.counts().to_vec(), k))
        .collect();
    // generator G[from, to]
    let mut g = DMatrix::<f64>::zeros(m, m);
    for (from, cfg) in states.iter().enumerate() {
        for ch in channel_rates(cfg, kernel) {
            let next = cfg.apply_jump(ch.reaction, ch.direction)?;
            let to = index[next.counts()];
            g[(from, to)] += ch.rate;
            g[(from, from)] -= ch.rate;
        }
    }
    // pi G = 0 with sum pi = 1: transpose and replace the last equation
    let mut lhs = g.transpose();
    for col in 0..m {
        lhs[(m - 1, col)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let pi = lhs.lu().solve(&rhs).ok_or(Error::Reducible)?;
    if pi.iter().any(|p| !p.is_finite()) {
        return Err(Error::Reducible);
    }
    Ok(pi.iter().copied().collect())
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Precomputed reference profile `c^z` for evaluating `H(. | c^z)`.
#[derive(Debug, Clone)]
pub struct EntropyReference {
    pub z: f64,
    /// `ln c^z_i`, `i = 1..=len`.
    log_cz: Vec<f64>,
    /// `sum_{i>=1} c^z_i`.
    pub total: f64,
    pub tail_bound: f64,
    kernel: RateKernel,
}

impl EntropyReference {
    /// `support` is the largest size the evaluated sequences may occupy;
    /// `tol` bounds the truncation error of `sum_i c^z_i`.
    pub fn new(kernel: &RateKernel, z: f64, support: usize, tol: f64) -> Result<Self> {
        check_z(z)?;
        let (total, tail_bound) = match moment_series(kernel, z, 0, 1, tol) {
            SeriesOutcome::Divergent => return Err(Error::DivergentReference { z }),
            SeriesOutcome::Converged(s) => (s.value, s.tail_bound),
        };
        let ln_z = z.ln();
        let log_cz = detailed_balance_coefficients(kernel, support.max(1))?
            .into_iter()
            .enumerate()
            .map(|(k, lq)| lq + (k + 1) as f64 * ln_z)
            .collect();
        Ok(EntropyReference {
            z,
            log_cz,
            total,
            tail_bound,
            kernel: kernel.clone(),
        })
    }

    fn log_cz(&self, i: usize) -> f64 {
        match self.log_cz.get(i - 1) {
            Some(v) => *v,
            None => {
                detailed_balance_coefficients(&self.kernel, i).expect("validated kernel")[i - 1]
                    + i as f64 * self.z.ln()
            }
        }
    }

    /// `sum_{c_i > 0} c_i (ln(c_i / c^z_i) - 1) + sum_i c^z_i`.
    pub fn entropy(&self, c: &[f64]) -> f64 {
        let mut h = self.total;
        for (k, &x) in c.iter().enumerate() {
            if x > 0.0 {
                h += x * (x.ln() - self.log_cz(k + 1) - 1.0);
            }
        }
        h
    }

    /// The finite part `sum_{c_i > 0} c_i (ln(c_i / c^z_i) - 1)` for a sparse `(size, c_i)` list.
    fn entropy_finite_sparse(&self, c: &[(usize, f64)]) -> f64 {
        c.iter()
            .filter(|(_, x)| *x > 0.0)
            .map(|&(i, x)| x * (x.ln() - self.log_cz(i) - 1.0))
            .sum()
    }
}

/// `H(c | c^z) = sum_i c_i (ln(c_i / (Q_i z^i)) - 1) + Q_i z^i` with `0 ln 0 = 0`.
pub fn relative_entropy(c: &[f64], kernel: &RateKernel, z: f64, tol: f64) -> Result<f64> {
    Ok(EntropyReference::new(kernel, z, c.len(), tol)?.entropy(c))
}

/// `R_n = (rho/n) sum_{x_i > 0} (ln x_i! - x_i ln x_i + x_i)`.
pub fn stirling_remainder(cfg: &Configuration) -> f64 {
    cfg.scale()
        * cfg
            .counts()
            .iter()
            .map(|&(_, x)| {
                let xf = x as f64;
                ln_factorial(x) - xf * xf.ln() + xf
            })
            .sum::<f64>()
}

/// `-(rho/n) ln Pi(cfg)`.
pub fn nonequilibrium_potential(cfg: &Configuration, table: &StationaryTable) -> Result<f64> {
    Ok(-cfg.scale() * table.log_probability(cfg)?)
}

/// Terms of `-(rho/n) ln Pi = H(c|c^z) - sum_{i>n} c^z_i + R_n + (rho/n) ln B^z_n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    pub z: f64,
    pub entropy: f64,
    /// `sum_{i>n} Q_i z^i`.
    pub tail: f64,
    pub tail_bound: f64,
    pub stirling: f64,
    /// `(rho/n) ln B^z_n`.
    pub scaled_log_b: f64,
    pub reconstructed: f64,
    pub direct: f64,
}

impl EntropyReport {
    pub fn error(&self) -> f64 {
        (self.reconstructed - self.direct).abs()
    }
}

/// Tolerance on the decomposition identity.
pub const DECOMPOSITION_TOL: f64 = 1e-10;

/// Evaluates each term of the potential identity independently and checks it.
pub fn potential_decomposition(
    cfg: &Configuration,
    kernel: &RateKernel,
    z: f64,
    table: &StationaryTable,
) -> Result<EntropyReport> {
    let direct = nonequilibrium_potential(cfg, table)?;
    let log_b = table.log_b_at(z)?;
    let report = decompose(cfg, kernel, z, log_b, direct)?;
    if !(report.error() <= DECOMPOSITION_TOL) {
        return Err(Error::InternalInconsistency(format!(
            "potential identity off by {:e} at {cfg}, z = {z}",
            report.error()
        )));
    }
    Ok(report)
}

/// Same identity with `ln B^z_n` and the direct potential supplied by the caller,
/// for spaces too large to tabulate.
pub fn decompose(
    cfg: &Configuration,
    kernel: &RateKernel,
    z: f64,
    log_b: f64,
    direct: f64,
) -> Result<EntropyReport> {
    let n = cfg.n();
    let scale = cfg.scale();
    let reference = EntropyReference::new(kernel, z, n, 1e-16)?;
    let c: Vec<(usize, f64)> = cfg.counts().iter().map(|&(s, x)| (s, scale * x as f64)).collect();
    let entropy = reference.entropy_finite_sparse(&c) + reference.total;
    let (tail, tail_bound) = match moment_series(kernel, z, 0, n + 1, 1e-16) {
        SeriesOutcome::Divergent => return Err(Error::DivergentReference { z }),
        SeriesOutcome::Converged(s) => (s.value, s.tail_bound),
    };
    let stirling = stirling_remainder(cfg);
    let scaled_log_b = scale * log_b;
    Ok(EntropyReport {
        z,
        entropy,
        tail,
        tail_bound,
        stirling,
        scaled_log_b,
        reconstructed: entropy - tail + stirling + scaled_log_b,
        direct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::solve_z_of_rho;

    fn unit() -> RateKernel {
        RateKernel::constant(1.0, 1.0).unwrap()
    }

    #[test]
    fn three_particle_weights() {
        let k = unit();
        let t = stationary_table(3, 1.0, &k, 1.0).unwrap();
        let lit: Vec<String> = t.states.iter().map(|s| s.to_string()).collect();
        assert_eq!(lit, ["1:3", "1:1,2:1", "3:1"]);
        // 27/6 : 9 : 3 after removing exp(-sum lambda)
        let ratios: Vec<f64> = t
            .log_weights
            .iter()
            .map(|w| (w - t.log_weights[2]).exp())
            .collect();
        for (r, e) in ratios.iter().zip([1.5, 3.0, 1.0]) {
            assert!((r - e).abs() < 1e-14);
        }
        for (p, e) in t.probabilities.iter().zip([3.0 / 11.0, 6.0 / 11.0, 2.0 / 11.0]) {
            assert!((p - e).abs() < 1e-15);
        }
        let pot = nonequilibrium_potential(&t.states[0], &t).unwrap();
        assert!((pot - (-(3.0f64 / 11.0).ln() / 3.0)).abs() < 1e-15);
        assert!((pot - 0.433_094_3).abs() < 1e-7);
    }

    #[test]
    fn single_state_space() {
        let t = stationary_table(1, 2.0, &unit(), 0.7).unwrap();
        assert_eq!(t.probabilities, vec![1.0]);
        assert_eq!(detailed_balance_check(&t).unwrap(), 0.0);
        assert_eq!(ctmc_stationary_oracle(1, 2.0, &unit()).unwrap(), vec![1.0]);
    }

    #[test]
    fn oracle_small_cases() {
        let pi = ctmc_stationary_oracle(2, 1.0, &unit()).unwrap();
        assert!((pi[0] - 0.5).abs() < 1e-15 && (pi[1] - 0.5).abs() < 1e-15);
        let pi = ctmc_stationary_oracle(3, 1.0, &unit()).unwrap();
        for (p, e) in pi.iter().zip([3.0 / 11.0, 6.0 / 11.0, 2.0 / 11.0]) {
            assert!((p - e).abs() < 1e-14);
        }
        assert!(ctmc_stationary_oracle(13, 1.0, &unit()).is_err());
    }

    #[test]
    fn z_only_shifts_log_weights() {
        let k = RateKernel::power_db(4.0).unwrap();
        let a = stationary_table(9, 1.0, &k, 0.5).unwrap();
        let b = stationary_table(9, 1.0, &k, 2.0).unwrap();
        assert_eq!(a.probabilities, b.probabilities);
        let shift = a.log_weights[0] - b.log_weights[0];
        for (x, y) in a.log_weights.iter().zip(&b.log_weights) {
            assert!((x - y - shift).abs() < 1e-9);
        }
        assert!((a.log_b_at(2.0).unwrap() - b.log_b).abs() < 1e-9 * b.log_b.abs());
        // streaming normalizer agrees with the table
        let s = log_normalizer(9, 1.0, &k, 0.5).unwrap();
        assert!((s - a.log_b).abs() < 1e-12 * a.log_b.abs().max(1.0));
    }

    #[test]
    fn detailed_balance_power_db() {
        let k = RateKernel::power_db(4.0).unwrap();
        let t = stationary_table(6, 1.0, &k, 1.0).unwrap();
        assert!(detailed_balance_check(&t).unwrap() <= 1e-10);
        let oracle = ctmc_stationary_oracle(6, 1.0, &k).unwrap();
        assert!(total_variation(&oracle, &t.probabilities) <= 1e-10);
    }

    #[test]
    fn relative_entropy_examples() {
        let k = unit();
        let z = (3.0 - 5f64.sqrt()) / 2.0;
        let cz: Vec<f64> = (1..=200).map(|i| z.powi(i)).collect();
        assert!(relative_entropy(&cz, &k, z, 1e-15).unwrap().abs() < 1e-12);
        let zero = relative_entropy(&[0.0; 4], &k, z, 1e-15).unwrap();
        assert!((zero - z / (1.0 - z)).abs() < 1e-14);
        let mono = relative_entropy(&[1.0], &k, z, 1e-15).unwrap();
        let expect = (1.0 / z).ln() - 1.0 + z / (1.0 - z);
        assert!((mono - expect).abs() < 1e-14);
        assert!(matches!(
            relative_entropy(&[1.0], &k, 1.0, 1e-12),
            Err(Error::DivergentReference { .. })
        ));
        // entropy is positive away from c^z
        let z1 = solve_z_of_rho(&k, 1.0, 1e-13).unwrap();
        assert!(relative_entropy(&[0.5, 0.25], &k, z1, 1e-15).unwrap() > 0.0);
    }

    #[test]
    fn stirling_examples() {
        let single = Configuration::parse("1:1,2:2", 5, 1.0).unwrap();
        // x = 1 contributes rho/n; x = 2 contributes (rho/n)(ln 2 - 2 ln 2 + 2)
        let expect = 0.2 * (1.0 + (2.0 - 2f64.ln()));
        assert!((stirling_remainder(&single) - expect).abs() < 1e-15);
        let n = 10_000;
        let mono = Configuration::from_monomers(n, 1.0).unwrap();
        let stirling = 0.5 * (2.0 * std::f64::consts::PI * n as f64).ln() / n as f64;
        assert!((stirling_remainder(&mono) - stirling).abs() < 1e-6);
    }

    #[test]
    fn decomposition_identity_small() {
        let k = unit();
        let t = stationary_table(3, 1.0, &k, 1.0).unwrap();
        for z in [0.2, 0.5, 0.9] {
            for s in &t.states {
                let r = potential_decomposition(s, &k, z, &t).unwrap();
                assert!(r.error() <= 1e-12, "{s} z={z}: {r:?}");
            }
        }
        let r = potential_decomposition(&t.states[0], &k, 0.5, &t).unwrap();
        assert!((r.reconstructed - 0.433_094_3).abs() < 1e-7);
    }

    #[test]
    fn scaled_log_normalizer_is_nonpositive() {
        let k = unit();
        let z = solve_z_of_rho(&k, 1.0, 1e-13).unwrap();
        for n in [5, 10, 20] {
            let lb = log_normalizer(n, 1.0, &k, z).unwrap();
            assert!(lb <= 0.0, "n={n}: {lb}");
        }
    }
}
