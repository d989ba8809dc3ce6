//! Finite configurations of the stochastic model.
//!
//! A configuration of `n` particles at mass density `rho` is a sparse list of
//! cluster counts `x_i` with `sum_i i x_i = n`; the corresponding
//! concentrations are `c_i = (rho / n) x_i`. The set of all such
//! configurations is in bijection with the integer partitions of `n`.

use std::fmt;

use crate::error::{Error, Result};

/// Default largest `n` for which the state space may be enumerated (`p(60) = 966_467`).
pub const DEFAULT_ENUMERATION_CAP: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    /// `C_1 + C_i -> C_{i+1}`.
    Forward,
    /// `C_{i+1} -> C_1 + C_i`.
    Backward,
}

/// A point of the finite state space: integer cluster counts with exact mass `n`.
///
/// Counts are stored sorted by cluster size; zero counts are never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    n: usize,
    rho: f64,
    counts: Vec<(usize, u64)>,
}

impl Configuration {
    /// All mass in monomers: `{1 -> n}`.
    pub fn from_monomers(n: usize, rho: f64) -> Result<Self> {
        check_scale(n, rho)?;
        Ok(Configuration {
            n,
            rho,
            counts: vec![(1, n as u64)],
        })
    }

    /// Builds a configuration from `(size, count)` pairs; zero counts are dropped
    /// and repeated sizes are summed.
    pub fn from_counts<I>(n: usize, rho: f64, counts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, u64)>,
    {
        check_scale(n, rho)?;
        let mut v: Vec<(usize, u64)> = Vec::new();
        for (size, count) in counts {
            if size == 0 {
                return Err(Error::InvalidState("cluster sizes start at 1".into()));
            }
            if count > 0 {
                v.push((size, count));
            }
        }
        v.sort_unstable_by_key(|&(s, _)| s);
        v.dedup_by(|later, earlier| {
            if later.0 == earlier.0 {
                earlier.1 += later.1;
                true
            } else {
                false
            }
        });
        let cfg = Configuration { n, rho, counts: v };
        let mass = cfg.mass_units();
        if mass != n as u128 {
            return Err(Error::InvalidState(format!(
                "sum of i * x_i is {mass}, expected n = {n}"
            )));
        }
        Ok(cfg)
    }

    /// Parses a literal such as `1:2,2:1` (two monomers and one dimer).
    pub fn parse(literal: &str, n: usize, rho: f64) -> Result<Self> {
        let mut pairs = Vec::new();
        for item in literal.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (size, count) = item
                .split_once(':')
                .ok_or_else(|| Error::InvalidState(format!("expected `size:count`, got `{item}`")))?;
            let size = size
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidState(format!("bad cluster size in `{item}`")))?;
            let count = count
                .trim()
                .parse::<u64>()
                .map_err(|_| Error::InvalidState(format!("bad count in `{item}`")))?;
            pairs.push((size, count));
        }
        Self::from_counts(n, rho, pairs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `rho / n`, the concentration carried by one cluster.
    pub fn scale(&self) -> f64 {
        self.rho / self.n as f64
    }

    /// Nonzero `(size, count)` pairs in increasing size order.
    pub fn counts(&self) -> &[(usize, u64)] {
        &self.counts
    }

    pub fn count(&self, size: usize) -> u64 {
        match self.counts.binary_search_by_key(&size, |&(s, _)| s) {
            Ok(k) => self.counts[k].1,
            Err(_) => 0,
        }
    }

    pub fn max_size(&self) -> usize {
        self.counts.last().map_or(0, |&(s, _)| s)
    }

    /// `sum_i i x_i` in exact integer arithmetic.
    pub fn mass_units(&self) -> u128 {
        self.counts.iter().map(|&(s, c)| s as u128 * c as u128).sum()
    }

    /// `||c|| = sum_i i c_i`.
    pub fn mass(&self) -> f64 {
        self.counts.iter().map(|&(s, c)| s as f64 * c as f64).sum::<f64>() * self.scale()
    }

    /// Dense `c_i = (rho / n) x_i` for `i = 1..=max_size`.
    pub fn to_concentrations(&self) -> Vec<f64> {
        let scale = self.scale();
        let mut c = vec![0.0; self.max_size()];
        for &(s, x) in &self.counts {
            c[s - 1] = scale * x as f64;
        }
        c
    }

    fn add(&mut self, size: usize, delta: i64) -> bool {
        match self.counts.binary_search_by_key(&size, |&(s, _)| s) {
            Ok(k) => {
                let next = self.counts[k].1 as i64 + delta;
                if next < 0 {
                    return false;
                }
                if next == 0 {
                    self.counts.remove(k);
                } else {
                    self.counts[k].1 = next as u64;
                }
                true
            }
            Err(k) => {
                if delta < 0 {
                    return false;
                }
                if delta > 0 {
                    self.counts.insert(k, (size, delta as u64));
                }
                true
            }
        }
    }

    /// Whether the jump `±Delta_i` is feasible from this configuration.
    pub fn can_jump(&self, i: usize, direction: Direction) -> bool {
        if i == 0 {
            return false;
        }
        match direction {
            Direction::Forward => {
                let x1 = self.count(1);
                if i == 1 {
                    x1 >= 2
                } else {
                    x1 >= 1 && self.count(i) >= 1
                }
            }
            Direction::Backward => self.count(i + 1) >= 1,
        }
    }

    /// Applies `x + Delta_i` (forward) or `x - Delta_i` (backward) in place,
    /// with `Delta_i = e_{i+1} - e_i - e_1`.
    pub fn apply_jump_mut(&mut self, i: usize, direction: Direction) -> Result<()> {
        if !self.can_jump(i, direction) {
            return Err(Error::InfeasibleJump(format!(
                "{direction:?} reaction {i} from state {self}"
            )));
        }
        let sign = match direction {
            Direction::Forward => 1,
            Direction::Backward => -1,
        };
        let ok = self.add(1, -sign) && self.add(i, -sign) && self.add(i + 1, sign);
        debug_assert!(ok);
        debug_assert_eq!(self.mass_units(), self.n as u128);
        Ok(())
    }

    pub fn apply_jump(&self, i: usize, direction: Direction) -> Result<Self> {
        let mut next = self.clone();
        next.apply_jump_mut(i, direction)?;
        Ok(next)
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, (s, c)) in self.counts.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{s}:{c}")?;
        }
        Ok(())
    }
}

fn check_scale(n: usize, rho: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
    }
    Ok(())
}

/// Number of integer partitions of `n`, exact while it fits in `u128`.
pub fn partition_count(n: usize) -> Option<u128> {
    let mut ways = vec![0u128; n + 1];
    ways[0] = 1;
    for part in 1..=n {
        for total in part..=n {
            ways[total] = ways[total].checked_add(ways[total - part])?;
        }
    }
    Some(ways[n])
}

/// Hardy-Ramanujan estimate of `p(n)`.
pub fn partition_count_estimate(n: usize) -> f64 {
    if n <= 400 {
        if let Some(p) = partition_count(n) {
            return p as f64;
        }
    }
    let n = n as f64;
    (std::f64::consts::PI * (2.0 * n / 3.0).sqrt()).exp() / (4.0 * n * 3f64.sqrt())
}

/// Visits every partition of `n` as `(size, count)` pairs sorted by size.
///
/// Order is lexicographic on the decreasing part lists:
/// `[1,1,1,1] < [2,1,1] < [2,2] < [3,1] < [4]`.
pub fn for_each_partition<F>(n: usize, mut visit: F)
where
    F: FnMut(&[(usize, u64)]),
{
    fn recurse<F: FnMut(&[(usize, u64)])>(
        remaining: usize,
        max_part: usize,
        parts: &mut Vec<usize>,
        grouped: &mut Vec<(usize, u64)>,
        visit: &mut F,
    ) {
        if remaining == 0 {
            grouped.clear();
            for &p in parts.iter().rev() {
                match grouped.last_mut() {
                    Some((s, c)) if *s == p => *c += 1,
                    _ => grouped.push((p, 1)),
                }
            }
            visit(grouped);
            return;
        }
        for k in 1..=remaining.min(max_part) {
            parts.push(k);
            recurse(remaining - k, k, parts, grouped, visit);
            parts.pop();
        }
    }
    let mut parts = Vec::with_capacity(n);
    let mut grouped = Vec::with_capacity(n);
    recurse(n, n, &mut parts, &mut grouped, &mut visit);
}

pub fn enumerate_states(n: usize, rho: f64) -> Result<Vec<Configuration>> {
    enumerate_states_capped(n, rho, DEFAULT_ENUMERATION_CAP)
}

/// Every configuration of `n` particles in canonical partition order.
pub fn enumerate_states_capped(n: usize, rho: f64, cap: usize) -> Result<Vec<Configuration>> {
    check_scale(n, rho)?;
    check_cap(n, cap)?;
    let mut out = Vec::with_capacity(partition_count(n).unwrap_or(0) as usize);
    for_each_partition(n, |counts| {
        out.push(Configuration {
            n,
            rho,
            counts: counts.to_vec(),
        })
    });
    Ok(out)
}

pub(crate) fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::StateSpaceTooLarge {
            n,
            cap,
            estimate: partition_count_estimate(n),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn monomers() {
        let c = Configuration::from_monomers(5, 1.0).unwrap();
        assert_eq!(c.counts(), &[(1, 5)]);
        assert_eq!(c.to_string(), "1:5");
        let one = Configuration::from_monomers(1, 2.0).unwrap();
        assert_eq!(one.counts(), &[(1, 1)]);
        assert_eq!(one.mass(), 2.0);
        for n in [1usize, 7, 1000] {
            let c = Configuration::from_monomers(n, 0.3).unwrap();
            assert!((c.mass() - 0.3).abs() < 1e-15);
        }
        assert!(Configuration::from_monomers(0, 1.0).is_err());
        assert!(Configuration::from_monomers(3, 0.0).is_err());
    }

    #[test]
    fn concentrations() {
        let c = Configuration::parse("1:2,2:1", 4, 1.0).unwrap();
        assert_eq!(c.to_concentrations(), vec![0.5, 0.25]);
        let t = Configuration::parse("3:1", 3, 1.0).unwrap();
        assert_eq!(t.to_concentrations(), vec![0.0, 0.0, 1.0 / 3.0]);
        let t2 = Configuration::parse("3:1", 3, 2.0).unwrap();
        assert_eq!(t2.to_concentrations(), vec![0.0, 0.0, 2.0 / 3.0]);
    }

    #[test]
    fn parse_validates_mass() {
        assert!(Configuration::parse("1:2,2:2", 4, 1.0).is_err());
        assert!(Configuration::parse("1:x", 1, 1.0).is_err());
        assert!(Configuration::parse("0:1", 1, 1.0).is_err());
        let c = Configuration::parse(" 2:1 , 1:1,1:1", 4, 1.0).unwrap();
        assert_eq!(c.to_string(), "1:2,2:1");
    }

    #[test]
    fn jump_examples() {
        let c = Configuration::from_monomers(5, 1.0).unwrap();
        let c1 = c.apply_jump(1, Direction::Forward).unwrap();
        assert_eq!(c1.to_string(), "1:3,2:1");
        let c2 = c1.apply_jump(2, Direction::Forward).unwrap();
        assert_eq!(c2.to_string(), "1:2,3:1");
        let back = c2.apply_jump(2, Direction::Backward).unwrap();
        assert_eq!(back, c1);
    }

    #[test]
    fn infeasible_jumps() {
        let one = Configuration::parse("1:1,2:1", 3, 1.0).unwrap();
        assert!(matches!(
            one.apply_jump(1, Direction::Forward),
            Err(Error::InfeasibleJump(_))
        ));
        assert!(one.apply_jump(2, Direction::Backward).is_err());
        assert!(one.apply_jump(3, Direction::Forward).is_err());
        assert!(one.apply_jump(0, Direction::Forward).is_err());
    }

    #[test]
    fn enumeration_n4_order() {
        let states = enumerate_states(4, 1.0).unwrap();
        let lits: Vec<String> = states.iter().map(|s| s.to_string()).collect();
        assert_eq!(lits, ["1:4", "1:2,2:1", "2:2", "1:1,3:1", "4:1"]);
        assert_eq!(enumerate_states(1, 1.0).unwrap().len(), 1);
        assert_eq!(enumerate_states(5, 1.0).unwrap().len(), 7);
    }

    #[test]
    fn enumeration_cap() {
        let err = enumerate_states(61, 1.0).unwrap_err();
        assert!(matches!(err, Error::StateSpaceTooLarge { n: 61, cap: 60, .. }));
        assert_eq!(partition_count(60), Some(966_467));
    }

    /// Brute force: all multisets of sizes by nested search over counts.
    fn brute_partitions(n: usize) -> usize {
        fn go(rem: usize, size: usize) -> usize {
            if rem == 0 {
                return 1;
            }
            if size == 0 {
                return 0;
            }
            (0..=rem / size).map(|k| go(rem - k * size, size - 1)).sum()
        }
        go(n, n)
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for n in 1..=15 {
            assert_eq!(enumerate_states(n, 1.0).unwrap().len(), brute_partitions(n));
        }
    }

    fn random_feasible_walk(n: usize, choices: &[(usize, bool)]) -> Configuration {
        let mut c = Configuration::from_monomers(n, 1.0).unwrap();
        for &(i, fwd) in choices {
            let i = 1 + i % n;
            let dir = if fwd {
                Direction::Forward
            } else {
                Direction::Backward
            };
            if c.can_jump(i, dir) {
                c.apply_jump_mut(i, dir).unwrap();
            }
        }
        c
    }

    proptest! {
        #[test]
        fn mass_invariant_under_jumps(n in 1usize..60, choices in prop::collection::vec((0usize..100, any::<bool>()), 0..300)) {
            let c = random_feasible_walk(n, &choices);
            prop_assert_eq!(c.mass_units(), n as u128);
            prop_assert!(c.counts().iter().all(|&(s, x)| x > 0 && s <= n));
        }

        #[test]
        fn forward_then_backward_is_identity(n in 2usize..40, choices in prop::collection::vec((0usize..100, any::<bool>()), 0..100), i in 1usize..40) {
            let c = random_feasible_walk(n, &choices);
            if c.can_jump(i, Direction::Forward) {
                let there = c.apply_jump(i, Direction::Forward).unwrap();
                prop_assert_eq!(there.apply_jump(i, Direction::Backward).unwrap(), c);
            }
        }

        #[test]
        fn literal_round_trip(n in 1usize..40, choices in prop::collection::vec((0usize..100, any::<bool>()), 0..100)) {
            let c = random_feasible_walk(n, &choices);
            prop_assert_eq!(Configuration::parse(&c.to_string(), n, 1.0).unwrap(), c);
        }
    }
}
