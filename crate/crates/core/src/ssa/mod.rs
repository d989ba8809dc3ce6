//! Exact stochastic simulation of the stochastic Becker-Döring process.
//!
//! The generator acts on concentrations `c = (rho/n) x` with jumps of size
//! `(rho/n) Delta_i` at rate `(n/rho) A_i(c)` and `(n/rho) B_{i+1}(c)`. In count
//! variables this is the chain with rates
//!
//! ```text
//! forward  i = 1 :  a_1 (rho/n) x_1 (x_1 - 1)
//! forward  i >= 2:  a_i (rho/n) x_1 x_i
//! backward i     :  b_{i+1} x_{i+1}
//! ```
//!
//! Reactions are selected with the Gillespie direct method. Every forward rate
//! carries the monomer count, so the index keeps the `i >= 2` forward weights
//! as `a_i x_i` in one sum tree and multiplies by `(rho/n) x_1` at the root;
//! a jump then touches at most three leaves.

mod ensemble;
pub mod sum_tree;

use std::time::Instant;

use crate::error::{Error, Result};
use crate::kinetics::RateKernel;
use crate::rng::{self, SimRng};
use crate::state::{Configuration, Direction};

pub use ensemble::{ensemble, ensemble_in_family, EnsembleStats};
pub use sum_tree::SumTree;

/// Jumps between two full rebuilds of the propensity index.
pub const REBUILD_INTERVAL: u64 = 1_000_000;

/// One reaction channel and its CTMC rate in count variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRate {
    pub reaction: usize,
    pub direction: Direction,
    pub rate: f64,
}

/// Rates of every feasible channel of `cfg`, forward reactions first, each
/// group in increasing reaction index.
pub fn channel_rates(cfg: &Configuration, kernel: &RateKernel) -> Vec<ChannelRate> {
    let scale = cfg.scale();
    let x1 = cfg.count(1) as f64;
    let mut out = Vec::new();
    for &(size, x) in cfg.counts() {
        let rate = if size == 1 {
            kernel.a(1) * scale * x1 * (x1 - 1.0)
        } else {
            kernel.a(size) * scale * x1 * x as f64
        };
        if rate > 0.0 {
            out.push(ChannelRate {
                reaction: size,
                direction: Direction::Forward,
                rate,
            });
        }
    }
    for &(size, x) in cfg.counts() {
        if size >= 2 {
            out.push(ChannelRate {
                reaction: size - 1,
                direction: Direction::Backward,
                rate: kernel.b(size) * x as f64,
            });
        }
    }
    out
}

/// Sum-tree index over the channel rates of a dense count vector.
#[derive(Debug, Clone)]
pub struct PropensityIndex {
    /// Leaf `i >= 2`: `a_i x_i`.
    forward: SumTree,
    /// Leaf `i >= 1`: `b_{i+1} x_{i+1}`.
    backward: SumTree,
    /// Forward reaction 1: `a_1 (rho/n) x_1 (x_1 - 1)`.
    dimer: f64,
    /// `(rho/n) x_1`.
    monomer_factor: f64,
    scale: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PropensityIndex {
    /// `counts[s]` is the number of clusters of size `s` (`counts[0]` unused).
    pub fn new(counts: &[u64], kernel: &RateKernel, scale: f64) -> Self {
        let n = counts.len() - 1;
        let a: Vec<f64> = (0..=n + 1)
            .map(|i| if i >= 1 { kernel.a(i) } else { 0.0 })
            .collect();
        let b: Vec<f64> = (0..=n + 1)
            .map(|i| if i >= 2 { kernel.b(i) } else { 0.0 })
            .collect();
        let mut index = PropensityIndex {
            forward: SumTree::new(n + 1),
            backward: SumTree::new(n + 1),
            dimer: 0.0,
            monomer_factor: 0.0,
            scale,
            a,
            b,
        };
        index.rebuild(counts);
        index
    }

    pub fn rebuild(&mut self, counts: &[u64]) {
        let n = counts.len() - 1;
        for s in 2..=n {
            self.forward.set_leaf_raw(s, self.a[s] * counts[s] as f64);
            self.backward.set_leaf_raw(s - 1, self.b[s] * counts[s] as f64);
        }
        self.forward.rebuild();
        self.backward.rebuild();
        self.refresh_monomers(counts[1]);
    }

    fn refresh_monomers(&mut self, x1: u64) {
        let x1 = x1 as f64;
        self.monomer_factor = self.scale * x1;
        self.dimer = if x1 >= 2.0 {
            self.a[1] * self.scale * x1 * (x1 - 1.0)
        } else {
            0.0
        };
    }

    /// Refreshes the leaves that depend on the count of `size`.
    fn refresh_size(&mut self, size: usize, count: u64) {
        if size == 1 {
            self.refresh_monomers(count);
        } else if size < self.a.len() - 1 {
            self.forward.set(size, self.a[size] * count as f64);
            self.backward.set(size - 1, self.b[size] * count as f64);
        }
    }

    pub fn total(&self) -> f64 {
        self.dimer + self.monomer_factor * self.forward.total() + self.backward.total()
    }

    /// Rate of one channel as held by the index.
    pub fn rate(&self, reaction: usize, direction: Direction) -> f64 {
        match direction {
            Direction::Forward if reaction == 1 => self.dimer,
            Direction::Forward => self.monomer_factor * self.forward.get(reaction),
            Direction::Backward => self.backward.get(reaction),
        }
    }

    /// Sum of all channel rates computed leaf by leaf.
    pub fn brute_total(&self) -> f64 {
        self.dimer + self.monomer_factor * self.forward.brute_total() + self.backward.brute_total()
    }

    /// Channel whose cumulative rate interval contains `u in [0, total)`.
    pub fn select(&self, u: f64) -> (usize, Direction) {
        let fwd = self.monomer_factor * self.forward.total();
        let bwd = self.backward.total();
        if u < self.dimer || (fwd <= 0.0 && bwd <= 0.0) {
            return (1, Direction::Forward);
        }
        let u = u - self.dimer;
        if (u < fwd && fwd > 0.0) || bwd <= 0.0 {
            let k = self.forward.find(u / self.monomer_factor);
            return (k, Direction::Forward);
        }
        (self.backward.find(u - fwd), Direction::Backward)
    }
}

/// Outcome of one SSA step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    pub waiting_time: f64,
    pub reaction: usize,
    pub direction: Direction,
}

/// A single SSA trajectory in progress.
#[derive(Debug, Clone)]
pub struct Simulator {
    n: usize,
    rho: f64,
    counts: Vec<u64>,
    max_size: usize,
    index: PropensityIndex,
    time: f64,
    /// Absolute time of the next jump, once drawn.
    pending: Option<f64>,
    jumps: u64,
    since_rebuild: u64,
    rng: SimRng,
}

impl Simulator {
    pub fn new(cfg: &Configuration, kernel: &RateKernel, rng: SimRng) -> Self {
        let n = cfg.n();
        let mut counts = vec![0u64; n + 1];
        for &(s, x) in cfg.counts() {
            counts[s] = x;
        }
        let index = PropensityIndex::new(&counts, kernel, cfg.scale());
        Simulator {
            n,
            rho: cfg.rho(),
            counts,
            max_size: cfg.max_size(),
            index,
            time: 0.0,
            pending: None,
            jumps: 0,
            since_rebuild: 0,
            rng,
        }
    }

    pub fn with_seed(cfg: &Configuration, kernel: &RateKernel, seed: u64) -> Self {
        Self::new(cfg, kernel, rng::stream(seed, 0, 0))
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn jumps(&self) -> u64 {
        self.jumps
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Dense counts indexed by cluster size (`counts()[0]` is unused).
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn index(&self) -> &PropensityIndex {
        &self.index
    }

    pub fn total_rate(&self) -> f64 {
        self.index.total()
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::from_counts(self.n, self.rho, (1..=self.max_size).map(|s| (s, self.counts[s])))
            .expect("simulator state conserves mass")
    }

    /// `sum_i i x_i` over occupied sizes.
    pub fn mass_units(&self) -> u128 {
        (1..=self.max_size)
            .map(|s| s as u128 * self.counts[s] as u128)
            .sum()
    }

    fn next_jump_time(&mut self) -> Option<f64> {
        if self.pending.is_none() {
            let total = self.index.total();
            if total <= 0.0 {
                return None;
            }
            let dt = -rng::open_unit(&mut self.rng).ln() / total;
            self.pending = Some(self.time + dt);
        }
        self.pending
    }

    fn fire(&mut self, at: f64) -> Result<(usize, Direction)> {
        let total = self.index.total();
        let u = rand::Rng::random::<f64>(&mut self.rng) * total;
        let (i, direction) = self.index.select(u);
        self.apply(i, direction)?;
        self.time = at;
        self.pending = None;
        self.jumps += 1;
        self.since_rebuild += 1;
        if self.since_rebuild >= REBUILD_INTERVAL {
            self.index.rebuild(&self.counts);
            self.since_rebuild = 0;
        }
        Ok((i, direction))
    }

    fn apply(&mut self, i: usize, direction: Direction) -> Result<()> {
        let feasible = match direction {
            Direction::Forward if i == 1 => self.counts[1] >= 2,
            Direction::Forward => i < self.n && self.counts[1] >= 1 && self.counts[i] >= 1,
            Direction::Backward => i < self.n && self.counts[i + 1] >= 1,
        };
        if !feasible {
            return Err(Error::InternalInconsistency(format!(
                "selected infeasible {direction:?} reaction {i}"
            )));
        }
        match direction {
            Direction::Forward => {
                self.counts[1] -= 1;
                self.counts[i] -= 1;
                self.counts[i + 1] += 1;
                self.max_size = self.max_size.max(i + 1);
            }
            Direction::Backward => {
                self.counts[1] += 1;
                self.counts[i] += 1;
                self.counts[i + 1] -= 1;
                while self.max_size > 1 && self.counts[self.max_size] == 0 {
                    self.max_size -= 1;
                }
            }
        }
        for s in [1, i, i + 1] {
            self.index.refresh_size(s, self.counts[s]);
        }
        debug_assert_eq!(self.mass_units(), self.n as u128);
        Ok(())
    }

    /// Fires one jump; `None` in an absorbing state.
    pub fn step(&mut self) -> Result<Option<StepEvent>> {
        let before = self.time;
        let Some(at) = self.next_jump_time() else {
            return Ok(None);
        };
        let (reaction, direction) = self.fire(at)?;
        Ok(Some(StepEvent {
            waiting_time: at - before,
            reaction,
            direction,
        }))
    }

    /// Fires every jump at times `<= t` and moves the clock to `t`.
    /// Returns false once the state is absorbing.
    pub fn advance_to(&mut self, t: f64) -> Result<bool> {
        loop {
            match self.next_jump_time() {
                None => {
                    self.time = self.time.max(t);
                    return Ok(false);
                }
                Some(at) if at > t => {
                    self.time = self.time.max(t);
                    return Ok(true);
                }
                Some(at) => {
                    self.fire(at)?;
                }
            }
        }
    }

    /// Like [`Simulator::advance_to`], calling `on_jump(jump_time, sim)` once
    /// just before and once just after every jump.
    pub fn advance_to_with<F>(&mut self, t: f64, mut on_jump: F) -> Result<bool>
    where
        F: FnMut(f64, &Simulator),
    {
        loop {
            match self.next_jump_time() {
                None => {
                    self.time = self.time.max(t);
                    return Ok(false);
                }
                Some(at) if at > t => {
                    self.time = self.time.max(t);
                    return Ok(true);
                }
                Some(at) => {
                    on_jump(at, self);
                    self.fire(at)?;
                    on_jump(at, self);
                }
            }
        }
    }

    pub fn sample(&self, observe: &Observe<'_>) -> Sample {
        let scale = self.rho / self.n as f64;
        let cutoff = observe.cutoff.unwrap_or(self.n);
        let mut concentrations = vec![0.0; cutoff];
        let mut tail_units = 0u128;
        let mut moment = 0.0;
        for s in 1..=self.max_size {
            let x = self.counts[s];
            if x == 0 {
                continue;
            }
            if s <= cutoff {
                concentrations[s - 1] = scale * x as f64;
            } else {
                tail_units += s as u128 * x as u128;
            }
            if let Some(w) = observe.weight {
                moment += w(s) * scale * x as f64;
            }
        }
        Sample {
            t: self.time,
            concentrations,
            tail_mass: scale * tail_units as f64,
            mass: scale * self.mass_units() as f64,
            moment: observe.weight.map(|_| moment),
            jumps: self.jumps,
        }
    }
}

/// What to record at each sample time.
#[derive(Clone, Copy, Default)]
pub struct Observe<'a> {
    /// Largest cluster size reported individually (default: `n`).
    pub cutoff: Option<usize>,
    /// Weight `phi` for the moment `sum_i phi(i) c_i`.
    pub weight: Option<&'a (dyn Fn(usize) -> f64 + Sync)>,
}

impl std::fmt::Debug for Observe<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observe")
            .field("cutoff", &self.cutoff)
            .field("weight", &self.weight.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    /// `c_i` for `i = 1..=cutoff`.
    pub concentrations: Vec<f64>,
    /// `sum_{i > cutoff} i c_i`.
    pub tail_mass: f64,
    pub mass: f64,
    pub moment: Option<f64>,
    pub jumps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n: usize,
    pub rho: f64,
    pub samples: Vec<Sample>,
    pub total_jumps: u64,
    /// Time at which the chain reached an absorbing state, if it did.
    pub absorbed_at: Option<f64>,
    pub wall_seconds: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

pub(crate) fn validate_grid(grid: &[f64], t_end: f64) -> Result<()> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end must be >= 0, got {t_end}")));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sample grid is empty".into()));
    }
    if grid[0] < 0.0 || grid[grid.len() - 1] > t_end {
        return Err(Error::InvalidArgument(format!(
            "sample grid must lie in [0, {t_end}]"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "sample grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `points` equally spaced times on `[0, t_end]`.
pub fn uniform_grid(t_end: f64, points: usize) -> Vec<f64> {
    if points <= 1 || t_end == 0.0 {
        return vec![0.0];
    }
    (0..points)
        .map(|k| t_end * k as f64 / (points - 1) as f64)
        .collect()
}

/// Samples the process on `grid` with "last state at or before t" semantics.
pub(crate) fn run_on_grid(
    sim: &mut Simulator,
    grid: &[f64],
    observe: &Observe<'_>,
) -> Result<(Vec<Sample>, Option<f64>)> {
    let mut samples = Vec::with_capacity(grid.len());
    let mut absorbed_at = None;
    for &t in grid {
        let alive = sim.advance_to(t)?;
        if !alive && absorbed_at.is_none() {
            absorbed_at = Some(sim.time());
        }
        let mut s = sim.sample(observe);
        s.t = t;
        samples.push(s);
    }
    Ok((samples, absorbed_at))
}

/// Exact SSA trajectory from `cfg0`, sampled on `grid`.
pub fn simulate(
    cfg0: &Configuration,
    kernel: &RateKernel,
    t_end: f64,
    grid: &[f64],
    seed: u64,
    observe: &Observe<'_>,
) -> Result<Trajectory> {
    validate_grid(grid, t_end)?;
    let start = Instant::now();
    let mut sim = Simulator::with_seed(cfg0, kernel, seed);
    let (samples, absorbed_at) = run_on_grid(&mut sim, grid, observe)?;
    // Jumps between the last grid point and t_end are not observable.
    Ok(Trajectory {
        n: cfg0.n(),
        rho: cfg0.rho(),
        samples,
        total_jumps: sim.jumps(),
        absorbed_at,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
