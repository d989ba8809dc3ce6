//! Truncated deterministic Becker-Döring equations.
//!
//! With fluxes `J_i = a_i c_1 c_i - b_{i+1} c_{i+1}` for `i < I` and a closed
//! boundary `J_I = 0`,
//!
//! ```text
//! dc_1/dt = -J_1 - sum_{i=1}^{I-1} J_i
//! dc_i/dt = J_{i-1} - J_i        2 <= i <= I-1
//! dc_I/dt = J_{I-1}
//! ```
//!
//! which conserves `sum_i i c_i` exactly. Integration uses the Dormand-Prince
//! 5(4) pair with the Hairer PI step controller and 4th-order dense output.

use crate::error::{Error, Result};
use crate::kinetics::RateKernel;
use crate::stationary::EntropyReference;

/// A point of the truncated phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct DbdState {
    pub t: f64,
    /// `c_i` for `i = 1..=I`.
    pub c: Vec<f64>,
}

impl DbdState {
    pub fn new(c: Vec<f64>) -> Self {
        DbdState { t: 0.0, c }
    }

    /// `c_1 = rho`, every other size empty.
    pub fn monomeric(rho: f64, truncation: usize) -> Self {
        let mut c = vec![0.0; truncation];
        c[0] = rho;
        DbdState::new(c)
    }

    /// Pads or cuts `c` to `truncation` sizes.
    pub fn from_concentrations(c: &[f64], truncation: usize) -> Self {
        let mut v = vec![0.0; truncation];
        let k = c.len().min(truncation);
        v[..k].copy_from_slice(&c[..k]);
        DbdState::new(v)
    }

    pub fn truncation(&self) -> usize {
        self.c.len()
    }

    pub fn mass(&self) -> f64 {
        mass(&self.c)
    }
}

pub fn mass(c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Number of sizes `I` kept.
    pub truncation: usize,
    /// Output times; empty means 101 equally spaced points on `[0, t_end]`.
    pub grid: Vec<f64>,
    pub max_steps: usize,
    /// Keep the interpolant of every step so the solution can be evaluated anywhere.
    pub keep_dense: bool,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            rtol: 1e-8,
            atol: 1e-12,
            max_step: f64::INFINITY,
            truncation: 64,
            grid: Vec::new(),
            max_steps: 10_000_000,
            keep_dense: false,
        }
    }
}

impl IntegratorConfig {
    pub fn with_truncation(truncation: usize) -> Self {
        IntegratorConfig {
            truncation,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(Error::InvalidArgument("tolerances must be > 0".into()));
        }
        if self.truncation < 2 {
            return Err(Error::InvalidArgument(format!(
                "truncation must be >= 2, got {}",
                self.truncation
            )));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::InvalidArgument("max_step must be > 0".into()));
        }
        Ok(())
    }
}

/// `J_i`, `i = 1..I-1`, for the state `c` of length `I >= 2`.
pub fn fluxes(c: &[f64], kernel: &RateKernel) -> Vec<f64> {
    let rates = Rates::new(kernel, c.len());
    let mut j = vec![0.0; c.len().saturating_sub(1)];
    rates.fluxes(c, &mut j);
    j
}

pub fn rhs(c: &[f64], kernel: &RateKernel) -> Vec<f64> {
    let rates = Rates::new(kernel, c.len());
    let mut scratch = vec![0.0; c.len().saturating_sub(1)];
    let mut out = vec![0.0; c.len()];
    rates.rhs(c, &mut scratch, &mut out);
    out
}

/// Rate constants cached for a fixed truncation.
#[derive(Debug, Clone)]
struct Rates {
    /// `a[k] = a_{k+1}`
    a: Vec<f64>,
    /// `b[k] = b_{k+2}`
    b: Vec<f64>,
}

impl Rates {
    fn new(kernel: &RateKernel, truncation: usize) -> Self {
        let m = truncation.saturating_sub(1);
        Rates {
            a: (1..=m).map(|i| kernel.a(i)).collect(),
            b: (2..=m + 1).map(|i| kernel.b(i)).collect(),
        }
    }

    fn fluxes(&self, c: &[f64], j: &mut [f64]) {
        let c1 = c[0];
        for k in 0..j.len() {
            j[k] = self.a[k] * c1 * c[k] - self.b[k] * c[k + 1];
        }
    }

    fn rhs(&self, c: &[f64], j: &mut [f64], out: &mut [f64]) {
        self.fluxes(c, j);
        let total: f64 = j.iter().sum();
        out[0] = -j[0] - total;
        let m = j.len();
        for k in 1..m {
            out[k] = j[k - 1] - j[k];
        }
        out[m] = j[m - 1];
    }

    /// Largest rate scale `max(a_i c_1, b_{i+1})` at `c`.
    fn scale(&self, c: &[f64]) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| (a * c[0]).max(*b))
            .fold(0.0, f64::max)
    }
}

/// `||rhs(c)||_inf / max(a_i c_1, b_{i+1})`.
pub fn scaled_residual(c: &[f64], kernel: &RateKernel) -> f64 {
    let rates = Rates::new(kernel, c.len());
    let r = rhs(c, kernel);
    let sup = r.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = rates.scale(c);
    if scale > 0.0 {
        sup / scale
    } else {
        sup
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub min_step: f64,
    pub max_step: f64,
    /// Components in `(-atol, 0)` reset to zero.
    pub clipped: usize,
}

/// Interpolant of one accepted step.
#[derive(Debug, Clone, PartialEq)]
struct Segment {
    t0: f64,
    h: f64,
    cont: [Vec<f64>; 5],
}

impl Segment {
    fn eval(&self, t: f64, out: &mut [f64]) {
        let s = (t - self.t0) / self.h;
        let s1 = 1.0 - s;
        let [c0, c1, c2, c3, c4] = &self.cont;
        for k in 0..out.len() {
            out[k] = c0[k] + s * (c1[k] + s1 * (c2[k] + s * (c3[k] + s1 * c4[k])));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub times: Vec<f64>,
    /// `states[k][i-1] = c_i(times[k])`.
    pub states: Vec<Vec<f64>>,
    pub truncation: usize,
    pub initial_mass: f64,
    /// `max_k |mass(states[k]) - initial_mass|`.
    pub max_mass_drift: f64,
    pub stats: StepStats,
    atol: f64,
    dense: Option<Vec<Segment>>,
}

impl OdeSolution {
    pub fn relative_mass_drift(&self) -> f64 {
        self.max_mass_drift / self.initial_mass.abs().max(f64::MIN_POSITIVE)
    }

    /// `sum_{i > from} i c_i` at output `k`.
    pub fn tail_mass(&self, k: usize, from: usize) -> f64 {
        self.states[k]
            .iter()
            .enumerate()
            .skip(from)
            .map(|(j, x)| (j + 1) as f64 * x.max(0.0))
            .sum()
    }

    /// Largest mass carried by sizes `> from` over all outputs.
    pub fn max_tail_mass(&self, from: usize) -> f64 {
        (0..self.states.len())
            .map(|k| self.tail_mass(k, from))
            .fold(0.0, f64::max)
    }

    pub fn has_dense_output(&self) -> bool {
        self.dense.is_some()
    }

    /// Solution at any `t` in the integrated range; requires `keep_dense`.
    pub fn eval(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let Some(segments) = &self.dense else {
            return Err(Error::InvalidArgument(
                "dense output was not kept for this solution".into(),
            ));
        };
        let t_end = *self.times.last().expect("nonempty grid");
        if t < self.times[0] || t > t_end {
            return Err(Error::InvalidArgument(format!(
                "t = {t} outside [{}, {t_end}]",
                self.times[0]
            )));
        }
        if t == self.times[0] || segments.is_empty() {
            out.copy_from_slice(&self.states[0]);
            return Ok(());
        }
        let k = segments
            .partition_point(|s| s.t0 + s.h < t)
            .min(segments.len() - 1);
        segments[k].eval(t, out);
        clip_output(out, self.atol);
        Ok(())
    }
}

fn clip_output(c: &mut [f64], atol: f64) {
    for x in c.iter_mut() {
        if *x < 0.0 && *x > -atol {
            *x = 0.0;
        }
    }
}

// Dormand-Prince 5(4) tableau. The system is autonomous, so the nodes c_i are not needed.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFE: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;
const MAX_NEGATIVE_RETRIES: usize = 40;

struct Stepper<'a> {
    rates: &'a Rates,
    cfg: &'a IntegratorConfig,
    n: usize,
    flux: Vec<f64>,
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
    evals: usize,
}

impl<'a> Stepper<'a> {
    fn new(rates: &'a Rates, cfg: &'a IntegratorConfig) -> Self {
        let n = cfg.truncation;
        Stepper {
            rates,
            cfg,
            n,
            flux: vec![0.0; n - 1],
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            y_new: vec![0.0; n],
            evals: 0,
        }
    }

    fn f(&mut self, y: &[f64], slot: usize) {
        self.rates.rhs(y, &mut self.flux, &mut self.k[slot]);
        self.evals += 1;
    }

    fn f_stage(&mut self, slot: usize) {
        let stage = std::mem::take(&mut self.stage);
        self.f(&stage, slot);
        self.stage = stage;
    }

    fn norm(&self, v: &[f64], y: &[f64]) -> f64 {
        let sum: f64 = v
            .iter()
            .zip(y)
            .map(|(v, y)| {
                let sc = self.cfg.atol + self.cfg.rtol * y.abs();
                (v / sc).powi(2)
            })
            .sum();
        (sum / self.n as f64).sqrt()
    }

    /// Hairer's starting step heuristic; expects `k[0] = f(y)`.
    fn initial_step(&mut self, y: &[f64], span: f64) -> f64 {
        let d0 = self.norm(y, y);
        let d1 = self.norm(&self.k[0], y);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        h0 = h0.min(self.cfg.max_step).min(span);
        for (s, (y, f)) in self.stage.iter_mut().zip(y.iter().zip(&self.k[0])) {
            *s = y + h0 * f;
        }
        self.f_stage(1);
        let diff: Vec<f64> = self.k[1].iter().zip(&self.k[0]).map(|(a, b)| a - b).collect();
        let d2 = self.norm(&diff, y) / h0;
        let dmax = d1.max(d2);
        let h1 = if dmax <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dmax).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.cfg.max_step).min(span)
    }

    /// One trial step from `(t, y)`; `k[0]` must hold `f(y)`. Returns the error norm.
    fn attempt(&mut self, y: &[f64], h: f64) -> f64 {
        let n = self.n;
        for j in 0..n {
            self.stage[j] = y[j] + h * A21 * self.k[0][j];
        }
        self.f_stage(1);
        for j in 0..n {
            self.stage[j] = y[j] + h * (A31 * self.k[0][j] + A32 * self.k[1][j]);
        }
        self.f_stage(2);
        for j in 0..n {
            self.stage[j] = y[j] + h * (A41 * self.k[0][j] + A42 * self.k[1][j] + A43 * self.k[2][j]);
        }
        self.f_stage(3);
        for j in 0..n {
            self.stage[j] = y[j]
                + h * (A51 * self.k[0][j] + A52 * self.k[1][j] + A53 * self.k[2][j] + A54 * self.k[3][j]);
        }
        self.f_stage(4);
        for j in 0..n {
            self.stage[j] = y[j]
                + h * (A61 * self.k[0][j]
                    + A62 * self.k[1][j]
                    + A63 * self.k[2][j]
                    + A64 * self.k[3][j]
                    + A65 * self.k[4][j]);
        }
        self.f_stage(5);
        for j in 0..n {
            self.y_new[j] = y[j]
                + h * (A71 * self.k[0][j]
                    + A73 * self.k[2][j]
                    + A74 * self.k[3][j]
                    + A75 * self.k[4][j]
                    + A76 * self.k[5][j]);
        }
        let y_new = std::mem::take(&mut self.y_new);
        self.f(&y_new, 6);
        self.y_new = y_new;

        let mut sum = 0.0;
        for j in 0..n {
            let err = h
                * (E1 * self.k[0][j]
                    + E3 * self.k[2][j]
                    + E4 * self.k[3][j]
                    + E5 * self.k[4][j]
                    + E6 * self.k[5][j]
                    + E7 * self.k[6][j]);
            let sc = self.cfg.atol + self.cfg.rtol * y[j].abs().max(self.y_new[j].abs());
            sum += (err / sc).powi(2);
        }
        (sum / n as f64).sqrt()
    }

    fn segment(&self, t0: f64, h: f64, y: &[f64]) -> Segment {
        let n = self.n;
        let c0 = y.to_vec();
        let mut c1 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        let mut c3 = vec![0.0; n];
        let mut c4 = vec![0.0; n];
        for j in 0..n {
            let ydiff = self.y_new[j] - y[j];
            let bspl = h * self.k[0][j] - ydiff;
            c1[j] = ydiff;
            c2[j] = bspl;
            c3[j] = ydiff - h * self.k[6][j] - bspl;
            c4[j] = h
                * (D1 * self.k[0][j]
                    + D3 * self.k[2][j]
                    + D4 * self.k[3][j]
                    + D5 * self.k[4][j]
                    + D6 * self.k[5][j]
                    + D7 * self.k[6][j]);
        }
        Segment {
            t0,
            h,
            cont: [c0, c1, c2, c3, c4],
        }
    }
}

/// Integrates from `c0` over `[c0.t, t_end]`, reporting the solution on the grid.
pub fn integrate(
    c0: &DbdState,
    kernel: &RateKernel,
    t_end: f64,
    cfg: &IntegratorConfig,
) -> Result<OdeSolution> {
    cfg.validate()?;
    let t0 = c0.t;
    if !(t_end >= t0 && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "t_end = {t_end} must be finite and >= {t0}"
        )));
    }
    if c0.c.len() != cfg.truncation {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} sizes but the truncation is {}",
            c0.c.len(),
            cfg.truncation
        )));
    }
    if c0.c.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidArgument(
            "initial concentrations must be finite and >= 0".into(),
        ));
    }
    let grid = if cfg.grid.is_empty() {
        crate::ssa::uniform_grid(t_end - t0, 101)
            .into_iter()
            .map(|t| t + t0)
            .collect()
    } else {
        cfg.grid.clone()
    };
    if grid.windows(2).any(|w| w[1] <= w[0]) || grid[0] < t0 || grid[grid.len() - 1] > t_end {
        return Err(Error::InvalidArgument(format!(
            "output grid must be strictly increasing within [{t0}, {t_end}]"
        )));
    }

    let rates = Rates::new(kernel, cfg.truncation);
    let mut st = Stepper::new(&rates, cfg);
    let initial_mass = c0.mass();
    let mut y = c0.c.clone();
    let mut t = t0;
    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let mut dense = cfg.keep_dense.then(Vec::new);
    let mut next = 0usize;
    while next < grid.len() && grid[next] <= t {
        times.push(grid[next]);
        states.push(y.clone());
        next += 1;
    }

    st.f(&y, 0);
    let mut h = if t_end > t {
        st.initial_step(&y, t_end - t)
    } else {
        0.0
    };
    let mut fac_old = 1e-4f64;
    let mut rejected_last = false;
    let mut negative_retries = 0usize;
    let mut scratch = vec![0.0; cfg.truncation];

    while t < t_end {
        if stats.accepted + stats.rejected >= cfg.max_steps {
            return Err(Error::IntegrationFailure {
                t,
                reason: format!("step budget of {} exhausted", cfg.max_steps),
            });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        if h <= 16.0 * f64::EPSILON * t.abs().max(1.0) {
            return Err(Error::Stiffness { t, h });
        }
        let err = st.attempt(&y, h);
        let fac11 = err.powf(0.2 - BETA * 0.75);
        let mut negative = false;
        for x in st.y_new.iter() {
            if *x <= -cfg.atol {
                negative = true;
            }
        }
        if err <= 1.0 && !negative {
            let seg = st.segment(t, h, &y);
            let t_new = if last { t_end } else { t + h };
            while next < grid.len() && grid[next] <= t_new {
                seg.eval(grid[next], &mut scratch);
                clip_output(&mut scratch, cfg.atol);
                times.push(grid[next]);
                states.push(scratch.clone());
                next += 1;
            }
            if let Some(d) = dense.as_mut() {
                d.push(seg);
            }
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h);
            stats.max_step = stats.max_step.max(h);
            std::mem::swap(&mut y, &mut st.y_new);
            let mut clipped = false;
            for x in y.iter_mut() {
                if *x < 0.0 {
                    *x = 0.0;
                    stats.clipped += 1;
                    clipped = true;
                }
            }
            t = t_new;
            negative_retries = 0;
            // FSAL unless clipping changed the state
            if clipped {
                st.f(&y, 0);
            } else {
                st.k.swap(0, 6);
            }
            let fac = (fac11 / fac_old.powf(BETA) / SAFE).clamp(1.0 / FAC_MAX, 1.0 / FAC_MIN);
            fac_old = err.max(1e-4);
            let mut h_new = (h / fac).min(cfg.max_step);
            if rejected_last {
                h_new = h_new.min(h);
            }
            rejected_last = false;
            h = h_new;
        } else {
            stats.rejected += 1;
            rejected_last = true;
            if negative && err <= 1.0 {
                // a component overshot below the clip tolerance: retry with a shorter step
                negative_retries += 1;
                if negative_retries > MAX_NEGATIVE_RETRIES {
                    let (i, x) =
                        st.y_new
                            .iter()
                            .enumerate()
                            .fold((0, 0.0), |m, (k, &x)| if x < m.1 { (k + 1, x) } else { m });
                    return Err(Error::IntegrationFailure {
                        t,
                        reason: format!("c_{i} = {x:e} below the clip tolerance -{:e}", cfg.atol),
                    });
                }
                h *= 0.5;
            } else {
                h /= (fac11 / SAFE).min(1.0 / FAC_MIN);
            }
        }
    }
    if next < grid.len() {
        return Err(Error::InternalInconsistency(format!(
            "{} grid points were not reached",
            grid.len() - next
        )));
    }
    if stats.accepted == 0 {
        stats.min_step = 0.0;
    }
    stats.rhs_evals = st.evals;
    let max_mass_drift = states
        .iter()
        .map(|c| (mass(c) - initial_mass).abs())
        .fold(0.0, f64::max);
    Ok(OdeSolution {
        times,
        states,
        truncation: cfg.truncation,
        initial_mass,
        max_mass_drift,
        stats,
        atol: cfg.atol,
        dense,
    })
}

/// `H(c(t) | c^z)` at every output time.
pub fn entropy_along_trajectory(solution: &OdeSolution, kernel: &RateKernel, z: f64) -> Result<Vec<f64>> {
    let reference = EntropyReference::new(kernel, z, solution.truncation, 1e-14)?;
    Ok(solution.states.iter().map(|c| reference.entropy(c)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetics::{equilibrium_profile, solve_z_of_rho};
    use proptest::prelude::*;

    fn unit() -> RateKernel {
        RateKernel::constant(1.0, 1.0).unwrap()
    }

    #[test]
    fn flux_examples() {
        let j = fluxes(&[1.0, 0.0, 0.0, 0.0], &unit());
        assert_eq!(j, vec![1.0, 0.0, 0.0]);
        let j = fluxes(&[0.5, 0.25], &unit());
        assert_eq!(j, vec![0.0]);
        assert_eq!(rhs(&[1.0, 0.0], &unit()), vec![-2.0, 1.0]);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        for kernel in [
            unit(),
            RateKernel::power_db(4.0).unwrap(),
            RateKernel::tabulated(vec![2.0, 3.0, 0.5], vec![5.0, 7.0, 1.5]).unwrap(),
        ] {
            let p = equilibrium_profile(&kernel, 0.4, 50).unwrap();
            for j in fluxes(&p.coefficients, &kernel) {
                assert!(j.abs() <= 1e-15, "{kernel}: {j}");
            }
            assert!(scaled_residual(&p.coefficients, &kernel) <= 1e-12);
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let c0 = DbdState::monomeric(1.0, 8);
        let sol = integrate(&c0, &unit(), 0.0, &IntegratorConfig::with_truncation(8)).unwrap();
        assert_eq!(sol.states, vec![c0.c]);
    }

    /// I = 2: 2 c_1^2 + c_1 - 1 = 0 gives c_1 = 1/2, c_2 = 1/4.
    #[test]
    fn two_size_system_relaxes_to_quadratic_root() {
        let c0 = DbdState::monomeric(1.0, 2);
        let cfg = IntegratorConfig {
            grid: vec![0.0, 40.0],
            ..IntegratorConfig::with_truncation(2)
        };
        let sol = integrate(&c0, &unit(), 40.0, &cfg).unwrap();
        let end = &sol.states[1];
        assert!((end[0] - 0.5).abs() < 1e-8, "{end:?}");
        assert!((end[1] - 0.25).abs() < 1e-8);
        // closed form: c_1(t) solves dc_1/dt = -2 J_1 with c_2 = (1 - c_1)/2
        // dc_1/dt = -(2c_1^2 + c_1 - 1) = -2 (c_1 - 1/2)(c_1 + 1)
        let exact = |t: f64| {
            // (c_1 - 1/2)/(c_1 + 1) = (1/4) e^{-3t}
            let r = 0.25 * (-3.0 * t).exp();
            (0.5 + r) / (1.0 - r)
        };
        let cfg = IntegratorConfig {
            grid: vec![0.0, 0.1, 0.5, 1.0, 2.0],
            ..IntegratorConfig::with_truncation(2)
        };
        let sol = integrate(&c0, &unit(), 2.0, &cfg).unwrap();
        for (t, c) in sol.times.iter().zip(&sol.states) {
            assert!(
                (c[0] - exact(*t)).abs() < 1e-7,
                "t={t}: {} vs {}",
                c[0],
                exact(*t)
            );
        }
    }

    #[test]
    fn equilibrium_start_stays_put() {
        let kernel = unit();
        let z = solve_z_of_rho(&kernel, 1.0, 1e-13).unwrap();
        let p = equilibrium_profile(&kernel, z, 80).unwrap();
        let c0 = DbdState::new(p.coefficients.clone());
        let sol = integrate(&c0, &kernel, 10.0, &IntegratorConfig::with_truncation(80)).unwrap();
        for s in &sol.states {
            for (a, b) in s.iter().zip(&p.coefficients) {
                assert!((a - b).abs() <= 1e-12 + 1e-9 * b);
            }
        }
    }

    #[test]
    fn mass_drift_and_entropy_decay() {
        let kernel = unit();
        let c0 = DbdState::monomeric(1.0, 64);
        let sol = integrate(&c0, &kernel, 10.0, &IntegratorConfig::with_truncation(64)).unwrap();
        assert!(sol.relative_mass_drift() <= 1e-8, "{}", sol.relative_mass_drift());
        let z = solve_z_of_rho(&kernel, 1.0, 1e-13).unwrap();
        let h = entropy_along_trajectory(&sol, &kernel, z).unwrap();
        assert!(h.windows(2).all(|w| w[1] <= w[0] + 1e-8));
        assert!(h.iter().all(|&v| v >= -1e-12));
        assert!(h[0] > h[h.len() - 1]);
    }

    #[test]
    fn dense_output_matches_grid() {
        let kernel = RateKernel::power_db(4.0).unwrap();
        let c0 = DbdState::monomeric(1.0, 32);
        let cfg = IntegratorConfig {
            keep_dense: true,
            ..IntegratorConfig::with_truncation(32)
        };
        let sol = integrate(&c0, &kernel, 3.0, &cfg).unwrap();
        let mut out = vec![0.0; 32];
        for (t, s) in sol.times.iter().zip(&sol.states) {
            sol.eval(*t, &mut out).unwrap();
            assert_eq!(&out, s);
        }
        assert!(sol.eval(3.5, &mut out).is_err());
    }

    /// The flow map's time derivative at t = 0 equals rhs.
    #[test]
    fn rhs_matches_finite_difference_of_flow() {
        let kernel = RateKernel::tabulated(vec![1.0, 2.0, 0.7], vec![0.5, 1.5, 1.0]).unwrap();
        let c = vec![0.6, 0.2, 0.1, 0.05, 0.02, 0.01];
        let h = 1e-3;
        let cfg = IntegratorConfig {
            grid: vec![0.0, h / 2.0, h],
            rtol: 1e-13,
            atol: 1e-15,
            ..IntegratorConfig::with_truncation(c.len())
        };
        let sol = integrate(&DbdState::new(c.clone()), &kernel, h, &cfg).unwrap();
        let r = rhs(&c, &kernel);
        // Richardson: 2 D(h/2) - D(h) = rhs + O(h^2)
        for k in 0..c.len() {
            let half = (sol.states[1][k] - c[k]) / (h / 2.0);
            let full = (sol.states[2][k] - c[k]) / h;
            let fd = 2.0 * half - full;
            assert!(
                (fd - r[k]).abs() <= 1e-5 * r[k].abs().max(1e-2),
                "{k}: {fd} vs {}",
                r[k]
            );
        }
    }

    proptest! {
        #[test]
        fn rhs_conserves_mass(c in proptest::collection::vec(0.0f64..2.0, 2..40), slope in 0.1f64..3.0) {
            let kernel = RateKernel::linear_coag(slope, 1.3).unwrap();
            let r = rhs(&c, &kernel);
            let scale: f64 = r.iter().enumerate().map(|(k, x)| (k + 1) as f64 * x.abs()).sum();
            prop_assert!(mass(&r).abs() <= 1e-12 * scale.max(1e-300));
        }
    }
}
