//! Rate kernels and equilibrium-series analysis.
//!
//! Every kernel exposes the coagulation rates `a_i` (`i >= 1`) and the
//! fragmentation rates `b_i` (`i >= 2`). From them follow the
//! detailed-balance coefficients
//!
//! ```text
//! Q_1 = 1,   Q_{i+1} = Q_i * a_i / b_{i+1}
//! ```
//!
//! and the equilibria `c^z_i = Q_i z^i`. `Q_i` spans hundreds of orders of
//! magnitude for generic kernels, so it is only ever handled as `ln Q_i`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Partial sums above this value with nondecreasing terms are declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// Hard cap on the number of terms any series evaluation may visit.
const MAX_SERIES_TERMS: usize = 200_000_000;

/// Parametric families of rate coefficients.
///
/// `Tabulated` stores `a = (a_1, a_2, ...)` and `b = (b_2, b_3, ...)`; beyond
/// the end of a table its last entry is repeated.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelFamily {
    /// `a_i = a`, `b_i = b`.
    Constant {
        a: f64,
        b: f64,
    },
    /// `a_i = slope * i`, `b_i = b`.
    LinearCoag {
        slope: f64,
        b: f64,
    },
    /// `a_i = 1`, `b_{i+1} = ((i+1)/i)^q`, so that `Q_i = i^(-q)`.
    PowerDb {
        q: f64,
    },
    Tabulated {
        a: Vec<f64>,
        b: Vec<f64>,
    },
}

/// A validated rate kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct RateKernel {
    family: KernelFamily,
    /// For tabulated kernels: `suffix_ratio[k] = sup_{j >= k+1} a_j / b_{j+1}`.
    suffix_ratio: Vec<f64>,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidKernel(format!(
            "{name} must be finite and > 0, got {v}"
        )))
    }
}

impl RateKernel {
    pub fn new(family: KernelFamily) -> Result<Self> {
        match &family {
            KernelFamily::Constant { a, b } => {
                positive("a", *a)?;
                positive("b", *b)?;
            }
            KernelFamily::LinearCoag { slope, b } => {
                positive("slope", *slope)?;
                positive("b", *b)?;
            }
            KernelFamily::PowerDb { q } => {
                if !q.is_finite() {
                    return Err(Error::InvalidKernel(format!("q must be finite, got {q}")));
                }
            }
            KernelFamily::Tabulated { a, b } => {
                if a.is_empty() || b.is_empty() {
                    return Err(Error::InvalidKernel("rate tables must be non-empty".into()));
                }
                for (k, v) in a.iter().enumerate() {
                    positive(&format!("a_{}", k + 1), *v)?;
                }
                for (k, v) in b.iter().enumerate() {
                    positive(&format!("b_{}", k + 2), *v)?;
                }
            }
        }
        let mut kernel = RateKernel {
            family,
            suffix_ratio: Vec::new(),
        };
        if let KernelFamily::Tabulated { a, b } = &kernel.family {
            // Past index max(len_a, len_b + 1) both tables are constant.
            let last = a.len().max(b.len() + 1);
            let mut suffix = vec![0.0; last];
            let mut running = kernel.ratio(last);
            for i in (1..=last).rev() {
                running = running.max(kernel.ratio(i));
                suffix[i - 1] = running;
            }
            kernel.suffix_ratio = suffix;
        }
        Ok(kernel)
    }

    pub fn constant(a: f64, b: f64) -> Result<Self> {
        Self::new(KernelFamily::Constant { a, b })
    }

    pub fn linear_coag(slope: f64, b: f64) -> Result<Self> {
        Self::new(KernelFamily::LinearCoag { slope, b })
    }

    pub fn power_db(q: f64) -> Result<Self> {
        Self::new(KernelFamily::PowerDb { q })
    }

    pub fn tabulated(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        Self::new(KernelFamily::Tabulated { a, b })
    }

    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    /// Coagulation rate `a_i`, `i >= 1`.
    pub fn a(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        match &self.family {
            KernelFamily::Constant { a, .. } => *a,
            KernelFamily::LinearCoag { slope, .. } => slope * i as f64,
            KernelFamily::PowerDb { .. } => 1.0,
            KernelFamily::Tabulated { a, .. } => a[(i - 1).min(a.len() - 1)],
        }
    }

    /// Fragmentation rate `b_i`, `i >= 2`.
    pub fn b(&self, i: usize) -> f64 {
        debug_assert!(i >= 2);
        match &self.family {
            KernelFamily::Constant { b, .. } | KernelFamily::LinearCoag { b, .. } => *b,
            KernelFamily::PowerDb { q } => (i as f64 / (i - 1) as f64).powf(*q),
            KernelFamily::Tabulated { b, .. } => b[(i - 2).min(b.len() - 1)],
        }
    }

    /// `a_i / b_{i+1} = Q_{i+1} / Q_i`.
    pub fn ratio(&self, i: usize) -> f64 {
        self.a(i) / self.b(i + 1)
    }

    /// `sup_{j >= i} a_j / b_{j+1}`, exact for every family.
    pub fn ratio_sup_from(&self, i: usize) -> f64 {
        match &self.family {
            KernelFamily::Constant { a, b } => a / b,
            KernelFamily::LinearCoag { .. } => f64::INFINITY,
            // (j/(j+1))^q increases to 1 when q > 0 and decreases to 1 when q < 0.
            KernelFamily::PowerDb { q } => {
                if *q >= 0.0 {
                    1.0
                } else {
                    self.ratio(i)
                }
            }
            KernelFamily::Tabulated { .. } => {
                let k = (i - 1).min(self.suffix_ratio.len() - 1);
                self.suffix_ratio[k]
            }
        }
    }

    /// Closed-form critical activity `z_s = 1 / lim sup Q_i^(1/i)`.
    pub fn critical_activity(&self) -> f64 {
        match &self.family {
            KernelFamily::Constant { a, b } => b / a,
            KernelFamily::LinearCoag { .. } => 0.0,
            KernelFamily::PowerDb { .. } => 1.0,
            KernelFamily::Tabulated { a, b } => b[b.len() - 1] / a[a.len() - 1],
        }
    }

    /// The constant `K` with `a_i <= K i` for all `i`, when one exists.
    pub fn linear_bound(&self) -> Option<f64> {
        match &self.family {
            KernelFamily::Constant { a, .. } => Some(*a),
            KernelFamily::LinearCoag { slope, .. } => Some(*slope),
            KernelFamily::PowerDb { .. } => Some(1.0),
            KernelFamily::Tabulated { a, .. } => Some(
                a.iter()
                    .enumerate()
                    .map(|(k, v)| v / (k + 1) as f64)
                    .fold(0.0, f64::max),
            ),
        }
    }

    /// Whether `sum_i i^w Q_i z^i` diverges, decided from the family's closed form.
    fn series_diverges(&self, z: f64, weight: u32) -> bool {
        let zs = self.critical_activity();
        if z > zs {
            return true;
        }
        if z < zs {
            return false;
        }
        match &self.family {
            KernelFamily::PowerDb { q } => q - weight as f64 <= 1.0,
            // Terms are eventually non-decreasing at z = z_s.
            _ => true,
        }
    }

    /// Rigorous bound on `sum_{j > i} j^w Q_j z^j` given the `i`-th term.
    fn tail_bound(&self, z: f64, weight: u32, i: usize, term_i: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let growth = ((i + 1) as f64 / i as f64).powi(weight as i32);
        let r = z * self.ratio_sup_from(i) * growth;
        if r < 1.0 {
            best = Some(term_i * r / (1.0 - r));
        }
        if let KernelFamily::PowerDb { q } = &self.family {
            // j^(w-q) z^j <= j^(w-q) is decreasing; compare with the integral from i.
            let p = q - weight as f64;
            if z <= 1.0 && p > 1.0 {
                let b = (i as f64).powf(1.0 - p) / (p - 1.0);
                best = Some(best.map_or(b, |g: f64| g.min(b)));
            }
        }
        best
    }

    pub fn spec(&self) -> KernelSpec {
        let mut params = BTreeMap::new();
        let (family, a_table, b_table) = match &self.family {
            KernelFamily::Constant { a, b } => {
                params.insert("a".to_string(), *a);
                params.insert("b".to_string(), *b);
                ("constant", None, None)
            }
            KernelFamily::LinearCoag { slope, b } => {
                params.insert("slope".to_string(), *slope);
                params.insert("b".to_string(), *b);
                ("linear_coag", None, None)
            }
            KernelFamily::PowerDb { q } => {
                params.insert("q".to_string(), *q);
                ("power_db", None, None)
            }
            KernelFamily::Tabulated { a, b } => ("tabulated", Some(a.clone()), Some(b.clone())),
        };
        KernelSpec {
            family: family.to_string(),
            params,
            a_table,
            b_table,
        }
    }
}

impl fmt::Display for RateKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.family {
            KernelFamily::Constant { a, b } => write!(f, "constant:a={a},b={b}"),
            KernelFamily::LinearCoag { slope, b } => write!(f, "linear_coag:slope={slope},b={b}"),
            KernelFamily::PowerDb { q } => write!(f, "power_db:q={q}"),
            KernelFamily::Tabulated { a, b } => {
                write!(f, "tabulated:a={},b={}", join(a), join(b))
            }
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

/// Serializable kernel description used by config files and the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_table: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_table: Option<Vec<f64>>,
}

impl KernelSpec {
    /// Builds the kernel; errors name the offending field under `kernel.`.
    pub fn build(&self) -> Result<RateKernel> {
        let allowed: &[&str] = match self.family.as_str() {
            "constant" => &["a", "b"],
            "linear_coag" => &["slope", "b"],
            "power_db" => &["q"],
            "tabulated" => &[],
            other => return Err(Error::config(
                "kernel.family",
                format!(
                    "unknown kernel family `{other}` (expected constant, linear_coag, power_db or tabulated)"
                ),
            )),
        };
        if let Some(k) = self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::config(
                format!("kernel.params.{k}"),
                format!("unknown parameter for family `{}`", self.family),
            ));
        }
        let tables = self.a_table.is_some() || self.b_table.is_some();
        if tables != (self.family == "tabulated") {
            return Err(Error::config(
                "kernel.a_table",
                "rate tables are accepted only (and required) for the tabulated family",
            ));
        }
        let get = |name: &str| -> Result<f64> {
            self.params
                .get(name)
                .copied()
                .ok_or_else(|| Error::config(format!("kernel.params.{name}"), "missing parameter"))
        };
        let family = match self.family.as_str() {
            "constant" => KernelFamily::Constant {
                a: get("a")?,
                b: get("b")?,
            },
            "linear_coag" => KernelFamily::LinearCoag {
                slope: get("slope")?,
                b: get("b")?,
            },
            "power_db" => KernelFamily::PowerDb { q: get("q")? },
            _ => KernelFamily::Tabulated {
                a: self
                    .a_table
                    .clone()
                    .ok_or_else(|| Error::config("kernel.a_table", "missing table"))?,
                b: self
                    .b_table
                    .clone()
                    .ok_or_else(|| Error::config("kernel.b_table", "missing table"))?,
            },
        };
        RateKernel::new(family).map_err(|e| Error::config("kernel", e.to_string()))
    }
}

/// Compact literal: `constant:a=1,b=1`, `power_db:q=4`,
/// `tabulated:a=2;3,b=5;7`.
impl FromStr for KernelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut spec = KernelSpec {
            family: family.trim().to_string(),
            params: BTreeMap::new(),
            a_table: None,
            b_table: None,
        };
        for item in rest.split(',').map(str::trim).filter(|x| !x.is_empty()) {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::config("kernel", format!("expected key=value, got `{item}`")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("kernel.{key}"), format!("not a number: `{v}`")))
            };
            if spec.family == "tabulated" && (key == "a" || key == "b") {
                let table = value.split(';').map(parse).collect::<Result<Vec<_>>>()?;
                if key == "a" {
                    spec.a_table = Some(table);
                } else {
                    spec.b_table = Some(table);
                }
            } else {
                spec.params.insert(key.trim().to_string(), parse(value)?);
            }
        }
        Ok(spec)
    }
}

/// `ln Q_i` for `i = 1..=i_max` (index 0 holds `ln Q_1 = 0`).
pub fn detailed_balance_coefficients(kernel: &RateKernel, i_max: usize) -> Result<Vec<f64>> {
    if i_max == 0 {
        return Err(Error::InvalidArgument("i_max must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(i_max);
    let mut log_q = 0.0;
    out.push(log_q);
    for i in 1..i_max {
        let (a, b) = (kernel.a(i), kernel.b(i + 1));
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidKernel(format!(
                "non-positive rate at a_{i} = {a} or b_{} = {b}",
                i + 1
            )));
        }
        log_q += a.ln() - b.ln();
        out.push(log_q);
    }
    Ok(out)
}

/// A truncated series value with a bound on the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesSum {
    pub value: f64,
    pub tail_bound: f64,
    pub terms: usize,
    /// False when the term cap was hit before any rigorous tail bound fell below tolerance.
    pub certified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeriesOutcome {
    Converged(SeriesSum),
    Divergent,
}

/// Evaluates `sum_{i >= start} i^weight Q_i z^i` until a rigorous tail bound
/// is at most `tol`.
pub fn moment_series(kernel: &RateKernel, z: f64, weight: u32, start: usize, tol: f64) -> SeriesOutcome {
    let start = start.max(1);
    if kernel.series_diverges(z, weight) {
        return SeriesOutcome::Divergent;
    }
    let ln_z = z.ln();
    let mut log_q = 0.0;
    let mut value = 0.0;
    let mut prev_term = 0.0;
    let mut nondecreasing_run = 0usize;
    let mut bound = f64::INFINITY;
    let mut i = 1usize;
    loop {
        if i > 1 {
            log_q += kernel.ratio(i - 1).ln();
        }
        let term = ((weight as f64) * (i as f64).ln() + log_q + i as f64 * ln_z).exp();
        if i >= start {
            value += term;
            if term >= prev_term {
                nondecreasing_run += 1;
            } else {
                nondecreasing_run = 0;
            }
            if value > DIVERGENCE_THRESHOLD && nondecreasing_run > 16 {
                return SeriesOutcome::Divergent;
            }
            prev_term = term;
        }
        if i + 1 >= start {
            if let Some(b) = kernel.tail_bound(z, weight, i, term) {
                bound = b;
                if b <= tol {
                    return SeriesOutcome::Converged(SeriesSum {
                        value,
                        tail_bound: b,
                        terms: i,
                        certified: true,
                    });
                }
            }
        }
        if i >= MAX_SERIES_TERMS {
            return SeriesOutcome::Converged(SeriesSum {
                value,
                tail_bound: bound,
                terms: i,
                certified: false,
            });
        }
        i += 1;
    }
}

/// Estimate of the critical activity plus the raw sequence `ln Q_i / i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZsEstimate {
    /// `exp(-max ln Q_i / i)` over the trailing half of the probe window.
    pub estimate: f64,
    /// Closed-form value for the kernel family.
    pub analytic: f64,
    /// `ln Q_i / i` for `i = 1..=i_probe`.
    pub scaled_log_q: Vec<f64>,
}

impl ZsEstimate {
    pub fn value(&self, prefer_analytic: bool) -> f64 {
        if prefer_analytic {
            self.analytic
        } else {
            self.estimate
        }
    }
}

/// Finite-data proxy for `z_s = (lim sup Q_i^(1/i))^(-1)`; `i_probe` is raised to 10 if smaller.
pub fn estimate_zs(kernel: &RateKernel, i_probe: usize) -> ZsEstimate {
    let i_probe = i_probe.max(10);
    let log_q =
        detailed_balance_coefficients(kernel, i_probe).expect("validated kernels have positive rates");
    let scaled: Vec<f64> = log_q
        .iter()
        .enumerate()
        .map(|(k, lq)| lq / (k + 1) as f64)
        .collect();
    let window = &scaled[i_probe / 2..];
    let limsup = window.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ZsEstimate {
        estimate: (-limsup).exp(),
        analytic: kernel.critical_activity(),
        scaled_log_q: scaled,
    }
}

/// Critical mass `rho_s = sup_{z < z_s} ||c^z||`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CriticalMass {
    Finite { value: f64, tail_bound: f64 },
    Infinite,
}

impl CriticalMass {
    pub fn value(&self) -> f64 {
        match self {
            CriticalMass::Finite { value, .. } => *value,
            CriticalMass::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, CriticalMass::Finite { .. })
    }
}

pub fn critical_mass(kernel: &RateKernel, z_s: f64, tol: f64) -> CriticalMass {
    if !(z_s > 0.0) {
        return CriticalMass::Finite {
            value: 0.0,
            tail_bound: 0.0,
        };
    }
    match moment_series(kernel, z_s, 1, 1, tol) {
        SeriesOutcome::Divergent => CriticalMass::Infinite,
        SeriesOutcome::Converged(s) => CriticalMass::Finite {
            value: s.value,
            tail_bound: s.tail_bound,
        },
    }
}

/// `||c^z|| = sum_i i Q_i z^i`, evaluated to within `tol`.
pub fn equilibrium_mass(kernel: &RateKernel, z: f64, tol: f64) -> Option<f64> {
    match moment_series(kernel, z, 1, 1, tol) {
        SeriesOutcome::Converged(s) => Some(s.value),
        SeriesOutcome::Divergent => None,
    }
}

/// Solves `||c^z|| = rho` by bisection on `(0, z_s]`.
pub fn solve_z_of_rho(kernel: &RateKernel, rho: f64, tol: f64) -> Result<f64> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be > 0, got {rho}")));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tol must be > 0, got {tol}")));
    }
    let z_s = kernel.critical_activity();
    if !(z_s > 0.0) {
        return Err(Error::NoEquilibrium(format!(
            "z_s = 0 for {kernel}: the equilibrium series has zero radius of convergence"
        )));
    }
    let mut hi = z_s;
    if let CriticalMass::Finite { value, .. } = critical_mass(kernel, z_s, tol / 4.0) {
        if rho > value + tol {
            return Err(Error::Supercritical { rho, rho_s: value });
        }
        if (rho - value).abs() <= tol {
            return Ok(z_s);
        }
    }
    if hi.is_infinite() {
        hi = 1.0;
        while equilibrium_mass(kernel, hi, tol / 8.0).is_some_and(|m| m < rho) {
            hi *= 2.0;
        }
    }
    let mut lo = 0.0;
    let mut mid = 0.5 * hi;
    for _ in 0..400 {
        mid = 0.5 * (lo + hi);
        let m = equilibrium_mass(kernel, mid, tol / 8.0).unwrap_or(f64::INFINITY);
        if (m - rho).abs() <= tol / 2.0 {
            return Ok(mid);
        }
        if m < rho {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(mid)
}

/// Truncated equilibrium `c^z_i = Q_i z^i`, `i = 1..=i_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumProfile {
    pub z: f64,
    pub coefficients: Vec<f64>,
    pub i_max: usize,
    /// `sum_{i <= i_max} i c^z_i`.
    pub mass: f64,
    /// Bound on `sum_{i > i_max} i c^z_i`, when one is available.
    pub mass_tail_bound: Option<f64>,
}

impl EquilibriumProfile {
    /// Lower and upper bound for the full mass `||c^z||`.
    pub fn mass_bounds(&self) -> (f64, f64) {
        (
            self.mass,
            self.mass + self.mass_tail_bound.unwrap_or(f64::INFINITY),
        )
    }
}

pub fn equilibrium_profile(kernel: &RateKernel, z: f64, i_max: usize) -> Result<EquilibriumProfile> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::InvalidArgument(format!("z must be > 0, got {z}")));
    }
    let log_q = detailed_balance_coefficients(kernel, i_max)?;
    let ln_z = z.ln();
    let mut coefficients = Vec::with_capacity(i_max);
    let mut mass = 0.0;
    for (k, lq) in log_q.iter().enumerate() {
        let i = k + 1;
        let c = (lq + i as f64 * ln_z).exp();
        if !c.is_finite() {
            return Err(Error::ProfileOverflow { index: i });
        }
        mass += i as f64 * c;
        coefficients.push(c);
    }
    let last = i_max as f64 * coefficients[i_max - 1];
    let mass_tail_bound = if kernel.series_diverges(z, 1) {
        None
    } else {
        kernel.tail_bound(z, 1, i_max, last)
    };
    Ok(EquilibriumProfile {
        z,
        coefficients,
        i_max,
        mass,
        mass_tail_bound,
    })
}
