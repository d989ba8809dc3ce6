//! Superlinear weights built from a threshold sequence.
//!
//! Given `2 <= N_0 < N_1 < ... < N_M`, the derivative `p = phi'` is the
//! piecewise-linear function through
//!
//! ```text
//! (0, 0), (1, 1), (N_0, 2), (N_1, 3), ..., (N_M, M + 2)
//! ```
//!
//! extended past `N_M` with the last gap, and `phi(y) = int_0^y p`. With the
//! convention `N_{-1} = 1`, `p` is concave exactly when the gaps
//! `N_{m+1} - N_m` are nondecreasing from `m = -1` on.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SuperlinearWeight {
    thresholds: Vec<usize>,
    /// Breakpoints `0, 1, N_0, ..., N_M` of `p`.
    knots: Vec<f64>,
    /// `phi` at each knot.
    phi_at_knots: Vec<f64>,
    /// Gap used past the last threshold.
    tail_gap: f64,
}

impl SuperlinearWeight {
    pub fn from_thresholds(thresholds: Vec<usize>) -> Result<Self> {
        let Some(&n0) = thresholds.first() else {
            return Err(Error::InvalidThresholds("need at least one threshold".into()));
        };
        if n0 < 2 {
            return Err(Error::InvalidThresholds(format!("N_0 must be >= 2, got {n0}")));
        }
        let mut prev_gap = n0 - 1;
        for (m, w) in thresholds.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::InvalidThresholds(format!(
                    "thresholds must increase: N_{} = {} after N_{m} = {}",
                    m + 1,
                    w[1],
                    w[0]
                )));
            }
            let gap = w[1] - w[0];
            if gap < prev_gap {
                return Err(Error::InvalidThresholds(format!(
                    "gap N_{} - N_{m} = {gap} is smaller than the previous gap {prev_gap}",
                    m + 1
                )));
            }
            prev_gap = gap;
        }
        let mut knots = vec![0.0, 1.0];
        knots.extend(thresholds.iter().map(|&n| n as f64));
        let mut phi_at_knots = vec![0.0];
        for k in 1..knots.len() {
            // trapezoid under the linear piece from p = k - 1 to p = k
            let area = (knots[k] - knots[k - 1]) * (2.0 * k as f64 - 1.0) / 2.0;
            phi_at_knots.push(phi_at_knots[k - 1] + area);
        }
        Ok(SuperlinearWeight {
            thresholds,
            knots,
            phi_at_knots,
            tail_gap: prev_gap as f64,
        })
    }

    pub fn thresholds(&self) -> &[usize] {
        &self.thresholds
    }

    /// Locates `t` as (piece index `k`, start of piece, slope); piece `k` runs
    /// from `p = k` upwards.
    fn piece(&self, t: f64) -> (usize, f64, f64) {
        let last = self.knots.len() - 1;
        if t >= self.knots[last] {
            return (last, self.knots[last], 1.0 / self.tail_gap);
        }
        let k = self.knots.partition_point(|&x| x <= t) - 1;
        (k, self.knots[k], 1.0 / (self.knots[k + 1] - self.knots[k]))
    }

    /// `p(t) = phi'(t)`.
    pub fn derivative(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        let (k, start, slope) = self.piece(t);
        k as f64 + slope * (t - start)
    }

    /// `phi(y)`, exact.
    pub fn value(&self, y: f64) -> f64 {
        let y = y.max(0.0);
        let (k, start, _) = self.piece(y);
        let p0 = k as f64;
        self.phi_at_knots[k] + (y - start) * (p0 + self.derivative(y)) / 2.0
    }

    /// `alpha_k`: 2 below `N_0`, `m + 3` on `[N_m, N_{m+1})`, the extension
    /// continuing with the last gap.
    pub fn alpha(&self, k: usize) -> f64 {
        let n0 = self.thresholds[0];
        if k < n0 {
            return 2.0;
        }
        let last = *self.thresholds.last().expect("nonempty");
        if k >= last {
            let m = self.thresholds.len() - 1 + (k - last) / self.tail_gap as usize;
            return m as f64 + 3.0;
        }
        let m = self.thresholds.partition_point(|&n| n <= k) - 1;
        m as f64 + 3.0
    }

    pub fn as_fn(&self) -> impl Fn(usize) -> f64 + Sync + '_ {
        move |i| self.value(i as f64)
    }
}

/// Thresholds from a family of cluster-size distributions.
///
/// `measures[n][k - 1] = M_k^n`, the mass of the `n`-th measure on `[k, k+1)`.
/// `N_m` is the smallest value with `sup_n sum_{k >= N_m} (k+1) M_k^n < (m+3)^-3`
/// that also keeps `N_0 >= 2` and the gaps nondecreasing.
pub fn thresholds_from_measures(measures: &[Vec<f64>], levels: usize) -> Result<Vec<usize>> {
    if levels == 0 {
        return Err(Error::InvalidThresholds("need at least one level".into()));
    }
    let support = measures.iter().map(Vec::len).max().unwrap_or(0);
    // tail[k] = sup_n sum_{j >= k} (j+1) M_j^n for k = 1..=support+1
    let mut tail = vec![0.0; support + 2];
    for m in measures {
        let mut acc = 0.0;
        for k in (1..=m.len()).rev() {
            acc += (k + 1) as f64 * m[k - 1];
            tail[k] = f64::max(tail[k], acc);
        }
    }
    let tail_at = |k: usize| if k < tail.len() { tail[k] } else { 0.0 };
    let mut out: Vec<usize> = Vec::with_capacity(levels);
    let mut prev = 1usize;
    let mut gap = 1usize;
    for m in 0..levels {
        let target = 1.0 / ((m + 3) as f64).powi(3);
        let mut n = (prev + gap).max(2);
        while tail_at(n) >= target {
            n += 1;
        }
        gap = n - prev;
        prev = n;
        out.push(n);
    }
    Ok(out)
}

/// Weight from the distributions directly: thresholds as in
/// [`thresholds_from_measures`], then `phi` built on them.
pub fn build_superlinear_weight(measures: &[Vec<f64>], levels: usize) -> Result<SuperlinearWeight> {
    SuperlinearWeight::from_thresholds(thresholds_from_measures(measures, levels)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geometric(levels: u32) -> SuperlinearWeight {
        SuperlinearWeight::from_thresholds((0..levels).map(|m| 2 * 2usize.pow(m)).collect()).unwrap()
    }

    /// Midpoint rule on a fine grid, independent of the closed form.
    fn quadrature(w: &SuperlinearWeight, y: f64) -> f64 {
        let steps = 200_000;
        let h = y / steps as f64;
        (0..steps).map(|k| w.derivative((k as f64 + 0.5) * h) * h).sum()
    }

    #[test]
    fn quadratic_on_unit_interval() {
        let w = geometric(6);
        assert_eq!(w.value(0.5), 0.125);
        assert_eq!(w.value(1.0), 0.5);
        assert_eq!(w.derivative(2.0), 2.0);
        assert_eq!(w.derivative(4.0), 3.0);
    }

    #[test]
    fn matches_quadrature() {
        let w = geometric(6);
        for i in 1..=150 {
            let y = i as f64;
            let q = quadrature(&w, y);
            assert!(
                (w.value(y) - q).abs() <= 1e-9 * q.max(1.0),
                "{i}: {} vs {q}",
                w.value(y)
            );
        }
    }

    #[test]
    fn ratio_grows_across_thresholds() {
        let w = geometric(10);
        let ratios: Vec<f64> = w
            .thresholds()
            .iter()
            .map(|&n| w.value(n as f64) / n as f64)
            .collect();
        assert!(ratios.windows(2).all(|r| r[1] > r[0]), "{ratios:?}");
    }

    #[test]
    fn rejects_bad_sequences() {
        assert!(SuperlinearWeight::from_thresholds(vec![]).is_err());
        assert!(SuperlinearWeight::from_thresholds(vec![1, 3]).is_err());
        assert!(SuperlinearWeight::from_thresholds(vec![4, 4]).is_err());
        // first gap 1 < N_0 - 1 = 3
        assert!(SuperlinearWeight::from_thresholds(vec![4, 5]).is_err());
        assert!(SuperlinearWeight::from_thresholds(vec![2, 5, 7]).is_err());
        assert!(SuperlinearWeight::from_thresholds(vec![2, 3, 5, 8]).is_ok());
    }

    #[test]
    fn thresholds_for_monomeric_data() {
        // all mass on size 1: every tail past 2 vanishes, gaps stay 1
        let t = thresholds_from_measures(&[vec![1.0], vec![2.0]], 5).unwrap();
        assert_eq!(t, vec![2, 3, 4, 5, 6]);
        let w = SuperlinearWeight::from_thresholds(t).unwrap();
        for i in 0..50 {
            let y = i as f64 * 0.7;
            assert!((w.value(y) - y * y / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn thresholds_respect_tail_condition() {
        let measures: Vec<Vec<f64>> = (1..4)
            .map(|s| (1..=60).map(|k| (-(k as f64) / (3.0 * s as f64)).exp()).collect())
            .collect();
        let t = thresholds_from_measures(&measures, 6).unwrap();
        let w = SuperlinearWeight::from_thresholds(t.clone()).unwrap();
        assert_eq!(w.thresholds(), &t[..]);
        for (m, &n) in t.iter().enumerate() {
            for meas in &measures {
                let tail: f64 = (n..=meas.len()).map(|k| (k + 1) as f64 * meas[k - 1]).sum();
                assert!(tail < 1.0 / ((m + 3) as f64).powi(3));
            }
        }
    }

    fn valid_thresholds() -> impl Strategy<Value = Vec<usize>> {
        (2usize..20, proptest::collection::vec(0usize..6, 0..12)).prop_map(|(n0, bumps)| {
            let mut t = vec![n0];
            let mut gap = n0 - 1;
            for b in bumps {
                gap += b;
                t.push(t.last().unwrap() + gap);
            }
            t
        })
    }

    proptest! {
        #[test]
        fn weight_invariants(t in valid_thresholds()) {
            let w = SuperlinearWeight::from_thresholds(t).unwrap();
            prop_assert_eq!(w.value(0.5), 0.125);
            let top = 3 * *w.thresholds().last().unwrap();
            let mut prev_p = 0.0;
            let mut prev_slope = f64::INFINITY;
            for i in 0..=4 * top {
                let y = i as f64 / 4.0;
                let p = w.derivative(y);
                // p nondecreasing, p <= y, slopes nonincreasing (concave)
                prop_assert!(p >= prev_p - 1e-12);
                prop_assert!(p <= y + 1e-12);
                if i > 0 {
                    let slope = (p - prev_p) * 4.0;
                    prop_assert!(slope <= prev_slope + 1e-9);
                    prev_slope = slope;
                }
                prev_p = p;
            }
            for k in 1..top {
                prop_assert!(w.value((k + 1) as f64) <= (k + 1) as f64 * w.alpha(k + 1) + 1e-9);
                // convexity on integers
                let second = w.value((k + 1) as f64) - 2.0 * w.value(k as f64) + w.value((k - 1) as f64);
                prop_assert!(second >= -1e-9);
            }
            let r1 = w.value(top as f64) / top as f64;
            let r2 = w.value(4.0 * top as f64) / (4.0 * top as f64);
            prop_assert!(r2 > r1);
        }
    }
}
