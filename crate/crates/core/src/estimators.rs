//! f-modeling estimators that act on the frequency table of the sample.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, falling_factorial, pochhammer};

/// Frequency table `N(x)` of observed counts. Every stored key has
/// `N(x) ≥ 1`, and the table is never empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    counts: BTreeMap<u64, u64>,
    n: u64,
}

impl SampleCounts {
    pub fn tabulate(xs: &[u64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySample);
        }
        let mut counts = BTreeMap::new();
        for &x in xs {
            *counts.entry(x).or_insert(0) += 1;
        }
        Ok(Self { counts, n: xs.len() as u64 })
    }

    /// Builds a table from `(x, N(x))` pairs, dropping zero counts.
    pub fn from_counts(pairs: impl IntoIterator<Item = (u64, u64)>) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for (x, c) in pairs {
            if c > 0 {
                *counts.entry(x).or_insert(0) += c;
            }
        }
        let n = counts.values().sum();
        if n == 0 {
            return Err(Error::EmptySample);
        }
        Ok(Self { counts, n })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn x_max(&self) -> u64 {
        *self.counts.keys().next_back().expect("nonempty by construction")
    }

    /// `N(x)`, zero when `x` was not observed.
    pub fn get(&self, x: u64) -> u64 {
        self.counts.get(&x).copied().unwrap_or(0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.counts.iter().map(|(&x, &c)| (x, c))
    }

    pub fn support(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.keys().copied()
    }

    pub fn as_map(&self) -> &BTreeMap<u64, u64> {
        &self.counts
    }
}

/// A nondecreasing, non-negative step function on `0..=x_max`, extended
/// as a constant beyond `x_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEstimator {
    values: Vec<f64>,
}

impl StepEstimator {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidArgument("step estimator needs at least one value".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("step value {v} is not a finite non-negative number")));
        }
        if let Some(i) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(format!(
                "step values decrease at x = {}: {} > {}",
                i + 1,
                values[i],
                values[i + 1]
            )));
        }
        Ok(Self { values })
    }

    /// Largest `x` with an explicitly stored value.
    pub fn x_max(&self) -> u64 {
        (self.values.len() - 1) as u64
    }

    pub fn eval(&self, x: u64) -> f64 {
        let i = (x as usize).min(self.values.len() - 1);
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(x, value)` at `x = 0` and wherever the value changes.
    pub fn breakpoints(&self) -> Vec<(u64, f64)> {
        let mut out = vec![(0, self.values[0])];
        for (i, w) in self.values.windows(2).enumerate() {
            if w[1] != w[0] {
                out.push((i as u64 + 1, w[1]));
            }
        }
        out
    }

    /// Pointwise `min(b, max(a, t(x)))`.
    pub fn clip(&self, a: f64, b: f64) -> Result<Self> {
        check_bounds(a, b)?;
        Ok(Self { values: self.values.iter().map(|v| v.clamp(a, b)).collect() })
    }
}

fn check_bounds(a: f64, b: f64) -> Result<()> {
    if a.is_nan() || b.is_nan() || a < 0.0 || a >= b {
        return Err(Error::InvalidBounds { a, b });
    }
    Ok(())
}

/// Unbiased estimator `X (X-1) ⋯ (X-k+1)` of `θ^k`.
pub fn mom_estimate(x: u64, k: u32) -> f64 {
    falling_factorial(x, k)
}

/// Modified Robbins estimator `(x+1)_k N(x+k) / N(x)` on the observed support.
pub fn robbins_fit(counts: &SampleCounts, k: u32) -> BTreeMap<u64, f64> {
    counts
        .iter()
        .map(|(x, nx)| {
            let ahead = counts.get(x + k as u64) as f64;
            (x, pochhammer((x + 1) as f64, k) * ahead / nx as f64)
        })
        .collect()
}

/// Robbins estimates clipped to `[a, b]`, e.g. `[0, h^k]` for priors on `[0, h]`.
pub fn robbins_fit_clipped(counts: &SampleCounts, k: u32, a: f64, b: f64) -> Result<BTreeMap<u64, f64>> {
    check_bounds(a, b)?;
    Ok(robbins_fit(counts, k).into_iter().map(|(x, v)| (x, v.clamp(a, b))).collect())
}

/// Empirical surrogate risk
/// `(1/n) Σ_x [N(x) t(x)^2 - 2 (x+1)_k N(x+k) t(x)]`.
pub fn erm_objective(counts: &SampleCounts, k: u32, t: &StepEstimator) -> f64 {
    erm_objective_with(counts, k, |x| t.eval(x))
}

/// [`erm_objective`] for an arbitrary function of `x`.
pub fn erm_objective_with<F: Fn(u64) -> f64>(counts: &SampleCounts, k: u32, t: F) -> f64 {
    let quadratic = counts.iter().map(|(x, nx)| nx as f64 * t(x).powi(2));
    let cross = counts
        .iter()
        .filter(|&(y, _)| y >= k as u64)
        .map(|(y, ny)| -2.0 * falling_factorial(y, k) * ny as f64 * t(y - k as u64));
    compensated_sum(quadratic.chain(cross)) / counts.n() as f64
}

/// Minimiser of [`erm_objective`] over nondecreasing non-negative functions.
///
/// Evaluates the min-max formula
/// `t(x) = max_{u ≤ x} min_{v ≥ x, D(u,v) > 0} A(u,v) / D(u,v)` with
/// `A(u,v) = Σ_{i=u}^{v} (i+1)_k N(i+k)` and `D(u,v) = Σ_{i=u}^{v} N(i)` on
/// `0..=x_max`. Ranges with `D(u,v) = 0` are skipped, so unobserved `x`
/// are pooled with the next observed one. `O(x_max^2)`.
pub fn erm_fit(counts: &SampleCounts, k: u32) -> StepEstimator {
    let x_max = counts.x_max() as usize;
    let len = x_max + 1;
    let mut a_prefix = vec![0.0; len + 1];
    let mut d_prefix = vec![0.0; len + 1];
    for i in 0..len {
        let a = pochhammer((i + 1) as f64, k) * counts.get((i + k as usize) as u64) as f64;
        a_prefix[i + 1] = a_prefix[i] + a;
        d_prefix[i + 1] = d_prefix[i] + counts.get(i as u64) as f64;
    }
    let mut values = vec![0.0f64; len];
    let mut suffix_min = vec![f64::INFINITY; len + 1];
    for u in 0..len {
        suffix_min[len] = f64::INFINITY;
        for v in (u..len).rev() {
            let d = d_prefix[v + 1] - d_prefix[u];
            let ratio = if d > 0.0 { (a_prefix[v + 1] - a_prefix[u]) / d } else { f64::INFINITY };
            suffix_min[v] = suffix_min[v + 1].min(ratio);
        }
        for x in u..len {
            values[x] = values[x].max(suffix_min[x]);
        }
    }
    StepEstimator::new(values).expect("min-max solution is monotone and non-negative")
}

/// Minimiser over monotone functions with values in `[a, b]`, which is the
/// pointwise clip of [`erm_fit`].
pub fn erm_fit_clipped(counts: &SampleCounts, k: u32, a: f64, b: f64) -> Result<StepEstimator> {
    check_bounds(a, b)?;
    erm_fit(counts, k).clip(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(pairs: &[(u64, u64)]) -> SampleCounts {
        SampleCounts::from_counts(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn tabulate_examples() {
        let c = SampleCounts::tabulate(&[0, 1, 1]).unwrap();
        assert_eq!(c.get(0), 1);
        assert_eq!(c.get(1), 2);
        assert_eq!((c.n(), c.x_max()), (3, 1));
        let c = SampleCounts::tabulate(&[5]).unwrap();
        assert_eq!((c.get(5), c.n(), c.x_max()), (1, 1, 5));
        assert!(matches!(SampleCounts::tabulate(&[]), Err(Error::EmptySample)));
        assert_eq!(
            SampleCounts::tabulate(&[3, 0, 3, 1]).unwrap(),
            SampleCounts::tabulate(&[1, 3, 3, 0]).unwrap()
        );
    }

    #[test]
    fn mom_examples() {
        assert_eq!(mom_estimate(5, 2), 20.0);
        assert_eq!(mom_estimate(1, 3), 0.0);
        assert_eq!(mom_estimate(9, 1), 9.0);
    }

    #[test]
    fn robbins_examples() {
        let fit = robbins_fit(&counts(&[(0, 1), (1, 2)]), 1);
        assert_eq!(fit[&0], 2.0);
        assert_eq!(fit[&1], 0.0);
        for k in 1..=4 {
            let fit = robbins_fit(&counts(&[(0, 10)]), k);
            assert_eq!(fit.len(), 1);
            assert_eq!(fit[&0], 0.0);
        }
        let clipped = robbins_fit_clipped(&counts(&[(0, 1), (1, 2)]), 1, 0.0, 1.5).unwrap();
        assert_eq!(clipped[&0], 1.5);
    }

    #[test]
    fn erm_objective_examples() {
        let c = counts(&[(1, 2)]);
        let zero = StepEstimator::new(vec![0.0, 0.0]).unwrap();
        assert_eq!(erm_objective(&c, 1, &zero), 0.0);
        let one = StepEstimator::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(erm_objective(&c, 1, &one), -1.0);
    }

    #[test]
    fn erm_objective_per_sample_form_agrees() {
        let xs = [0u64, 3, 3, 1, 5, 2, 2, 2, 7];
        let c = SampleCounts::tabulate(&xs).unwrap();
        let t = StepEstimator::new(vec![0.0, 0.5, 1.0, 1.0, 2.5, 3.0, 3.0, 4.0]).unwrap();
        for k in 1..=3u32 {
            let per_sample: f64 = xs
                .iter()
                .map(|&x| {
                    let shifted = if x >= k as u64 { t.eval(x - k as u64) } else { 0.0 };
                    t.eval(x).powi(2) - 2.0 * falling_factorial(x, k) * shifted
                })
                .sum::<f64>()
                / xs.len() as f64;
            assert!((per_sample - erm_objective(&c, k, &t)).abs() < 1e-12);
        }
    }

    #[test]
    fn erm_pools_single_point() {
        let fit = erm_fit(&counts(&[(1, 2)]), 1);
        assert_eq!(fit.values(), &[1.0, 1.0]);
        assert_eq!(fit.eval(10), 1.0);
    }

    #[test]
    fn erm_all_zeros_is_zero() {
        for k in 1..=3 {
            let fit = erm_fit(&counts(&[(0, 17)]), k);
            assert_eq!(fit.values(), &[0.0]);
        }
    }

    #[test]
    fn erm_clipped_examples() {
        let c = counts(&[(1, 2)]);
        let fit = erm_fit_clipped(&c, 1, 0.0, 0.5).unwrap();
        assert_eq!(fit.values(), &[0.5, 0.5]);
        assert_eq!(erm_fit_clipped(&c, 1, 0.0, 100.0).unwrap(), erm_fit(&c, 1));
        assert!(matches!(erm_fit_clipped(&c, 1, 2.0, 2.0), Err(Error::InvalidBounds { .. })));
        assert!(matches!(erm_fit_clipped(&c, 1, -1.0, 2.0), Err(Error::InvalidBounds { .. })));
    }

    #[test]
    fn step_estimator_validation() {
        assert!(StepEstimator::new(vec![1.0, 0.5]).is_err());
        assert!(StepEstimator::new(vec![-1.0]).is_err());
        assert!(StepEstimator::new(vec![]).is_err());
        let s = StepEstimator::new(vec![0.0, 0.0, 2.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.breakpoints(), vec![(0, 0.0), (2, 2.0), (4, 3.0)]);
    }

    fn arb_counts() -> impl Strategy<Value = SampleCounts> {
        prop::collection::vec(0u64..12, 1..40).prop_map(|xs| SampleCounts::tabulate(&xs).unwrap())
    }

    proptest! {
        #[test]
        fn erm_is_monotone_and_bounded(c in arb_counts(), k in 1u32..=3) {
            let fit = erm_fit(&c, k);
            prop_assert_eq!(fit.x_max(), c.x_max());
            prop_assert!(fit.values().windows(2).all(|w| w[0] <= w[1]));
            let bound = falling_factorial(c.x_max(), k);
            prop_assert!(fit.eval(c.x_max()) <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn clipping_is_pointwise(c in arb_counts(), k in 1u32..=3, a in 0.0..5.0f64, w in 0.1..50.0f64) {
            let b = a + w;
            let clipped = erm_fit_clipped(&c, k, a, b).unwrap();
            let raw = erm_fit(&c, k);
            for x in 0..=c.x_max() {
                prop_assert_eq!(clipped.eval(x), raw.eval(x).max(a).min(b));
            }
        }

        #[test]
        fn robbins_agrees_with_erm_when_nothing_pools(c in arb_counts(), k in 1u32..=2) {
            let rob = robbins_fit(&c, k);
            let increasing = rob.values().zip(rob.values().skip(1)).all(|(a, b)| a < b);
            // Every x carrying cross-term mass must also be observed.
            let covered = (0..=c.x_max()).all(|x| c.get(x) > 0 || c.get(x + k as u64) == 0);
            if increasing && covered {
                let erm = erm_fit(&c, k);
                for (&x, &r) in &rob {
                    prop_assert!((erm.eval(x) - r).abs() <= 1e-12 * r.max(1.0));
                }
            }
        }

        #[test]
        fn fits_depend_only_on_counts(mut xs in prop::collection::vec(0u64..10, 1..30), k in 1u32..=2) {
            let a = SampleCounts::tabulate(&xs).unwrap();
            xs.reverse();
            let b = SampleCounts::tabulate(&xs).unwrap();
            prop_assert_eq!(erm_fit(&a, k), erm_fit(&b, k));
            prop_assert_eq!(robbins_fit(&a, k), robbins_fit(&b, k));
        }
    }
}
