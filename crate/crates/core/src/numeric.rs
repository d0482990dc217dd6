//! Small numerical kernels shared across modules.

use std::sync::OnceLock;

pub use statrs::function::factorial::ln_factorial;

/// `log(Σ exp(v))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = iter.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Rising factorial `x (x+1) ⋯ (x+m-1)`; the empty product is 1.
pub fn pochhammer(x: f64, m: u32) -> f64 {
    (0..m).fold(1.0, |acc, i| acc * (x + i as f64))
}

/// Falling factorial `x (x-1) ⋯ (x-k+1)`, which is `(x-k+1)_k`. Zero when `x < k`.
pub fn falling_factorial(x: u64, k: u32) -> f64 {
    if x < k as u64 {
        return 0.0;
    }
    (0..k as u64).fold(1.0, |acc, i| acc * (x - i) as f64)
}

/// Log of the Poisson pmf `e^{-θ} θ^x / x!`, with `0^0 = 1`.
pub fn ln_poisson_pmf(theta: f64, x: u64) -> f64 {
    if theta == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    -theta + x as f64 * theta.ln() - ln_factorial(x)
}

/// Neumaier compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Self::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    values.into_iter().collect::<CompensatedSum>().value()
}

const GL_ORDER: usize = 128;

/// Gauss–Legendre nodes and weights on `[-1, 1]`, computed once by Newton
/// iteration on the Legendre recurrence.
fn gauss_legendre() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = GL_ORDER;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let mut p0 = 1.0;
                let mut p1 = 0.0;
                for j in 0..n {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
                }
                dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
                let dz = p0 / dp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    break;
                }
            }
            let w = 2.0 / ((1.0 - z * z) * dp * dp);
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        (nodes, weights)
    })
}

/// One 128-node Gauss–Legendre panel on `[a, b]`.
pub fn gauss_legendre_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = gauss_legendre();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let s = compensated_sum(
        nodes
            .iter()
            .zip(weights)
            .map(|(&t, &w)| w * f(mid + half * t)),
    );
    half * s
}

/// Adaptive Gauss–Legendre quadrature: a panel is accepted when it agrees
/// with the sum of its two halves to `rel_tol` (relative to the running
/// total) and is otherwise bisected.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        scale: f64,
        rel_tol: f64,
        depth: u32,
    ) -> f64 {
        let mid = 0.5 * (a + b);
        let left = gauss_legendre_panel(f, a, mid);
        let right = gauss_legendre_panel(f, mid, b);
        let refined = left + right;
        let scale = scale.max(refined.abs());
        if depth >= 40 || (refined - whole).abs() <= rel_tol * scale {
            return refined;
        }
        recurse(f, a, mid, left, scale, rel_tol, depth + 1)
            + recurse(f, mid, b, right, scale, rel_tol, depth + 1)
    }
    if a == b {
        return 0.0;
    }
    let whole = gauss_legendre_panel(f, a, b);
    recurse(f, a, b, whole, whole.abs(), rel_tol, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pochhammer_examples() {
        assert_eq!(pochhammer(1.0, 3), 6.0);
        assert_eq!(pochhammer(4.0, 2), 20.0);
        assert_eq!(pochhammer(-3.7, 0), 1.0);
        assert_eq!(pochhammer(0.0, 0), 1.0);
    }

    #[test]
    fn falling_factorial_examples() {
        assert_eq!(falling_factorial(5, 2), 20.0);
        assert_eq!(falling_factorial(1, 3), 0.0);
        assert_eq!(falling_factorial(3, 3), 6.0);
        assert_eq!(falling_factorial(7, 0), 1.0);
    }

    #[test]
    fn log_sum_exp_handles_extremes() {
        assert_eq!(log_sum_exp(Vec::<f64>::new()), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp(vec![f64::NEG_INFINITY; 3]), f64::NEG_INFINITY);
        let v = log_sum_exp(vec![-1000.0, -1000.0]);
        assert!((v - (-1000.0 + 2f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        let (nodes, weights) = gauss_legendre();
        assert!((weights.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        assert!(nodes.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn integrate_polynomial_and_exponential() {
        let v = integrate(&|t: f64| t.powi(7), 0.0, 2.0, 1e-12);
        assert!((v - 2f64.powi(8) / 8.0).abs() < 1e-11);
        let v = integrate(&|t: f64| (-t).exp(), 0.0, 50.0, 1e-12);
        assert!((v - (1.0 - (-50f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let s = compensated_sum([1.0, 1e-16, 1e-16, -1.0]);
        assert!((s - 2e-16).abs() < 1e-30);
    }
}
