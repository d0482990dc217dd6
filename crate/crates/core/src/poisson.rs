//! Exact Poisson-mixture machinery.
//!
//! Everything is computed in log space: `f_π(x)` underflows long before the
//! tail cutoffs used at large `n`, while ratios such as the Tweedie quotient
//! `f_π(x+k) / f_π(x)` stay perfectly representable.

use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, integrate, ln_factorial, ln_poisson_pmf, log_sum_exp};
pub use crate::numeric::pochhammer;
use crate::prior::{Prior, PriorClassTag, PriorKind};
use crate::rng::{self, OBSERVATION_STREAM};

/// Relative tolerance of the adaptive quadrature used for uniform priors.
const QUADRATURE_REL_TOL: f64 = 1e-11;
/// Mass the pmf cache must capture below its cutoff.
const CACHE_TAIL_TOL: f64 = 1e-12;
/// Absolute bound on the neglected tail of the MMSE series. Well below the
/// 1e-10 the series must meet, so that tail error never dominates rounding.
const MMSE_TAIL_TOL: f64 = 1e-14;
/// Entries cached past the cutoff so that `f(x + k)` lookups stay in the table.
const CACHE_MARGIN: u64 = 64;
/// Hard stop for series that never meet their tolerance.
const SERIES_LIMIT: u64 = 1_000_000;

/// `log f_π(x) = log ∫ e^{-θ} θ^x / x! dπ(θ)`.
pub fn ln_mixture_pmf(prior: &Prior, x: u64) -> f64 {
    match prior.kind() {
        PriorKind::PointMasses { atoms, weights } => log_sum_exp(
            atoms
                .iter()
                .zip(weights)
                .map(|(&theta, &w)| w.ln() + ln_poisson_pmf(theta, x)),
        ),
        PriorKind::Uniform { lo, hi } => {
            let (lo, hi) = (*lo, *hi);
            let peak = (x as f64).clamp(lo, hi);
            let ln_peak = ln_poisson_pmf(peak, x);
            let scaled = |theta: f64| (ln_poisson_pmf(theta, x) - ln_peak).exp();
            // Splitting at the mode keeps each panel's integrand monotone.
            let mut mass = 0.0;
            if peak > lo {
                mass += integrate(&scaled, lo, peak, QUADRATURE_REL_TOL);
            }
            if peak < hi {
                mass += integrate(&scaled, peak, hi, QUADRATURE_REL_TOL);
            }
            ln_peak + mass.ln() - (hi - lo).ln()
        }
        PriorKind::Gamma { shape, rate } => ln_negative_binomial(*shape, *rate, x),
        PriorKind::Exponential { scale } => ln_negative_binomial(1.0, 1.0 / scale, x),
    }
}

/// Gamma(α, β) mixed Poisson is negative binomial:
/// `C(x+α-1, x) (β/(1+β))^α (1/(1+β))^x`.
fn ln_negative_binomial(shape: f64, rate: f64, x: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let x_f = x as f64;
    ln_gamma(x_f + shape) - ln_gamma(shape) - ln_factorial(x)
        + shape * (rate / (1.0 + rate)).ln()
        - x_f * (1.0 + rate).ln()
}

pub fn mixture_pmf(prior: &Prior, x: u64) -> f64 {
    ln_mixture_pmf(prior, x).exp()
}

/// `log (x+1)_k`.
fn ln_rising_from(x: u64, k: u32) -> f64 {
    compensated_sum((1..=k as u64).map(|i| ((x + i) as f64).ln()))
}

fn tweedie(ln_f_x: f64, ln_f_xk: f64, k: u32, x: u64) -> Result<f64> {
    if ln_f_x == f64::NEG_INFINITY || ln_f_x.is_nan() {
        return Err(Error::UnsupportedPoint { x });
    }
    if ln_f_xk == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    Ok((ln_rising_from(x, k) + ln_f_xk - ln_f_x).exp())
}

/// Posterior moment `E_π[θ^k | X = x] = (x+1)_k f_π(x+k) / f_π(x)`.
pub fn bayes_estimate(prior: &Prior, k: u32, x: u64) -> Result<f64> {
    tweedie(ln_mixture_pmf(prior, x), ln_mixture_pmf(prior, x + k as u64), k, x)
}

/// Chernoff bound `log P(X ≥ x)` for `X ~ Poi(λ)`, `λ ≤ h ≤ x`.
fn ln_chernoff_tail(h: f64, x: u64) -> f64 {
    if x == 0 {
        return 0.0;
    }
    if h == 0.0 {
        return f64::NEG_INFINITY;
    }
    let x = x as f64;
    if x < h {
        return 0.0;
    }
    x * (1.0 + h.ln()) - h - x * x.ln()
}

/// Precomputed `log f_π(x)` up to a cutoff past which the pmf has
/// negligible mass. Immutable once built.
#[derive(Debug, Clone)]
pub struct MixturePmfCache {
    prior: Prior,
    log_pmf: Vec<f64>,
    cutoff: u64,
}

impl MixturePmfCache {
    pub fn new(prior: &Prior) -> Self {
        let bound = prior.support_upper();
        let mut log_pmf = Vec::new();
        let mut cumulative = 0.0;
        let mut x = 0u64;
        let cutoff = loop {
            let lp = ln_mixture_pmf(prior, x);
            log_pmf.push(lp);
            cumulative += lp.exp();
            let tail_ok = match bound {
                Some(h) => ln_chernoff_tail(h, x + 1) < (0.1 * CACHE_TAIL_TOL).ln(),
                None => false,
            };
            if cumulative >= 1.0 - CACHE_TAIL_TOL || tail_ok || x >= SERIES_LIMIT {
                break x;
            }
            x += 1;
        };
        for y in cutoff + 1..=cutoff + CACHE_MARGIN {
            log_pmf.push(ln_mixture_pmf(prior, y));
        }
        Self { prior: prior.clone(), log_pmf, cutoff }
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    /// Smallest `x*` with `Σ_{x ≤ x*} f_π(x) ≥ 1 - 1e-12`.
    pub fn cutoff(&self) -> u64 {
        self.cutoff
    }

    pub fn ln_pmf(&self, x: u64) -> f64 {
        match self.log_pmf.get(x as usize) {
            Some(&v) => v,
            None => ln_mixture_pmf(&self.prior, x),
        }
    }

    pub fn pmf(&self, x: u64) -> f64 {
        self.ln_pmf(x).exp()
    }

    pub fn bayes_estimate(&self, k: u32, x: u64) -> Result<f64> {
        tweedie(self.ln_pmf(x), self.ln_pmf(x + k as u64), k, x)
    }
}

/// Sums `Σ_x f_π(x) g(x)` for a non-negative per-x quantity until the
/// neglected tail is certified (bounded priors) or estimated (unbounded) to
/// be below `tol`. `sup` bounds `g` on bounded priors.
fn tail_controlled_series<G>(cache: &MixturePmfCache, sup: Option<f64>, tol: f64, mut g: G) -> f64
where
    G: FnMut(u64) -> f64,
{
    let prior = cache.prior();
    let mut acc = crate::numeric::CompensatedSum::new();
    let mut mass = 0.0;
    let mut prev_term = f64::NAN;
    let growth = gamma_growth(prior);
    for x in 0..SERIES_LIMIT {
        let p = cache.pmf(x);
        let term = if p > 0.0 { p * g(x) } else { 0.0 };
        acc.add(term);
        mass += p;
        let done = match (prior.support_upper(), sup) {
            (Some(h), Some(sup)) => {
                let ln_tail = ln_chernoff_tail(h, x + 1);
                sup == 0.0 || ln_tail + sup.ln() < tol.ln()
            }
            _ => {
                // Geometric tail estimate from the ratio of successive terms,
                // floored at the asymptotic ratio when it is known.
                let ratio = if prev_term > 0.0 { term / prev_term } else { f64::NAN };
                let ratio = match growth {
                    Some(rho) => ratio.max(rho),
                    None => ratio,
                };
                x > 0
                    && mass >= 1.0 - 1e-13
                    && ratio < 1.0
                    && term * ratio / (1.0 - ratio) < tol
            }
        };
        if done {
            break;
        }
        prev_term = term;
    }
    acc.value()
}

/// Asymptotic term ratio `1 / (1 + β)` of the negative binomial pmf.
fn gamma_growth(prior: &Prior) -> Option<f64> {
    match prior.kind() {
        PriorKind::Gamma { rate, .. } => Some(1.0 / (1.0 + rate)),
        PriorKind::Exponential { scale } => Some(scale / (1.0 + scale)),
        _ => None,
    }
}

/// Bayes risk for estimating `θ^k`:
/// `E_π[θ^{2k}] - Σ_x f_π(x) E[θ^k | x]^2`, clamped at zero.
pub fn mmse(prior: &Prior, k: u32) -> f64 {
    mmse_with_cache(&MixturePmfCache::new(prior), k)
}

pub fn mmse_with_cache(cache: &MixturePmfCache, k: u32) -> f64 {
    let prior = cache.prior();
    let sup = prior.support_upper().map(|h| h.powi(2 * k as i32));
    let explained = tail_controlled_series(cache, sup, MMSE_TAIL_TOL, |x| {
        cache.bayes_estimate(k, x).map(|t| t * t).unwrap_or(0.0)
    });
    (prior.moment(2 * k) - explained).max(0.0)
}

/// `E_π[g(θ) | X = x]` for an arbitrary function, by exact summation
/// (point masses) or adaptive quadrature of the posterior density.
pub fn posterior_expectation<F: Fn(f64) -> f64>(prior: &Prior, g: &F, x: u64) -> Result<f64> {
    match prior.kind() {
        PriorKind::PointMasses { atoms, weights } => {
            let logs: Vec<f64> = atoms
                .iter()
                .zip(weights)
                .map(|(&t, &w)| w.ln() + ln_poisson_pmf(t, x))
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if top == f64::NEG_INFINITY {
                return Err(Error::UnsupportedPoint { x });
            }
            let den = compensated_sum(logs.iter().map(|&l| (l - top).exp()));
            let num = compensated_sum(
                logs.iter().zip(atoms).map(|(&l, &t)| (l - top).exp() * g(t)),
            );
            Ok(num / den)
        }
        PriorKind::Uniform { lo, hi } => {
            let peak = (x as f64).clamp(*lo, *hi);
            let ln_peak = ln_poisson_pmf(peak, x);
            if ln_peak == f64::NEG_INFINITY {
                return Err(Error::UnsupportedPoint { x });
            }
            let w = |t: f64| (ln_poisson_pmf(t, x) - ln_peak).exp();
            let gw = |t: f64| w(t) * g(t);
            let split = |f: &dyn Fn(f64) -> f64| {
                let mut s = 0.0;
                if peak > *lo {
                    s += integrate(&f, *lo, peak, QUADRATURE_REL_TOL);
                }
                if peak < *hi {
                    s += integrate(&f, peak, *hi, QUADRATURE_REL_TOL);
                }
                s
            };
            Ok(split(&gw) / split(&w))
        }
        PriorKind::Gamma { .. } | PriorKind::Exponential { .. } => {
            let (shape, rate) = match *prior.kind() {
                PriorKind::Gamma { shape, rate } => (shape, rate),
                PriorKind::Exponential { scale } => (1.0, 1.0 / scale),
                _ => unreachable!(),
            };
            // Posterior is Gamma(x + α, β + 1).
            let a = x as f64 + shape;
            let b = rate + 1.0;
            Ok(gamma_expectation(a, b, g))
        }
    }
}

/// `E[g(Θ)]` for `Θ ~ Gamma(a, b)` by adaptive quadrature over a range
/// holding all but a negligible fraction of the mass.
fn gamma_expectation<F: Fn(f64) -> f64>(a: f64, b: f64, g: &F) -> f64 {
    let mode = ((a - 1.0) / b).max(0.0);
    let ln_mode_density = if mode > 0.0 { (a - 1.0) * mode.ln() - b * mode } else { 0.0 };
    let ln_density = |t: f64| (a - 1.0) * t.ln() - b * t - ln_mode_density;
    let sd = a.sqrt() / b;
    let upper = a / b + 60.0 * sd + 60.0 / b;
    let w = |t: f64| if t > 0.0 { ln_density(t).exp() } else { 0.0 };
    let gw = |t: f64| w(t) * g(t);
    let pieces = |f: &dyn Fn(f64) -> f64| {
        let mut s = 0.0;
        if mode > 0.0 {
            s += integrate(&f, 0.0, mode, QUADRATURE_REL_TOL);
        }
        s + integrate(&f, mode, upper, QUADRATURE_REL_TOL)
    };
    pieces(&gw) / pieces(&w)
}

/// `E_π[g(θ)]` under the prior itself.
pub fn prior_expectation<F: Fn(f64) -> f64>(prior: &Prior, g: &F) -> f64 {
    match prior.kind() {
        PriorKind::PointMasses { atoms, weights } => {
            compensated_sum(atoms.iter().zip(weights).map(|(&t, &w)| w * g(t)))
        }
        PriorKind::Uniform { lo, hi } => integrate(g, *lo, *hi, QUADRATURE_REL_TOL) / (hi - lo),
        PriorKind::Gamma { shape, rate } => gamma_expectation(*shape, *rate, g),
        PriorKind::Exponential { scale } => gamma_expectation(1.0, 1.0 / scale, g),
    }
}

/// Bayes risk for estimating `g(θ)`: `E[g(θ)^2] - Σ_x f_π(x) E[g(θ) | x]^2`.
pub fn mmse_functional<F: Fn(f64) -> f64>(cache: &MixturePmfCache, g: &F) -> f64 {
    let prior = cache.prior();
    let second = prior_expectation(prior, &|t| g(t) * g(t));
    let sup = prior.support_upper().map(|h| {
        // sup of g^2 on the support, sampled densely.
        (0..=4096)
            .map(|i| g(h * i as f64 / 4096.0).powi(2))
            .fold(0.0, f64::max)
    });
    let explained = tail_controlled_series(cache, sup, MMSE_TAIL_TOL, |x| {
        posterior_expectation(prior, g, x).map(|t| t * t).unwrap_or(0.0)
    });
    (second - explained).max(0.0)
}

/// Class-uniform tail cutoff: `P_{X ~ f_π}[X ≥ x0] ≤ 1/n` for every π in
/// the class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailCutoff {
    pub x0: u64,
    pub class: PriorClassTag,
    pub n: u64,
}

/// For `P([0, h])`, the smallest integer `x0 ≥ h` whose Chernoff bound
/// `(eh)^{x0} e^{-h} / x0^{x0}` is at most `1/n`. For `SubE(s)`,
/// `x0 = ⌈(s+1) log n⌉`.
pub fn tail_cutoff(class: PriorClassTag, n: u64) -> Result<TailCutoff> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("tail cutoff needs n >= 3, got {n}")));
    }
    let ln_n = (n as f64).ln();
    let x0 = match class {
        PriorClassTag::Bounded { h } => {
            let mut x = (h.ceil() as u64).max(1);
            while ln_chernoff_tail(h, x) > -ln_n {
                x += 1;
            }
            x
        }
        PriorClassTag::SubExponential { s } => ((s + 1.0) * ln_n).ceil() as u64,
    };
    Ok(TailCutoff { x0, class, n })
}

/// Draws `θ_i ~ π` and `X_i | θ_i ~ Poi(θ_i)`; deterministic in `seed`.
pub fn sample_channel(prior: &Prior, n: usize, seed: u64) -> (Vec<f64>, Vec<u64>) {
    let thetas = prior.sample_theta(n, seed);
    let mut rng = rng::stream(seed, OBSERVATION_STREAM);
    let xs = thetas
        .iter()
        .map(|&theta| {
            if theta <= 0.0 {
                0
            } else {
                Poisson::new(theta).expect("finite positive rate").sample(&mut rng) as u64
            }
        })
        .collect();
    (thetas, xs)
}
