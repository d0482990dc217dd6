//! Smooth functionals `E[ℓ(θ) | X]` via a degree-k polynomial approximation
//! `ℓ ≈ Σ c_m θ^m` combined with per-moment estimators.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{erm_fit, erm_fit_clipped, robbins_fit, SampleCounts, StepEstimator};
use crate::mindist::{self, make_grid, npmle_fit, plugin_bayes};
use crate::numeric::compensated_sum;
use crate::poisson::MixturePmfCache;
use crate::prior::{Prior, PriorClassTag};

/// Degrees above this are rejected: monomial coefficients grow like `e^k`.
pub const MAX_DEGREE: usize = 30;
/// Points in the equispaced grid on which `sup_residual` is measured.
pub const RESIDUAL_GRID: usize = 10_000;
pub const DEFAULT_DEGREE_CONSTANT: f64 = 0.5;

/// Monomial-basis polynomial approximation of `ℓ` on `[0, h]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyApprox {
    coefficients: Vec<f64>,
    sup_residual: f64,
    h: f64,
}

impl PolyApprox {
    /// An approximation with given coefficients `c_0..c_k`, for callers that
    /// combine or rescale existing approximations.
    pub fn from_coefficients(coefficients: Vec<f64>, h: f64, sup_residual: f64) -> Result<Self> {
        if coefficients.is_empty() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("coefficients must be nonempty and finite".into()));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!("domain endpoint must be positive, got {h}")));
        }
        if !(sup_residual >= 0.0) {
            return Err(Error::InvalidArgument(format!("residual must be >= 0, got {sup_residual}")));
        }
        Ok(Self { coefficients, sup_residual, h })
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn sup_residual(&self) -> f64 {
        self.sup_residual
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn eval(&self, theta: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, c| acc.mul_add(theta, *c))
    }
}

/// Chebyshev interpolant of `ℓ` at the `k + 1` Chebyshev–Lobatto nodes of
/// `[0, h]` (the midpoint when `k = 0`), in the monomial basis.
pub fn chebyshev_approx<F: Fn(f64) -> f64>(ell: F, h: f64, k: usize) -> Result<PolyApprox> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("domain endpoint must be positive, got {h}")));
    }
    if k > MAX_DEGREE {
        return Err(Error::DegreeTooLarge(k));
    }
    let eval = |theta: f64| {
        let v = ell(theta);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteFunction { theta })
        }
    };

    let coefficients = if k == 0 {
        vec![eval(0.5 * h)?]
    } else {
        // Node j sits at t_j = cos(π j / k) on [-1, 1].
        let t: Vec<f64> = (0..=k).map(|j| cos_pi_ratio(j, k)).collect();
        let values: Vec<f64> = t.iter().map(|&t| eval(0.5 * h * (1.0 + t))).collect::<Result<_>>()?;
        let cheb: Vec<f64> = (0..=k)
            .map(|m| {
                let s = compensated_sum((0..=k).map(|j| {
                    let edge = if j == 0 || j == k { 0.5 } else { 1.0 };
                    edge * values[j] * cos_pi_ratio(m * j, k)
                }));
                let edge = if m == 0 || m == k { 0.5 } else { 1.0 };
                2.0 * edge * s / k as f64
            })
            .collect();
        // Rounding in the node values leaves noise of order ε·max|ℓ| in
        // every coefficient. Chebyshev terms at that level are dropped
        // before the basis change (|T_m| ≤ 1 on the domain), and so are
        // monomial terms whose whole contribution on [0, h] is that small.
        // Polynomials of degree ≤ k then come back exactly.
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let noise = 8.0 * (k + 1) as f64 * f64::EPSILON * scale;
        let cheb: Vec<f64> = cheb.into_iter().map(|a| if a.abs() <= noise { 0.0 } else { a }).collect();
        let mut c = chebyshev_to_monomial(&cheb, h);
        for (m, cm) in c.iter_mut().enumerate() {
            if cm.abs() * h.powi(m as i32) <= noise {
                *cm = 0.0;
            }
        }
        c
    };

    let mut sup_residual = 0.0f64;
    let last = RESIDUAL_GRID - 1;
    let probe = PolyApprox { coefficients, sup_residual: 0.0, h };
    for i in 0..RESIDUAL_GRID {
        let theta = if i == last { h } else { h * i as f64 / last as f64 };
        let v = eval(theta)?;
        sup_residual = sup_residual.max((v - probe.eval(theta)).abs());
    }
    Ok(PolyApprox { sup_residual, ..probe })
}

/// `cos(π r / k)` with the argument reduced by symmetry so that the
/// multiples of π/2 come out exact.
fn cos_pi_ratio(r: usize, k: usize) -> f64 {
    let period = 2 * k;
    let mut r = r % period;
    if r > k {
        r = period - r;
    }
    // r ∈ [0, k]; cos(π r / k) = -cos(π (k - r) / k).
    if 2 * r == k {
        0.0
    } else if 2 * r > k {
        -(std::f64::consts::PI * (k - r) as f64 / k as f64).cos()
    } else {
        (std::f64::consts::PI * r as f64 / k as f64).cos()
    }
}

/// Double-double value `hi + lo`.
#[derive(Debug, Clone, Copy, Default)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    fn new(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (hi, lo) = two_sum(s, e + self.lo + o.lo);
        Dd { hi, lo }
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        let (hi, lo) = two_sum(p, e + self.hi * o.lo + self.lo * o.hi);
        Dd { hi, lo }
    }
}

/// Rewrites `Σ a_m T_m(2θ/h - 1)` in powers of θ.
fn chebyshev_to_monomial(cheb: &[f64], h: f64) -> Vec<f64> {
    let k = cheb.len() - 1;
    let slope = {
        // 2/h to double-double accuracy: one Newton correction of 1/h.
        let inv = Dd::new(1.0 / h);
        let resid = Dd::new(1.0) + Dd::new(-1.0) * (Dd::new(h) * inv);
        Dd::new(2.0) * (inv + inv * resid)
    };
    // u(θ) = slope·θ - 1.
    let times_u = |p: &[Dd]| -> Vec<Dd> {
        let mut out = vec![Dd::default(); p.len() + 1];
        for (i, &c) in p.iter().enumerate() {
            out[i] = out[i] + c * Dd::new(-1.0);
            out[i + 1] = out[i + 1] + c * slope;
        }
        out
    };
    let mut acc = vec![Dd::default(); k + 1];
    let mut prev = vec![Dd::new(1.0)];
    let mut cur = times_u(&prev);
    acc[0] = Dd::new(cheb[0]);
    for m in 1..=k {
        for (i, &c) in cur.iter().enumerate() {
            acc[i] = acc[i] + c * Dd::new(cheb[m]);
        }
        if m < k {
            let mut next = times_u(&cur);
            for (i, c) in next.iter_mut().enumerate() {
                *c = *c * Dd::new(2.0);
                if i < prev.len() {
                    *c = *c + prev[i] * Dd::new(-1.0);
                }
            }
            prev = cur;
            cur = next;
        }
    }
    acc.into_iter().map(Dd::value).collect()
}

/// `max(1, ⌊c · log n / log log n⌋)`. Below `n = e^e` the ratio decreases
/// in `n` (and blows up near `n = e`), so those sizes get degree 1.
pub fn select_degree(n: u64, c: f64) -> Result<usize> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!("degree selection needs n >= 3, got {n}")));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::InvalidArgument(format!("degree constant must lie in (0, 1], got {c}")));
    }
    let ln = (n as f64).ln();
    if ln < std::f64::consts::E {
        return Ok(1);
    }
    Ok(((c * ln / ln.ln()).floor() as usize).max(1))
}

/// Built-in test functionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NamedFunctional {
    /// θ³.
    Cube,
    /// e^θ.
    Exp,
    /// (1 + θ)^{1/2}.
    Sqrt1p,
    /// |θ - h/2|.
    LipschitzAbs,
}

impl NamedFunctional {
    pub const ALL: [NamedFunctional; 4] = [Self::Cube, Self::Exp, Self::Sqrt1p, Self::LipschitzAbs];

    pub fn name(self) -> &'static str {
        match self {
            Self::Cube => "cube",
            Self::Exp => "exp",
            Self::Sqrt1p => "sqrt1p",
            Self::LipschitzAbs => "lipschitz-abs",
        }
    }

    /// `ℓ(θ)`; `h` only matters for `lipschitz-abs`.
    pub fn eval(self, theta: f64, h: f64) -> f64 {
        match self {
            Self::Cube => theta.powi(3),
            Self::Exp => theta.exp(),
            Self::Sqrt1p => (1.0 + theta).sqrt(),
            Self::LipschitzAbs => (theta - 0.5 * h).abs(),
        }
    }
}

impl fmt::Display for NamedFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NamedFunctional {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown functional `{s}`")))
    }
}

/// Source of the per-moment estimates `T̂_m`.
#[derive(Debug, Clone)]
pub enum MomentBackend {
    Robbins,
    Erm,
    /// ERM for moment `m` clipped to `[0, h^m]`.
    ErmClipped { h: f64 },
    /// Tweedie formula under the grid NPMLE; the grid follows [`make_grid`]
    /// with the given class.
    NpmlePlugin { class: Option<PriorClassTag> },
    /// Bayes rule under the true prior.
    Oracle(Prior),
}

#[derive(Debug, Clone)]
enum MomentFits {
    Robbins(Vec<BTreeMap<u64, f64>>),
    Step(Vec<StepEstimator>),
    Oracle(MixturePmfCache),
}

/// `T̂_ℓ(x) = c_0 + Σ_{m=1}^k c_m T̂_m(x)` with the moment fits computed once.
#[derive(Debug, Clone)]
pub struct SmoothEstimator {
    approx: PolyApprox,
    fits: MomentFits,
}

impl SmoothEstimator {
    pub fn fit(counts: &SampleCounts, approx: &PolyApprox, backend: &MomentBackend) -> Result<Self> {
        let k = approx.degree() as u32;
        let fits = match backend {
            MomentBackend::Robbins => MomentFits::Robbins((1..=k).map(|m| robbins_fit(counts, m)).collect()),
            MomentBackend::Erm => MomentFits::Step((1..=k).map(|m| erm_fit(counts, m)).collect()),
            MomentBackend::ErmClipped { h } => MomentFits::Step(
                (1..=k)
                    .map(|m| erm_fit_clipped(counts, m, 0.0, h.powi(m as i32)))
                    .collect::<Result<_>>()?,
            ),
            MomentBackend::NpmlePlugin { class } => {
                let grid = make_grid(counts.x_max(), *class, mindist::DEFAULT_GRID_POINTS)?;
                let (fitted, _) = npmle_fit(counts, &grid, mindist::DEFAULT_TOL, mindist::DEFAULT_MAX_ITER)?;
                MomentFits::Step(
                    (1..=k)
                        .map(|m| plugin_bayes(&fitted, m, counts.x_max()))
                        .collect::<Result<_>>()?,
                )
            }
            MomentBackend::Oracle(prior) => MomentFits::Oracle(MixturePmfCache::new(prior)),
        };
        Ok(Self { approx: approx.clone(), fits })
    }

    pub fn approx(&self) -> &PolyApprox {
        &self.approx
    }

    /// Estimate at `x`. Robbins is defined only on observed values.
    pub fn estimate(&self, x: u64) -> Result<f64> {
        let c = self.approx.coefficients();
        let mut total = c[0];
        for (m, &cm) in c.iter().enumerate().skip(1) {
            let t = match &self.fits {
                MomentFits::Robbins(maps) => *maps[m - 1].get(&x).ok_or(Error::UnsupportedPoint { x })?,
                MomentFits::Step(steps) => steps[m - 1].eval(x),
                MomentFits::Oracle(cache) => cache.bayes_estimate(m as u32, x)?,
            };
            total += cm * t;
        }
        Ok(total)
    }
}

/// One-shot form of [`SmoothEstimator`].
pub fn smooth_estimate(counts: &SampleCounts, approx: &PolyApprox, backend: &MomentBackend, x: u64) -> Result<f64> {
    SmoothEstimator::fit(counts, approx, backend)?.estimate(x)
}
