//! Mixing distributions on `θ ≥ 0`.

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_ur, ln_gamma};

use crate::error::{Error, Result};
use crate::numeric::{compensated_sum, pochhammer};
use crate::rng::{self, THETA_STREAM};

/// Number of intervals used when a continuous prior with unbounded support
/// is truncated to a grid.
pub const TRUNCATION_INTERVALS: usize = 2048;

/// A validated mixing distribution.
///
/// Construct through [`Prior::point_masses`], [`Prior::uniform`],
/// [`Prior::gamma`] or [`Prior::exponential`]; the invariants (finite,
/// non-negative support, positive normalised weights) hold for every value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PriorSpec", into = "PriorSpec")]
pub struct Prior {
    kind: PriorKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorKind {
    /// Atoms sorted by location, weights normalised and strictly positive.
    PointMasses { atoms: Vec<f64>, weights: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
    Gamma { shape: f64, rate: f64 },
    Exponential { scale: f64 },
}

/// Wire form of a prior in JSON configs, e.g. `{"kind":"uniform","lo":0,"hi":10}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    PointMasses { atoms: Vec<(f64, f64)> },
    Uniform { lo: f64, hi: f64 },
    Gamma { shape: f64, rate: f64 },
    Exponential { scale: f64 },
}

impl TryFrom<PriorSpec> for Prior {
    type Error = Error;

    fn try_from(spec: PriorSpec) -> Result<Self> {
        match spec {
            PriorSpec::PointMasses { atoms } => Prior::point_masses(atoms),
            PriorSpec::Uniform { lo, hi } => Prior::uniform(lo, hi),
            PriorSpec::Gamma { shape, rate } => Prior::gamma(shape, rate),
            PriorSpec::Exponential { scale } => Prior::exponential(scale),
        }
    }
}

impl From<Prior> for PriorSpec {
    fn from(prior: Prior) -> Self {
        match prior.kind {
            PriorKind::PointMasses { atoms, weights } => PriorSpec::PointMasses {
                atoms: atoms.into_iter().zip(weights).collect(),
            },
            PriorKind::Uniform { lo, hi } => PriorSpec::Uniform { lo, hi },
            PriorKind::Gamma { shape, rate } => PriorSpec::Gamma { shape, rate },
            PriorKind::Exponential { scale } => PriorSpec::Exponential { scale },
        }
    }
}

/// A prior class used for tail cutoffs and grid construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorClassTag {
    /// `P([0, h])`.
    Bounded { h: f64 },
    /// `SubE(s)`: `P(θ ≥ t) ≤ 2 e^{-t/s}` for all `t > 0`.
    SubExponential { s: f64 },
}

impl PriorClassTag {
    pub fn bounded(h: f64) -> Result<Self> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!("class bound h must be positive, got {h}")));
        }
        Ok(Self::Bounded { h })
    }

    pub fn sub_exponential(s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidArgument(format!("class scale s must be positive, got {s}")));
        }
        Ok(Self::SubExponential { s })
    }
}

fn check_nonneg_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPrior(format!("{what} must be finite and >= 0, got {v}")))
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidPrior(format!("{what} must be finite and > 0, got {v}")))
    }
}

impl Prior {
    /// Discrete prior from `(location, weight)` pairs. Duplicate locations
    /// are merged; weights must be positive and sum to one within `1e-12`.
    pub fn point_masses(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = atoms.into_iter().collect();
        if pairs.is_empty() {
            return Err(Error::InvalidPrior("point-mass prior needs at least one atom".into()));
        }
        for &(theta, w) in &pairs {
            check_nonneg_finite("atom location", theta)?;
            check_positive("atom weight", w)?;
        }
        let total = compensated_sum(pairs.iter().map(|p| p.1));
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidPrior(format!("weights sum to {total}, not 1")));
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<f64> = Vec::with_capacity(pairs.len());
        let mut weights: Vec<f64> = Vec::with_capacity(pairs.len());
        for (theta, w) in pairs {
            if atoms.last() == Some(&theta) {
                *weights.last_mut().unwrap() += w;
            } else {
                atoms.push(theta);
                weights.push(w);
            }
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(Self { kind: PriorKind::PointMasses { atoms, weights } })
    }

    /// Builds a discrete prior from unnormalised non-negative weights,
    /// dropping zero-weight atoms.
    pub(crate) fn from_unnormalized(atoms: &[f64], weights: &[f64]) -> Result<Self> {
        let total = compensated_sum(weights.iter().copied());
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidPrior("weights have no positive mass".into()));
        }
        let pairs: Vec<(f64, f64)> = atoms
            .iter()
            .zip(weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(&t, &w)| (t, w / total))
            .collect();
        let norm = compensated_sum(pairs.iter().map(|p| p.1));
        Self::point_masses(pairs.into_iter().map(|(t, w)| (t, w / norm)))
    }

    /// Degenerate prior at `theta`.
    pub fn point(theta: f64) -> Result<Self> {
        Self::point_masses([(theta, 1.0)])
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        check_nonneg_finite("uniform lower endpoint", lo)?;
        check_nonneg_finite("uniform upper endpoint", hi)?;
        if hi <= lo {
            return Err(Error::InvalidPrior(format!("uniform needs lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { kind: PriorKind::Uniform { lo, hi } })
    }

    /// Gamma prior with density `β^α θ^{α-1} e^{-βθ} / Γ(α)`.
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        check_positive("gamma shape", shape)?;
        check_positive("gamma rate", rate)?;
        Ok(Self { kind: PriorKind::Gamma { shape, rate } })
    }

    /// Exponential prior with mean `scale`.
    pub fn exponential(scale: f64) -> Result<Self> {
        check_positive("exponential scale", scale)?;
        Ok(Self { kind: PriorKind::Exponential { scale } })
    }

    pub fn kind(&self) -> &PriorKind {
        &self.kind
    }

    /// Right end of the support when it is bounded.
    pub fn support_upper(&self) -> Option<f64> {
        match &self.kind {
            PriorKind::PointMasses { atoms, .. } => atoms.last().copied(),
            PriorKind::Uniform { hi, .. } => Some(*hi),
            PriorKind::Gamma { .. } | PriorKind::Exponential { .. } => None,
        }
    }

    /// `(shape, rate)` for the gamma family, exponential included.
    fn gamma_params(&self) -> Option<(f64, f64)> {
        match self.kind {
            PriorKind::Gamma { shape, rate } => Some((shape, rate)),
            PriorKind::Exponential { scale } => Some((1.0, 1.0 / scale)),
            _ => None,
        }
    }

    /// Draws `n` i.i.d. values of θ. The output is a pure function of
    /// `(self, n, seed)`.
    pub fn sample_theta(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, THETA_STREAM);
        self.sample_with(&mut rng, n)
    }

    pub(crate) fn sample_with<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        match &self.kind {
            PriorKind::PointMasses { atoms, weights } => {
                if atoms.len() == 1 {
                    return vec![atoms[0]; n];
                }
                let mut cdf: Vec<f64> = weights
                    .iter()
                    .scan(0.0, |acc, &w| {
                        *acc += w;
                        Some(*acc)
                    })
                    .collect();
                *cdf.last_mut().unwrap() = 1.0;
                (0..n)
                    .map(|_| {
                        let u: f64 = rng.random();
                        let idx = cdf.partition_point(|&c| c <= u).min(atoms.len() - 1);
                        atoms[idx]
                    })
                    .collect()
            }
            PriorKind::Uniform { lo, hi } => {
                (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
            }
            PriorKind::Gamma { shape, rate } => {
                let dist = Gamma::new(*shape, 1.0 / rate).expect("validated gamma parameters");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            PriorKind::Exponential { scale } => {
                let dist = Exp::new(1.0 / scale).expect("validated exponential scale");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        }
    }

    /// `E[θ^p]`.
    pub fn moment(&self, p: u32) -> f64 {
        match &self.kind {
            PriorKind::PointMasses { atoms, weights } => compensated_sum(
                atoms.iter().zip(weights).map(|(&t, &w)| w * t.powi(p as i32)),
            ),
            PriorKind::Uniform { lo, hi } => {
                let q = p as i32 + 1;
                (hi.powi(q) - lo.powi(q)) / (q as f64 * (hi - lo))
            }
            PriorKind::Gamma { shape, rate } => pochhammer(*shape, p) / rate.powi(p as i32),
            PriorKind::Exponential { scale } => (1..=p)
                .fold(1.0, |acc, i| acc * i as f64 * scale),
        }
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }

    /// `P(θ > t)`.
    pub fn tail_prob(&self, t: f64) -> f64 {
        match &self.kind {
            PriorKind::PointMasses { atoms, weights } => {
                let start = atoms.partition_point(|&a| a <= t);
                compensated_sum(weights[start..].iter().copied()).clamp(0.0, 1.0)
            }
            PriorKind::Uniform { lo, hi } => ((hi - t) / (hi - lo)).clamp(0.0, 1.0),
            PriorKind::Gamma { .. } | PriorKind::Exponential { .. } => {
                if t <= 0.0 {
                    return 1.0;
                }
                let (shape, rate) = self.gamma_params().unwrap();
                if shape == 1.0 {
                    (-rate * t).exp()
                } else {
                    gamma_ur(shape, rate * t)
                }
            }
        }
    }

    fn ln_density(&self, theta: f64) -> f64 {
        let (shape, rate) = self.gamma_params().expect("density of a continuous prior");
        shape * rate.ln() + (shape - 1.0) * theta.ln() - rate * theta - ln_gamma(shape)
    }

    /// Conditions the prior on `θ ≤ h`.
    ///
    /// Point masses and uniforms are truncated exactly. Gamma and exponential
    /// priors become a grid-discrete prior on `[0, h]` with
    /// [`TRUNCATION_INTERVALS`] equal intervals: composite-Simpson weights on
    /// the grid nodes when the density is bounded, and exact interval masses
    /// placed at interval midpoints when it is not (shape < 1).
    pub fn truncate(&self, h: f64) -> Result<Prior> {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::InvalidArgument(format!("truncation point must be positive, got {h}")));
        }
        match &self.kind {
            PriorKind::PointMasses { atoms, weights } => {
                let end = atoms.partition_point(|&a| a <= h);
                if end == 0 {
                    return Err(Error::ZeroMassBelowCutoff { h });
                }
                Prior::from_unnormalized(&atoms[..end], &weights[..end])
            }
            PriorKind::Uniform { lo, hi } => {
                if h <= *lo {
                    Err(Error::ZeroMassBelowCutoff { h })
                } else {
                    Prior::uniform(*lo, hi.min(h))
                }
            }
            PriorKind::Gamma { .. } | PriorKind::Exponential { .. } => {
                let (shape, _) = self.gamma_params().unwrap();
                if 1.0 - self.tail_prob(h) <= 0.0 {
                    return Err(Error::ZeroMassBelowCutoff { h });
                }
                let m = TRUNCATION_INTERVALS;
                let step = h / m as f64;
                let (atoms, weights): (Vec<f64>, Vec<f64>) = if shape >= 1.0 {
                    (0..=m)
                        .map(|j| {
                            let theta = j as f64 * step;
                            let simpson = match j {
                                0 => 1.0,
                                j if j == m => 1.0,
                                j if j % 2 == 1 => 4.0,
                                _ => 2.0,
                            };
                            let density = if theta == 0.0 {
                                if shape == 1.0 { self.ln_density(f64::MIN_POSITIVE).exp() } else { 0.0 }
                            } else {
                                self.ln_density(theta).exp()
                            };
                            (theta, simpson * density)
                        })
                        .unzip()
                } else {
                    (0..m)
                        .map(|j| {
                            let a = j as f64 * step;
                            let b = a + step;
                            (a + 0.5 * step, self.tail_prob(a) - self.tail_prob(b))
                        })
                        .unzip()
                };
                Prior::from_unnormalized(&atoms, &weights)
            }
        }
    }
}
