//! Empirical-Bayes estimation of posterior moments `E[θ^k | X]` and smooth
//! functionals `E[ℓ(θ) | X]` under the Poisson mixture model.
//!
//! The crate is organised bottom-up:
//!
//! * [`prior`]: mixing distributions, their sampling, truncation and moments.
//! * [`poisson`]: exact mixture pmf, Tweedie posterior moments, MMSE and
//!   channel simulation.
//! * [`estimators`]: f-modeling estimators (method of moments, Robbins,
//!   monotone ERM) operating on [`SampleCounts`].
//! * [`mindist`]: g-modeling (NPMLE and minimum-distance fits on a grid) and
//!   the plugin estimators built on top of them.
//! * [`smooth`]: polynomial approximation of smooth functionals and the
//!   combination estimator.
//! * [`harness`]: Monte-Carlo regret benchmarking, CSV and SVG output.

pub mod error;
pub mod estimators;
pub mod harness;
pub mod mindist;
pub mod numeric;
pub mod poisson;
pub mod prior;
pub mod rng;
pub mod smooth;

pub use error::{Error, Result};
pub use estimators::{SampleCounts, StepEstimator};
pub use harness::{ExperimentConfig, RegretRecord};
pub use mindist::{DivergenceKind, FitReport, GridMixingDistribution};
pub use poisson::{MixturePmfCache, TailCutoff};
pub use prior::{Prior, PriorClassTag};
pub use smooth::PolyApprox;
