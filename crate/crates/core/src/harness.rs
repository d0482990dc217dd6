//! Monte-Carlo regret benchmarking.
//!
//! An [`ExperimentConfig`] names a prior, a target functional, a list of
//! estimators and a grid of sample sizes. Every `(estimator, n, replicate)`
//! triple draws its own sample from a seed derived from the base seed, so
//! the output is a pure function of the config and does not depend on
//! estimator order or thread scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{erm_fit, erm_fit_clipped, mom_estimate, robbins_fit, SampleCounts};
use crate::mindist::{self, make_grid, naive_plugin, npmle_fit, plugin_bayes};
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::poisson::{self, MixturePmfCache};
use crate::prior::{Prior, PriorClassTag};
use crate::rng::{derive_seed, label_hash};
use crate::smooth::{
    chebyshev_approx, select_degree, MomentBackend, NamedFunctional, PolyApprox, SmoothEstimator,
    DEFAULT_DEGREE_CONSTANT,
};

pub const DEFAULT_N_GRID: [u64; 7] = [100, 316, 1000, 3162, 10_000, 31_623, 100_000];
pub const DEFAULT_REPLICATES: usize = 50;

/// What is being estimated for each coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Functional {
    /// `θ^k`.
    Moment { k: u32 },
    /// A named `ℓ(θ)`, approximated on `[0, h]` by a polynomial whose degree
    /// is either fixed or chosen per `n` by [`select_degree`].
    Smooth {
        name: NamedFunctional,
        h: f64,
        #[serde(default)]
        degree: Option<usize>,
        #[serde(default = "default_degree_constant")]
        degree_constant: f64,
    },
}

fn default_degree_constant() -> f64 {
    DEFAULT_DEGREE_CONSTANT
}

impl Functional {
    pub fn eval(&self, theta: f64) -> f64 {
        match *self {
            Functional::Moment { k } => theta.powi(k as i32),
            Functional::Smooth { name, h, .. } => name.eval(theta, h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    /// Bayes rule under the true prior.
    Oracle,
    Mom,
    Robbins,
    Erm,
    /// ERM clipped to `[0, h^k]` (per moment for smooth functionals).
    ErmClipped,
    NpmlePlugin,
    NaivePlugin,
}

impl EstimatorName {
    pub const ALL: [EstimatorName; 7] = [
        Self::Oracle,
        Self::Mom,
        Self::Robbins,
        Self::Erm,
        Self::ErmClipped,
        Self::NpmlePlugin,
        Self::NaivePlugin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Mom => "mom",
            Self::Robbins => "robbins",
            Self::Erm => "erm",
            Self::ErmClipped => "erm-clipped",
            Self::NpmlePlugin => "npmle-plugin",
            Self::NaivePlugin => "naive-plugin",
        }
    }
}

impl fmt::Display for EstimatorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown estimator `{s}`")))
    }
}

/// How a replicate's regret is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegretMode {
    /// `Σ (T̂_i - ℓ(θ_i))² - n·mmse`.
    #[default]
    Difference,
    /// `Σ (T̂_i - E[ℓ(θ) | X_i])²`. Same expectation (the cross term
    /// vanishes because `θ_i | X^n` depends only on `X_i`), but nonnegative
    /// and with far smaller variance.
    PosteriorGap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub prior: Prior,
    pub functional: Functional,
    /// Prior class used for NPMLE grids and clipping; defaults to `P([0, h])`
    /// with `h` the prior's support bound when it has one.
    #[serde(default)]
    pub class: Option<PriorClassTag>,
    pub estimators: Vec<EstimatorName>,
    #[serde(default = "default_n_grid")]
    pub n_grid: Vec<u64>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub regret: RegretMode,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_n_grid() -> Vec<u64> {
    DEFAULT_N_GRID.to_vec()
}

fn default_replicates() -> usize {
    DEFAULT_REPLICATES
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 {
            return bad("n_grid must be nonempty with positive sizes".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing".into());
        }
        if self.estimators.is_empty() {
            return bad("at least one estimator is required".into());
        }
        let mut seen = self.estimators.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.estimators.len() {
            return bad("estimators are listed more than once".into());
        }
        match self.functional {
            Functional::Moment { k: 0 } => return bad("moment order k must be at least 1".into()),
            Functional::Smooth { h, degree, degree_constant, .. } => {
                if !(h.is_finite() && h > 0.0) {
                    return bad(format!("functional domain h must be positive, got {h}"));
                }
                if let Some(d) = degree {
                    if d > crate::smooth::MAX_DEGREE {
                        return Err(Error::DegreeTooLarge(d));
                    }
                } else if !(degree_constant > 0.0 && degree_constant <= 1.0) {
                    return bad(format!("degree_constant must lie in (0, 1], got {degree_constant}"));
                }
            }
            Functional::Moment { .. } => {}
        }
        if self.estimators.contains(&EstimatorName::ErmClipped) && self.clip_bound().is_none() {
            return bad("erm-clipped needs a bounded class or a bounded prior".into());
        }
        Ok(())
    }

    /// The class in effect for grids and clipping.
    pub fn effective_class(&self) -> Option<PriorClassTag> {
        self.class
            .or_else(|| self.prior.support_upper().map(|h| PriorClassTag::Bounded { h }))
    }

    fn clip_bound(&self) -> Option<f64> {
        match self.effective_class() {
            Some(PriorClassTag::Bounded { h }) => Some(h),
            _ => None,
        }
    }
}

/// One aggregated `(estimator, n)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretRecord {
    pub estimator: EstimatorName,
    pub n: u64,
    /// Mean total regret over replicates.
    pub mean_regret: f64,
    /// Standard error of `mean_regret`.
    pub se_regret: f64,
    /// `sqrt(mean over replicates of Σ (T̂_i - ℓ(θ_i))² / n)`.
    pub rmse: f64,
    /// Per-coordinate Bayes risk of the true prior.
    pub mmse: f64,
    /// Replicates that completed.
    pub replicates: usize,
    /// Set when at least one replicate failed.
    pub failed: bool,
}

/// Outcome of a single replicate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateOutcome {
    /// `Σ_i (T̂_i - ℓ(θ_i))²`.
    pub squared_error: f64,
    /// `n·mmse`.
    pub oracle_total: f64,
    /// Regret estimate under the configured [`RegretMode`].
    pub regret: f64,
}

/// A validated config with its prior-dependent quantities (mixture pmf,
/// Bayes risk, polynomial approximations) computed once.
#[derive(Debug)]
pub struct Experiment {
    config: ExperimentConfig,
    cache: MixturePmfCache,
    mmse: f64,
    approx: BTreeMap<u64, PolyApprox>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let cache = MixturePmfCache::new(&config.prior);
        let (mmse, approx) = match config.functional {
            Functional::Moment { k } => (poisson::mmse_with_cache(&cache, k), BTreeMap::new()),
            Functional::Smooth { name, h, degree, degree_constant } => {
                let ell = |t: f64| name.eval(t, h);
                let mut approx = BTreeMap::new();
                for &n in &config.n_grid {
                    let k = match degree {
                        Some(d) => d,
                        None => select_degree(n.max(3), degree_constant)?,
                    };
                    approx.insert(n, chebyshev_approx(ell, h, k)?);
                }
                (poisson::mmse_functional(&cache, &ell), approx)
            }
        };
        Ok(Self { config, cache, mmse, approx })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Per-coordinate Bayes risk, shared by every cell.
    pub fn mmse(&self) -> f64 {
        self.mmse
    }

    /// Polynomial approximation used at sample size `n` (smooth functionals).
    pub fn approx(&self, n: u64) -> Option<&PolyApprox> {
        self.approx.get(&n)
    }

    fn approx_for(&self, n: u64) -> Result<PolyApprox> {
        match self.approx.get(&n) {
            Some(a) => Ok(a.clone()),
            None => match self.config.functional {
                Functional::Smooth { name, h, degree, degree_constant } => {
                    let k = match degree {
                        Some(d) => d,
                        None => select_degree(n.max(3), degree_constant)?,
                    };
                    chebyshev_approx(|t| name.eval(t, h), h, k)
                }
                Functional::Moment { .. } => unreachable!("moments need no approximation"),
            },
        }
    }

    /// Bayes rule `E[ℓ(θ) | X = x]` under the true prior.
    pub fn bayes_rule(&self, x: u64) -> Result<f64> {
        match self.config.functional {
            Functional::Moment { k } => self.cache.bayes_estimate(k, x),
            Functional::Smooth { name, h, .. } => {
                poisson::posterior_expectation(&self.config.prior, &|t| name.eval(t, h), x)
            }
        }
    }

    /// The fitted estimator's value at every observed `x`.
    pub fn fit(&self, estimator: EstimatorName, counts: &SampleCounts) -> Result<BTreeMap<u64, f64>> {
        let support = || counts.support();
        let x_max = counts.x_max();
        let class = self.config.effective_class();
        let npmle = || -> Result<mindist::GridMixingDistribution> {
            let grid = make_grid(x_max, class, mindist::DEFAULT_GRID_POINTS)?;
            Ok(npmle_fit(counts, &grid, mindist::DEFAULT_TOL, mindist::DEFAULT_MAX_ITER)?.0)
        };
        if estimator == EstimatorName::Oracle {
            return support().map(|x| Ok((x, self.bayes_rule(x)?))).collect();
        }
        match self.config.functional {
            Functional::Moment { k } => match estimator {
                EstimatorName::Oracle => unreachable!(),
                EstimatorName::Mom => Ok(support().map(|x| (x, mom_estimate(x, k))).collect()),
                EstimatorName::Robbins => Ok(robbins_fit(counts, k)),
                EstimatorName::Erm => {
                    let t = erm_fit(counts, k);
                    Ok(support().map(|x| (x, t.eval(x))).collect())
                }
                EstimatorName::ErmClipped => {
                    let h = self.config.clip_bound().expect("validated");
                    let t = erm_fit_clipped(counts, k, 0.0, h.powi(k as i32))?;
                    Ok(support().map(|x| (x, t.eval(x))).collect())
                }
                EstimatorName::NpmlePlugin => {
                    let t = plugin_bayes(&npmle()?, k, x_max)?;
                    Ok(support().map(|x| (x, t.eval(x))).collect())
                }
                EstimatorName::NaivePlugin => {
                    let t = naive_plugin(&npmle()?, k, x_max)?;
                    Ok(support().map(|x| (x, t.eval(x))).collect())
                }
            },
            Functional::Smooth { name, h, .. } => {
                let approx = self.approx_for(counts.n())?;
                let backend = match estimator {
                    EstimatorName::Oracle => unreachable!(),
                    EstimatorName::Mom => {
                        let c = approx.coefficients();
                        return Ok(support()
                            .map(|x| {
                                let v = c[0]
                                    + (1..c.len()).map(|m| c[m] * mom_estimate(x, m as u32)).sum::<f64>();
                                (x, v)
                            })
                            .collect());
                    }
                    EstimatorName::NaivePlugin => {
                        let mean = plugin_bayes(&npmle()?, 1, x_max)?;
                        return Ok(support().map(|x| (x, name.eval(mean.eval(x), h))).collect());
                    }
                    EstimatorName::Robbins => MomentBackend::Robbins,
                    EstimatorName::Erm => MomentBackend::Erm,
                    EstimatorName::ErmClipped => MomentBackend::ErmClipped {
                        h: self.config.clip_bound().expect("validated"),
                    },
                    EstimatorName::NpmlePlugin => MomentBackend::NpmlePlugin { class },
                };
                let est = SmoothEstimator::fit(counts, &approx, &backend)?;
                support().map(|x| Ok((x, est.estimate(x)?))).collect()
            }
        }
    }

    fn draw(&self, estimator: EstimatorName, n: u64, seed: u64) -> Result<(Vec<f64>, Vec<u64>, BTreeMap<u64, f64>)> {
        let (thetas, xs) = poisson::sample_channel(&self.config.prior, n as usize, seed);
        let counts = SampleCounts::tabulate(&xs)?;
        let rule = self.fit(estimator, &counts)?;
        Ok((thetas, xs, rule))
    }

    /// One replicate at sample size `n` drawn from `seed`.
    pub fn replicate(&self, estimator: EstimatorName, n: u64, seed: u64) -> Result<ReplicateOutcome> {
        let (thetas, xs, rule) = self.draw(estimator, n, seed)?;
        let squared_error = compensated_sum(
            thetas
                .iter()
                .zip(&xs)
                .map(|(&t, x)| (rule[x] - self.config.functional.eval(t)).powi(2)),
        );
        let oracle_total = n as f64 * self.mmse;
        let regret = match self.config.regret {
            RegretMode::Difference => squared_error - oracle_total,
            RegretMode::PosteriorGap => {
                let counts = SampleCounts::tabulate(&xs)?;
                let mut acc = CompensatedSum::new();
                for (x, c) in counts.iter() {
                    acc.add(c as f64 * (rule[&x] - self.bayes_rule(x)?).powi(2));
                }
                acc.value()
            }
        };
        Ok(ReplicateOutcome { squared_error, oracle_total, regret })
    }

    /// Regret on the last coordinate alone, `(T̂_n - ℓ(θ_n))² - mmse`. For
    /// the symmetric estimators here its mean matches total regret / n.
    pub fn coordinate_regret(&self, estimator: EstimatorName, n: u64, seed: u64) -> Result<f64> {
        let (thetas, xs, rule) = self.draw(estimator, n, seed)?;
        let last = xs.len() - 1;
        Ok((rule[&xs[last]] - self.config.functional.eval(thetas[last])).powi(2) - self.mmse)
    }

    /// Seed of replicate `rep` in the `(estimator, n)` cell.
    pub fn replicate_seed(&self, estimator: EstimatorName, n: u64, rep: usize) -> u64 {
        derive_seed(self.config.seed, &[label_hash(estimator.name()), n, rep as u64])
    }

    /// Every cell of the config, aggregated over replicates and sorted by
    /// `(estimator, n)`.
    pub fn run(&self) -> Vec<RegretRecord> {
        let r = self.config.replicates;
        let mut estimators = self.config.estimators.clone();
        estimators.sort_by_key(|e| e.name());
        let cells: Vec<(EstimatorName, u64)> = estimators
            .iter()
            .flat_map(|&e| self.config.n_grid.iter().map(move |&n| (e, n)))
            .collect();
        let outcomes: Vec<Result<ReplicateOutcome>> = (0..cells.len() * r)
            .into_par_iter()
            .map(|i| {
                let (e, n) = cells[i / r];
                self.replicate(e, n, self.replicate_seed(e, n, i % r))
            })
            .collect();
        cells
            .iter()
            .zip(outcomes.chunks(r))
            .map(|(&(estimator, n), chunk)| self.aggregate(estimator, n, chunk))
            .collect()
    }

    fn aggregate(&self, estimator: EstimatorName, n: u64, outcomes: &[Result<ReplicateOutcome>]) -> RegretRecord {
        let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
        let count = ok.len();
        let mean = |v: &mut dyn Iterator<Item = f64>| compensated_sum(v) / count as f64;
        let mean_regret = mean(&mut ok.iter().map(|o| o.regret));
        let se_regret = if count > 1 {
            let var = compensated_sum(ok.iter().map(|o| (o.regret - mean_regret).powi(2))) / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else if count == 1 {
            0.0
        } else {
            f64::NAN
        };
        let rmse = mean(&mut ok.iter().map(|o| o.squared_error / n as f64)).sqrt();
        RegretRecord {
            estimator,
            n,
            mean_regret,
            se_regret,
            rmse,
            mmse: self.mmse,
            replicates: count,
            failed: count < outcomes.len(),
        }
    }
}

/// Builds the experiment and runs every cell.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RegretRecord>> {
    Ok(Experiment::new(config.clone())?.run())
}

/// One replicate of `(estimator, n)` from an explicit seed.
pub fn replicate_regret(
    config: &ExperimentConfig,
    estimator: EstimatorName,
    n: u64,
    seed: u64,
) -> Result<ReplicateOutcome> {
    Experiment::new(config.clone())?.replicate(estimator, n, seed)
}

/// Least-squares fit of `log(mean regret)` against `log(rate(n))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Theoretical total-regret rate for moment `k`: `(log n / log log n)^{k+1}`
/// on `P([0, h])`, `(log n)^{2k+1}` on `SubE(s)`.
pub fn theoretical_rate(class: PriorClassTag, k: u32, n: u64) -> f64 {
    let ln = (n as f64).ln();
    match class {
        PriorClassTag::Bounded { .. } => (ln / ln.ln()).powi(k as i32 + 1),
        PriorClassTag::SubExponential { .. } => ln.powi(2 * k as i32 + 1),
    }
}

/// Slope and R² of `log(mean regret)` on `log(rate)`. Failed cells and
/// nonpositive regrets are skipped; at least 4 distinct `n ≥ 3` must remain.
pub fn rate_diagnostic(records: &[RegretRecord], class: PriorClassTag, k: u32) -> Result<RateFit> {
    let mut by_n: BTreeMap<u64, f64> = BTreeMap::new();
    for r in records {
        if !r.failed && r.n >= 3 && r.mean_regret > 0.0 && r.mean_regret.is_finite() {
            by_n.insert(r.n, r.mean_regret);
        }
    }
    // log log n must be positive for the bounded rate.
    by_n.retain(|&n, _| theoretical_rate(class, k, n).is_finite() && theoretical_rate(class, k, n) > 0.0);
    if by_n.len() < 4 {
        return Err(Error::InsufficientPoints(by_n.len()));
    }
    let pts: Vec<(f64, f64)> = by_n
        .iter()
        .map(|(&n, &reg)| (theoretical_rate(class, k, n).ln(), reg.ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientPoints(1));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(RateFit { slope, intercept, r_squared, points: pts.len() })
}

pub const CSV_HEADER: &str = "estimator,n,mean_regret,se_regret,rmse,mmse,replicates,failed";

pub fn write_records<W: Write>(records: &[RegretRecord], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.estimator.name().to_string(),
            r.n.to_string(),
            r.mean_regret.to_string(),
            r.se_regret.to_string(),
            r.rmse.to_string(),
            r.mmse.to_string(),
            r.replicates.to_string(),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records<R: Read>(reader: R) -> Result<Vec<RegretRecord>, csv::Error> {
    csv::Reader::from_reader(reader).deserialize().collect()
}

pub fn emit_csv(records: &[RegretRecord], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|source| Error::Io { path: path.into(), source })?;
    write_records(records, file).map_err(|source| Error::Csv { path: path.into(), source })
}

pub fn read_csv(path: &Path) -> Result<Vec<RegretRecord>> {
    let file = File::open(path).map_err(|source| Error::Io { path: path.into(), source })?;
    read_records(file).map_err(|source| Error::Csv { path: path.into(), source })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    MeanRegret,
    Rmse,
}

impl Metric {
    fn value(self, r: &RegretRecord) -> f64 {
        match self {
            Metric::MeanRegret => r.mean_regret,
            Metric::Rmse => r.rmse,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::MeanRegret => "mean total regret",
            Metric::Rmse => "RMSE",
        }
    }
}

const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"];

/// Line chart of one metric against `n` (log x; log y when every plotted
/// value is positive).
pub fn plot_svg(records: &[RegretRecord], metric: Metric) -> String {
    let (width, height) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 170.0, 30.0, 50.0);
    let pw = width - left - right;
    let ph = height - top - bottom;

    let mut series: BTreeMap<EstimatorName, Vec<(f64, f64)>> = BTreeMap::new();
    for r in records {
        let v = metric.value(r);
        if v.is_finite() {
            series.entry(r.estimator).or_default().push((r.n as f64, v));
        }
    }
    let xs: Vec<f64> = series.values().flatten().map(|p| p.0.log10()).collect();
    let ys: Vec<f64> = series.values().flatten().map(|p| p.1).collect();
    let log_y = !ys.is_empty() && ys.iter().all(|&y| y > 0.0);
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let span = |v: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = span(&mut xs.iter().copied());
    let (y0, y1) = span(&mut ys.iter().map(|&y| ty(y)));
    let px = |x: f64| left + (x.log10() - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + ph - (ty(y) - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"{left}\" y=\"{top}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#444\"/>\n"
    ));
    for d in (x0.ceil() as i64)..=(x1.floor() as i64) {
        let x = left + (d as f64 - x0) / (x1 - x0) * pw;
        s.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{}\" x2=\"{x:.2}\" y2=\"{}\" stroke=\"#444\"/><text x=\"{x:.2}\" y=\"{}\" text-anchor=\"middle\">1e{d}</text>\n",
            top + ph,
            top + ph + 5.0,
            top + ph + 20.0
        ));
    }
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = top + ph - ph * i as f64 / 4.0;
        let label = if log_y { format!("{:.3e}", 10f64.powf(v)) } else { format!("{v:.4}") };
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{y:.2}\" x2=\"{left}\" y2=\"{y:.2}\" stroke=\"#444\"/><text x=\"{}\" y=\"{:.2}\" text-anchor=\"end\">{label}</text>\n",
            left - 5.0,
            left - 8.0,
            y + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{}\" text-anchor=\"middle\">n</text>\n",
        left + pw / 2.0,
        height - 10.0
    ));
    s.push_str(&format!(
        "<text x=\"15\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {:.2})\">{}</text>\n",
        top + ph / 2.0,
        top + ph / 2.0,
        metric.label()
    ));
    for (i, (est, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        s.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        for &(x, y) in pts {
            s.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>\n", px(x), py(y)));
        }
        let ly = top + 15.0 + 20.0 * i as f64;
        s.push_str(&format!(
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{est}</text>\n",
            width - right + 15.0,
            width - right + 40.0,
            width - right + 45.0,
            ly + 4.0
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `regret.svg` and `rmse.svg` into `dir`.
pub fn write_plots(records: &[RegretRecord], dir: &Path) -> Result<()> {
    for (metric, file) in [(Metric::MeanRegret, "regret.svg"), (Metric::Rmse, "rmse.svg")] {
        let path = dir.join(file);
        std::fs::write(&path, plot_svg(records, metric)).map_err(|source| Error::Io { path, source })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(json: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(json).unwrap()
    }

    fn record(estimator: EstimatorName, n: u64, mean_regret: f64) -> RegretRecord {
        RegretRecord { estimator, n, mean_regret, se_regret: 0.0, rmse: 1.0, mmse: 0.0, replicates: 1, failed: false }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = config(r#"{"prior":{"kind":"uniform","lo":0,"hi":10},"functional":{"kind":"moment","k":3},"estimators":["robbins","erm"]}"#);
        assert_eq!(c.n_grid, DEFAULT_N_GRID.to_vec());
        assert_eq!(c.replicates, 50);
        assert_eq!(c.effective_class(), Some(PriorClassTag::Bounded { h: 10.0 }));
        let bad = [
            r#"{"prior":{"kind":"uniform","lo":0,"hi":10},"functional":{"kind":"moment","k":3},"estimators":["robbins"],"replicates":0}"#,
            r#"{"prior":{"kind":"uniform","lo":0,"hi":10},"functional":{"kind":"moment","k":3},"estimators":["robbins"],"n_grid":[10,10]}"#,
            r#"{"prior":{"kind":"uniform","lo":0,"hi":10},"functional":{"kind":"moment","k":3},"estimators":["bogus"]}"#,
            r#"{"prior":{"kind":"exponential","scale":1},"functional":{"kind":"moment","k":1},"estimators":["erm-clipped"]}"#,
            r#"{"prior":{"kind":"uniform","lo":0,"hi":10},"functional":{"kind":"moment","k":0},"estimators":["erm"]}"#,
        ];
        for b in bad {
            assert!(ExperimentConfig::from_json(b).is_err(), "{b}");
        }
    }

    #[test]
    fn mom_on_point_mass_has_regret_theta() {
        let c = config(r#"{"prior":{"kind":"point_masses","atoms":[[4,1]]},"functional":{"kind":"moment","k":1},"estimators":["mom"],"n_grid":[1000],"replicates":200,"seed":3}"#);
        let recs = run_experiment(&c).unwrap();
        let r = &recs[0];
        assert!(r.mmse.abs() < 1e-12);
        let per = r.mean_regret / 1000.0;
        let se = r.se_regret / 1000.0;
        assert!((per - 4.0).abs() <= 3.0 * se, "{per} ± {se}");
    }

    #[test]
    fn oracle_regret_is_centered() {
        let c = config(r#"{"prior":{"kind":"uniform","lo":0,"hi":10},"functional":{"kind":"moment","k":1},"estimators":["oracle"],"n_grid":[1000],"replicates":200,"seed":5}"#);
        let r = &run_experiment(&c).unwrap()[0];
        assert!(r.mean_regret.abs() <= 3.0 * r.se_regret, "{} ± {}", r.mean_regret, r.se_regret);
        let gap = ExperimentConfig { regret: RegretMode::PosteriorGap, ..c };
        let r = &run_experiment(&gap).unwrap()[0];
        assert_eq!(r.mean_regret, 0.0);
    }

    #[test]
    fn records_are_deterministic_and_order_free() {
        let c = config(r#"{"prior":{"kind":"point_masses","atoms":[[1,0.5],[5,0.5]]},"functional":{"kind":"moment","k":2},"estimators":["robbins","npmle-plugin","erm"],"n_grid":[50,200],"replicates":4,"seed":9}"#);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a, b);
        let mut swapped = c.clone();
        swapped.estimators.reverse();
        assert_eq!(run_experiment(&swapped).unwrap(), a);
        let order: Vec<(&str, u64)> = a.iter().map(|r| (r.estimator.name(), r.n)).collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        // rmse² · n equals the mean squared error, which is regret + n·mmse.
        for r in &a {
            let lhs = r.rmse * r.rmse * r.n as f64;
            let rhs = r.mean_regret + r.n as f64 * r.mmse;
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1.0), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn smooth_functional_runs() {
        let c = config(r#"{"prior":{"kind":"uniform","lo":0,"hi":2},"functional":{"kind":"smooth","name":"exp","h":2},"estimators":["oracle","mom","robbins","erm","erm-clipped","npmle-plugin","naive-plugin"],"n_grid":[200],"replicates":2}"#);
        let exp = Experiment::new(c.clone()).unwrap();
        assert_eq!(exp.approx(200).unwrap().degree(), select_degree(200, 0.5).unwrap());
        let recs = exp.run();
        assert_eq!(recs.len(), 7);
        assert!(recs.iter().all(|r| !r.failed && r.rmse.is_finite()), "{recs:?}");
    }

    #[test]
    fn rate_diagnostic_examples() {
        let class = PriorClassTag::Bounded { h: 10.0 };
        let ns = [100u64, 1000, 10_000, 100_000];
        let exact: Vec<_> = ns
            .iter()
            .map(|&n| record(EstimatorName::Robbins, n, 7.0 * theoretical_rate(class, 2, n)))
            .collect();
        let fit = rate_diagnostic(&exact, class, 2).unwrap();
        assert!((fit.slope - 1.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        let flat: Vec<_> = ns.iter().map(|&n| record(EstimatorName::Robbins, n, 3.0)).collect();
        assert!(rate_diagnostic(&flat, class, 2).unwrap().slope.abs() < 1e-12);
        assert!(matches!(rate_diagnostic(&flat[..3], class, 2), Err(Error::InsufficientPoints(3))));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![
            RegretRecord {
                estimator: EstimatorName::NpmlePlugin,
                n: 316,
                mean_regret: 0.1 + 0.2,
                se_regret: 1e-300,
                rmse: 12.345678901234567,
                mmse: 2.0 / 3.0,
                replicates: 50,
                failed: false,
            },
            RegretRecord { failed: true, replicates: 0, mean_regret: f64::NAN, ..record(EstimatorName::Erm, 10, 0.0) },
        ];
        let mut buf = Vec::new();
        write_records(&recs, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        let back = read_records(buf.as_slice()).unwrap();
        assert_eq!(back[0], recs[0]);
        assert!(back[1].mean_regret.is_nan() && back[1].failed);

        let mut empty = Vec::new();
        write_records(&[], &mut empty).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn svg_has_one_line_per_estimator() {
        let recs: Vec<_> = [EstimatorName::Robbins, EstimatorName::Erm]
            .into_iter()
            .flat_map(|e| [100, 1000].map(|n| record(e, n, n as f64)))
            .collect();
        let svg = plot_svg(&recs, Metric::MeanRegret);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg, plot_svg(&recs, Metric::MeanRegret));
    }

    #[test]
    fn coordinate_regret_tracks_total_over_n() {
        let c = config(r#"{"prior":{"kind":"point_masses","atoms":[[4,1]]},"functional":{"kind":"moment","k":1},"estimators":["mom"],"n_grid":[50],"replicates":1}"#);
        let exp = Experiment::new(c).unwrap();
        let draws: Vec<f64> = (0..4000).map(|i| exp.coordinate_regret(EstimatorName::Mom, 50, i).unwrap()).collect();
        let m = draws.iter().sum::<f64>() / draws.len() as f64;
        let sd = (draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (draws.len() - 1) as f64).sqrt();
        assert!((m - 4.0).abs() <= 3.0 * sd / (draws.len() as f64).sqrt(), "{m}");
    }
}
