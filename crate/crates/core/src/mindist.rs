//! g-modeling: fit a mixing distribution on a θ grid, then plug it into the
//! Tweedie formula.
//!
//! Fits minimise `d(p_emp ‖ f_Q)` over grid weights `Q` with a pairwise
//! Frank–Wolfe method. Each step moves mass from the worst active atom to
//! the best vertex with an exact line search, so the objective never
//! increases and the Frank–Wolfe duality gap certifies optimality.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{SampleCounts, StepEstimator};
use crate::numeric::{compensated_sum, ln_poisson_pmf, log_sum_exp, pochhammer};
use crate::prior::{Prior, PriorClassTag};

pub const DEFAULT_GRID_POINTS: usize = 400;
pub const DEFAULT_TOL: f64 = 1e-7;
pub const DEFAULT_MAX_ITER: usize = 5000;

/// Largest active set on which the Newton correction is attempted; larger
/// supports rely on pairwise steps alone until atoms drop out.
const NEWTON_MAX_ACTIVE: usize = 48;

/// Weights on a sorted θ grid. Zero weights are allowed; the weights sum to
/// one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMixingDistribution {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl GridMixingDistribution {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "grid has {} atoms and {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if atoms.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::InvalidArgument("grid atoms must be finite and >= 0".into()));
        }
        if atoms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("grid atoms must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidArgument("grid weights must be finite and >= 0".into()));
        }
        let total = compensated_sum(weights.iter().copied());
        if (total - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("grid weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn mean(&self) -> f64 {
        compensated_sum(self.atoms.iter().zip(&self.weights).map(|(a, w)| a * w))
    }

    /// The positive-weight part as a [`Prior`].
    pub fn to_prior(&self) -> Result<Prior> {
        Prior::from_unnormalized(&self.atoms, &self.weights)
    }

    /// `log f_Q(x)`.
    pub fn ln_pmf(&self, x: u64) -> f64 {
        log_sum_exp(
            self.atoms
                .iter()
                .zip(&self.weights)
                .filter(|(_, &w)| w > 0.0)
                .map(|(&t, &w)| w.ln() + ln_poisson_pmf(t, x)),
        )
    }

    /// Two-column `theta,weight` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["theta", "weight"])?;
        for (t, p) in self.atoms.iter().zip(&self.weights) {
            w.write_record([t.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut atoms = Vec::new();
        let mut weights = Vec::new();
        for row in r.deserialize::<(f64, f64)>() {
            let (t, w) = row.map_err(|e| Error::InvalidArgument(format!("mixture csv: {e}")))?;
            atoms.push(t);
            weights.push(w);
        }
        Self::new(atoms, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.into(), source })?;
        self.write_csv(file).map_err(|source| Error::Csv { path: path.into(), source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DivergenceKind {
    /// `Σ p log(p/q)`.
    Kl,
    /// `Σ (√p - √q)^2`.
    SquaredHellinger,
    /// `Σ (p - q)^2 / q`.
    ChiSquared,
}

/// The named divergence between two pmfs on a common finite range.
pub fn divergence(kind: DivergenceKind, p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::InvalidArgument(format!("pmfs have lengths {} and {}", p.len(), q.len())));
    }
    let terms = p.iter().zip(q).enumerate().map(|(x, (&pi, &qi))| match kind {
        DivergenceKind::SquaredHellinger => Ok((pi.sqrt() - qi.sqrt()).powi(2)),
        _ if pi == 0.0 => Ok(if kind == DivergenceKind::ChiSquared { qi } else { 0.0 }),
        _ if qi <= 0.0 => Err(Error::SupportMismatch { x }),
        DivergenceKind::Kl => Ok(pi * (pi / qi).ln()),
        DivergenceKind::ChiSquared => Ok((pi - qi).powi(2) / qi),
    });
    let terms: Vec<f64> = terms.collect::<Result<_>>()?;
    Ok(compensated_sum(terms).max(0.0))
}

/// Equispaced θ grid on `[0, h]` for `P([0, h])`, otherwise on
/// `[0, x_max + 3√(x_max + 1)]`.
pub fn make_grid(x_max: u64, class: Option<PriorClassTag>, points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {points}")));
    }
    let upper = match class {
        Some(PriorClassTag::Bounded { h }) => h,
        _ => {
            let x = x_max as f64;
            x + 3.0 * (x + 1.0).sqrt()
        }
    };
    let last = points - 1;
    Ok((0..points)
        .map(|j| if j == last { upper } else { upper * j as f64 / last as f64 })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective at the returned weights (negative mean log-likelihood for
    /// NPMLE, the divergence for minimum-distance fits).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Frank–Wolfe duality gap at the returned weights.
    pub gap: f64,
    /// Objective after every iteration, starting with the initial point.
    pub history: Vec<f64>,
}

/// Per-cell loss `ψ(f_x)` of the objective `Σ_x ψ_x(f_x)`, with the
/// constant parts folded into `offset`.
#[derive(Debug, Clone, Copy)]
enum Loss {
    /// `-p log f`.
    NegLogLik,
    /// `-2 √(p f)`, offset 2.
    Hellinger,
    /// `p^2 / f`, offset -1.
    ChiSquared,
}

impl Loss {
    fn value(self, p: f64, f: f64) -> f64 {
        match self {
            Loss::NegLogLik => -p * f.ln(),
            Loss::Hellinger => -2.0 * (p * f).sqrt(),
            Loss::ChiSquared => p * p / f,
        }
    }

    fn derivative(self, p: f64, f: f64) -> f64 {
        match self {
            Loss::NegLogLik => -p / f,
            Loss::Hellinger => -(p / f).sqrt(),
            Loss::ChiSquared => -p * p / (f * f),
        }
    }

    fn curvature(self, p: f64, f: f64) -> f64 {
        match self {
            Loss::NegLogLik => p / (f * f),
            Loss::Hellinger => 0.5 * p.sqrt() * f.powf(-1.5),
            Loss::ChiSquared => 2.0 * p * p / (f * f * f),
        }
    }
}

struct Problem {
    /// Empirical pmf on the observed support.
    p: Vec<f64>,
    /// `lik[x][j] = Poi(x; θ_j)` for observed `x`.
    lik: Vec<Vec<f64>>,
    loss: Loss,
    offset: f64,
}

impl Problem {
    fn new(counts: &SampleCounts, grid: &[f64], loss: Loss, offset: f64) -> Self {
        let n = counts.n() as f64;
        let (p, lik) = counts
            .iter()
            .map(|(x, c)| {
                let row = grid.iter().map(|&t| ln_poisson_pmf(t, x).exp()).collect();
                (c as f64 / n, row)
            })
            .unzip();
        Self { p, lik, loss, offset }
    }

    fn mixture(&self, w: &[f64]) -> Vec<f64> {
        self.lik
            .iter()
            .map(|row| compensated_sum(row.iter().zip(w).map(|(l, w)| l * w)))
            .collect()
    }

    fn objective(&self, f: &[f64]) -> f64 {
        self.offset + compensated_sum(self.p.iter().zip(f).map(|(&p, &f)| self.loss.value(p, f)))
    }

    fn gradient(&self, f: &[f64], m: usize) -> Vec<f64> {
        let mut g = vec![0.0; m];
        for ((row, &p), &fx) in self.lik.iter().zip(&self.p).zip(f) {
            let d = self.loss.derivative(p, fx);
            for (gj, l) in g.iter_mut().zip(row) {
                *gj += d * l;
            }
        }
        g
    }

    /// Derivative of the objective along `f + γ Δ`.
    fn slope(&self, f: &[f64], delta: &[f64], gamma: f64) -> f64 {
        let s: f64 = self
            .p
            .iter()
            .zip(f)
            .zip(delta)
            .map(|((&p, &fx), &dx)| {
                if dx == 0.0 {
                    0.0
                } else {
                    self.loss.derivative(p, fx + gamma * dx) * dx
                }
            })
            .sum();
        if s.is_nan() {
            f64::INFINITY
        } else {
            s
        }
    }
}

/// Exact minimiser of the (convex) objective along `f + γ Δ`, `γ ∈ [0, γ_max]`.
fn line_search(problem: &Problem, f: &[f64], delta: &[f64], gamma_max: f64) -> f64 {
    if problem.slope(f, delta, gamma_max) <= 0.0 {
        return gamma_max;
    }
    if problem.slope(f, delta, 0.0) >= 0.0 {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, gamma_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if problem.slope(f, delta, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-16 * gamma_max {
            break;
        }
    }
    lo
}

struct Iterate {
    w: Vec<f64>,
    f: Vec<f64>,
    objective: f64,
}

impl Iterate {
    /// Moves along the sparse weight direction `dir` with an exact line
    /// search, keeping weights nonnegative. Returns whether the objective
    /// decreased.
    fn step(&mut self, problem: &Problem, dir: &[(usize, f64)]) -> bool {
        let mut gamma_max = f64::INFINITY;
        let mut blocking = None;
        for &(j, d) in dir {
            if d < 0.0 && self.w[j] / -d < gamma_max {
                gamma_max = self.w[j] / -d;
                blocking = Some(j);
            }
        }
        if !gamma_max.is_finite() || gamma_max <= 0.0 {
            return false;
        }
        let delta: Vec<f64> = problem
            .lik
            .iter()
            .map(|row| dir.iter().map(|&(j, d)| d * row[j]).sum())
            .collect();
        let gamma = line_search(problem, &self.f, &delta, gamma_max);
        if gamma == 0.0 {
            return false;
        }
        let mut w = self.w.clone();
        for &(j, d) in dir {
            w[j] = (w[j] + gamma * d).max(0.0);
        }
        if gamma == gamma_max {
            w[blocking.unwrap()] = 0.0;
        }
        let f = problem.mixture(&w);
        let objective = problem.objective(&f);
        if !(objective < self.objective) {
            return false;
        }
        *self = Iterate { w, f, objective };
        true
    }
}

/// Newton direction for the objective restricted to the support of `w`,
/// subject to the weights summing to one.
fn newton_direction(problem: &Problem, it: &Iterate, g: &[f64]) -> Option<Vec<(usize, f64)>> {
    let active: Vec<usize> = (0..it.w.len()).filter(|&j| it.w[j] > 0.0).collect();
    let s = active.len();
    if !(2..=NEWTON_MAX_ACTIVE).contains(&s) {
        return None;
    }
    // KKT system [H 1; 1' 0] [d; λ] = [-g; 0].
    let dim = s + 1;
    let mut a = vec![vec![0.0; dim + 1]; dim];
    for ((row, &p), &fx) in problem.lik.iter().zip(&problem.p).zip(&it.f) {
        let c = problem.loss.curvature(p, fx);
        if c == 0.0 {
            continue;
        }
        for (r, &jr) in active.iter().enumerate() {
            let lr = c * row[jr];
            for (q, &jq) in active.iter().enumerate() {
                a[r][q] += lr * row[jq];
            }
        }
    }
    let trace: f64 = (0..s).map(|r| a[r][r]).sum();
    for (r, &j) in active.iter().enumerate() {
        a[r][r] += 1e-12 * trace / s as f64;
        a[r][s] = 1.0;
        a[s][r] = 1.0;
        a[r][dim] = -g[j];
    }
    let d = solve_dense(a)?;
    let descent: f64 = active.iter().zip(&d).map(|(&j, dj)| g[j] * dj).sum();
    if !(descent < 0.0) {
        return None;
    }
    Some(active.into_iter().zip(d).collect())
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
fn solve_dense(mut a: Vec<Vec<f64>>) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        for r in col + 1..n {
            let factor = a[r][col] / a[col][col];
            if factor != 0.0 {
                for c in col..=n {
                    a[r][c] -= factor * a[col][c];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let tail: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (a[r][n] - tail) / a[r][r];
    }
    x.truncate(n - 1);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn frank_wolfe(
    problem: &Problem,
    grid: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(GridMixingDistribution, FitReport)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("grid is empty".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let m = grid.len();
    let w = vec![1.0 / m as f64; m];
    let f = problem.mixture(&w);
    let objective = problem.objective(&f);
    if !objective.is_finite() {
        return Err(Error::NoProgress);
    }
    let mut it = Iterate { w, f, objective };
    let mut history = vec![objective];
    let mut iterations = 0;
    let mut gap;
    loop {
        let g = problem.gradient(&it.f, m);
        let (toward, g_min) = g
            .iter()
            .copied()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let (away, _) = g
            .iter()
            .copied()
            .enumerate()
            .filter(|&(j, _)| it.w[j] > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        gap = compensated_sum(it.w.iter().zip(&g).map(|(w, g)| w * g)) - g_min;
        if gap <= tol || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let moved = toward != away && it.step(problem, &[(toward, 1.0), (away, -1.0)]);
        let g = problem.gradient(&it.f, m);
        let polished = match newton_direction(problem, &it, &g) {
            Some(dir) => it.step(problem, &dir),
            None => false,
        };
        history.push(it.objective);
        if !moved && !polished {
            break;
        }
    }
    let Iterate { mut w, objective, .. } = it;
    let total = compensated_sum(w.iter().copied());
    for wj in &mut w {
        *wj /= total;
    }
    let fitted = GridMixingDistribution::new(grid.to_vec(), w)?;
    Ok((
        fitted,
        FitReport { objective, iterations, converged: gap <= tol, gap, history },
    ))
}

/// Grid NPMLE: maximises `(1/n) Σ_x N(x) log f_Q(x)`. The report's
/// objective is the negative mean log-likelihood and its gap is
/// `max_j (1/n) Σ_x N(x) Poi(x; θ_j) / f_Q(x) - 1`.
pub fn npmle_fit(
    counts: &SampleCounts,
    grid: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(GridMixingDistribution, FitReport)> {
    let problem = Problem::new(counts, grid, Loss::NegLogLik, 0.0);
    frank_wolfe(&problem, grid, tol, max_iter)
}

/// Minimum-distance fit `argmin_Q d(p_emp ‖ f_Q)`. Divergences are taken
/// over all of `ℕ`, which reduces to sums over the observed support:
/// KL is `Σ p log p - Σ p log f_Q`, squared Hellinger `2 - 2 Σ √(p f_Q)`,
/// χ² `Σ p^2 / f_Q - 1`.
pub fn mindist_fit(
    counts: &SampleCounts,
    grid: &[f64],
    kind: DivergenceKind,
    tol: f64,
    max_iter: usize,
) -> Result<(GridMixingDistribution, FitReport)> {
    let (loss, offset) = match kind {
        DivergenceKind::Kl => {
            let n = counts.n() as f64;
            let entropy = compensated_sum(counts.iter().map(|(_, c)| {
                let p = c as f64 / n;
                p * p.ln()
            }));
            (Loss::NegLogLik, entropy)
        }
        DivergenceKind::SquaredHellinger => (Loss::Hellinger, 2.0),
        DivergenceKind::ChiSquared => (Loss::ChiSquared, -1.0),
    };
    let problem = Problem::new(counts, grid, loss, offset);
    frank_wolfe(&problem, grid, tol, max_iter)
}

/// Expectation–maximisation for the grid NPMLE, kept as an independent
/// cross-check of [`npmle_fit`]. Returns the weights after `iterations`
/// multiplicative updates from the uniform start.
pub fn npmle_em(counts: &SampleCounts, grid: &[f64], iterations: usize) -> Result<GridMixingDistribution> {
    let problem = Problem::new(counts, grid, Loss::NegLogLik, 0.0);
    let m = grid.len();
    let mut w = vec![1.0 / m as f64; m];
    for _ in 0..iterations {
        let f = problem.mixture(&w);
        let mut next = vec![0.0; m];
        for ((row, &p), &fx) in problem.lik.iter().zip(&problem.p).zip(&f) {
            let r = p / fx;
            for (nj, l) in next.iter_mut().zip(row) {
                *nj += r * l;
            }
        }
        for (wj, nj) in w.iter_mut().zip(next) {
            *wj *= nj;
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|wj| *wj /= total);
    }
    GridMixingDistribution::new(grid.to_vec(), w)
}

/// Tweedie estimator under the fitted mixture,
/// `(x+1)_k f_Q(x+k) / f_Q(x)` for `x ∈ 0..=x_max`.
pub fn plugin_bayes(fitted: &GridMixingDistribution, k: u32, x_max: u64) -> Result<StepEstimator> {
    let ln_f: Vec<f64> = (0..=x_max + k as u64).map(|x| fitted.ln_pmf(x)).collect();
    let mut values = Vec::with_capacity(x_max as usize + 1);
    let mut running = 0.0f64;
    for x in 0..=x_max {
        let lx = ln_f[x as usize];
        if lx == f64::NEG_INFINITY {
            return Err(Error::UnsupportedPoint { x });
        }
        let lxk = ln_f[(x + k as u64) as usize];
        let v = if lxk == f64::NEG_INFINITY {
            0.0
        } else {
            pochhammer((x + 1) as f64, k) * (lxk - lx).exp()
        };
        // Bayes rules are monotone; this only absorbs last-ulp rounding.
        running = running.max(v);
        values.push(running);
    }
    StepEstimator::new(values)
}

/// The biased foil `x ↦ (E_Q[θ | x])^k`.
pub fn naive_plugin(fitted: &GridMixingDistribution, k: u32, x_max: u64) -> Result<StepEstimator> {
    let mean = plugin_bayes(fitted, 1, x_max)?;
    StepEstimator::new(mean.values().iter().map(|v| v.powi(k as i32)).collect())
}

/// Squared Hellinger distance between two mixture pmfs, summed until both
/// have exhausted all but `1e-13` of their mass.
pub fn mixture_hellinger(ln_f: impl Fn(u64) -> f64, ln_g: impl Fn(u64) -> f64) -> f64 {
    let mut acc = crate::numeric::CompensatedSum::new();
    let (mut mass_f, mut mass_g) = (0.0, 0.0);
    let mut x = 0;
    while (mass_f < 1.0 - 1e-13 || mass_g < 1.0 - 1e-13) && x < 100_000 {
        let (a, b) = (ln_f(x).exp(), ln_g(x).exp());
        acc.add((a.sqrt() - b.sqrt()).powi(2));
        mass_f += a;
        mass_g += b;
        x += 1;
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poisson;

    fn counts(pairs: &[(u64, u64)]) -> SampleCounts {
        SampleCounts::from_counts(pairs.iter().copied()).unwrap()
    }

    #[test]
    fn divergence_examples() {
        let p = [0.2, 0.5, 0.3];
        for kind in [DivergenceKind::Kl, DivergenceKind::SquaredHellinger, DivergenceKind::ChiSquared] {
            assert_eq!(divergence(kind, &p, &p).unwrap(), 0.0);
        }
        let d0 = [1.0, 0.0];
        let d1 = [0.0, 1.0];
        assert_eq!(divergence(DivergenceKind::SquaredHellinger, &d0, &d1).unwrap(), 2.0);
        assert!(matches!(divergence(DivergenceKind::Kl, &d0, &d1), Err(Error::SupportMismatch { x: 0 })));
        assert!(matches!(
            divergence(DivergenceKind::ChiSquared, &d0, &d1),
            Err(Error::SupportMismatch { x: 0 })
        ));
        let kl = divergence(DivergenceKind::Kl, &[0.5, 0.5], &[0.25, 0.75]).unwrap();
        assert!((kl - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
    }

    #[test]
    fn grid_examples() {
        let g = make_grid(9, Some(PriorClassTag::bounded(10.0).unwrap()), 5).unwrap();
        assert_eq!(g, vec![0.0, 2.5, 5.0, 7.5, 10.0]);
        let g = make_grid(9, None, 11).unwrap();
        assert_eq!(g[0], 0.0);
        assert_eq!(*g.last().unwrap(), 9.0 + 3.0 * 10f64.sqrt());
        let gap = |g: &[f64]| g.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let coarse = make_grid(20, None, 51).unwrap();
        let fine = make_grid(20, None, 101).unwrap();
        assert!((gap(&coarse) / gap(&fine) - 2.0).abs() < 1e-9);
        assert!(make_grid(3, None, 1).is_err());
    }

    #[test]
    fn all_zero_counts_fit_delta_zero() {
        let grid = make_grid(0, Some(PriorClassTag::bounded(5.0).unwrap()), 50).unwrap();
        let (fit, report) = npmle_fit(&counts(&[(0, 100)]), &grid, 1e-9, 5000).unwrap();
        assert!(fit.weights()[0] > 1.0 - 1e-6, "{}", fit.weights()[0]);
        assert!(report.objective.abs() < 1e-6);
        assert!(report.converged);
    }

    #[test]
    fn single_observation_fits_its_value() {
        let grid = make_grid(3, Some(PriorClassTag::bounded(10.0).unwrap()), 401).unwrap();
        let spacing = grid[1] - grid[0];
        let (fit, _) = npmle_fit(&counts(&[(3, 1)]), &grid, 1e-9, 5000).unwrap();
        assert!((fit.mean() - 3.0).abs() <= spacing, "{}", fit.mean());
    }

    #[test]
    fn objective_history_is_nonincreasing() {
        let c = counts(&[(0, 5), (1, 9), (2, 7), (4, 3), (7, 1)]);
        let grid = make_grid(c.x_max(), None, 200).unwrap();
        for kind in [DivergenceKind::Kl, DivergenceKind::SquaredHellinger, DivergenceKind::ChiSquared] {
            let (_, report) = mindist_fit(&c, &grid, kind, 1e-8, 5000).unwrap();
            assert!(report.history.windows(2).all(|w| w[1] <= w[0]), "{kind:?}");
            assert!(report.converged, "{kind:?} gap {}", report.gap);
            assert!(report.gap <= 1e-8);
        }
    }

    #[test]
    fn singleton_grid() {
        let c = counts(&[(0, 3), (2, 5), (3, 2)]);
        let theta = 1.7;
        let pmf: Vec<f64> = (0..=3).map(|x| ln_poisson_pmf(theta, x).exp()).collect();
        let emp = [0.3, 0.0, 0.5, 0.2];
        for kind in [DivergenceKind::Kl, DivergenceKind::SquaredHellinger, DivergenceKind::ChiSquared] {
            let (fit, report) = mindist_fit(&c, &[theta], kind, 1e-9, 100).unwrap();
            assert_eq!(fit.weights(), &[1.0]);
            // Divergence over all of ℕ: the part of Poi(θ) beyond x = 3
            // enters through its remaining mass.
            let tail = 1.0 - pmf.iter().sum::<f64>();
            let expected = match kind {
                DivergenceKind::Kl => divergence(kind, &emp, &pmf).unwrap(),
                DivergenceKind::SquaredHellinger => divergence(kind, &emp, &pmf).unwrap() + tail,
                DivergenceKind::ChiSquared => divergence(kind, &emp, &pmf).unwrap() + tail,
            };
            assert!((report.objective - expected).abs() < 1e-12, "{kind:?}: {} vs {expected}", report.objective);
        }
    }

    #[test]
    fn no_progress_on_unsupported_grid() {
        assert!(matches!(npmle_fit(&counts(&[(4, 2)]), &[0.0], 1e-7, 10), Err(Error::NoProgress)));
    }

    #[test]
    fn em_agrees_with_frank_wolfe() {
        let c = counts(&[(0, 12), (1, 20), (2, 15), (3, 9), (5, 4), (8, 2)]);
        let grid = make_grid(c.x_max(), None, 120).unwrap();
        let (_, report) = npmle_fit(&c, &grid, 1e-10, 20_000).unwrap();
        let em = npmle_em(&c, &grid, 20_000).unwrap();
        let n = c.n() as f64;
        let em_obj = -c.iter().map(|(x, k)| k as f64 / n * em.ln_pmf(x)).sum::<f64>();
        assert!(em_obj >= report.objective - 1e-12);
        assert!(em_obj - report.objective < 1e-6, "{em_obj} vs {}", report.objective);
    }

    #[test]
    fn plugin_examples() {
        let delta = GridMixingDistribution::new(vec![0.0, 2.0, 4.0], vec![0.0, 1.0, 0.0]).unwrap();
        for k in 1..=3 {
            let t = plugin_bayes(&delta, k, 10).unwrap();
            assert!(t.values().iter().all(|v| (v - 2f64.powi(k as i32)).abs() < 1e-12));
            let naive = naive_plugin(&delta, k, 10).unwrap();
            assert!(naive.values().iter().all(|v| (v - 2f64.powi(k as i32)).abs() < 1e-12));
        }
        let two = GridMixingDistribution::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap();
        let e = std::f64::consts::E;
        let proper = plugin_bayes(&two, 2, 0).unwrap().eval(0);
        let naive = naive_plugin(&two, 2, 0).unwrap().eval(0);
        assert!((proper - 1.0 / (1.0 + e)).abs() < 1e-14);
        assert!((naive - (1.0 / (1.0 + e)).powi(2)).abs() < 1e-14);
        assert!((naive - 0.0723).abs() < 1e-4);
    }

    #[test]
    fn plugin_under_true_prior_matches_oracle() {
        let atoms = vec![0.5, 2.0, 6.5];
        let weights = vec![0.2, 0.5, 0.3];
        let fitted = GridMixingDistribution::new(atoms.clone(), weights.clone()).unwrap();
        let prior = Prior::point_masses(atoms.into_iter().zip(weights)).unwrap();
        for k in 1..=3 {
            let t = plugin_bayes(&fitted, k, 25).unwrap();
            for x in 0..=25 {
                let oracle = poisson::bayes_estimate(&prior, k, x).unwrap();
                assert!((t.eval(x) - oracle).abs() <= 1e-10 * oracle.max(1.0));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let g = GridMixingDistribution::new(vec![0.0, 0.1, 2.0 / 3.0], vec![0.25, 0.5, 0.25]).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("theta,weight\n"));
        assert_eq!(GridMixingDistribution::read_csv(buf.as_slice()).unwrap(), g);
    }

    #[test]
    fn mixture_hellinger_identity() {
        let p = Prior::point_masses([(2.0, 0.5), (6.0, 0.5)]).unwrap();
        assert!(mixture_hellinger(|x| poisson::ln_mixture_pmf(&p, x), |x| poisson::ln_mixture_pmf(&p, x)) < 1e-15);
        let a = Prior::point(0.0).unwrap();
        let b = Prior::point(30.0).unwrap();
        let h = mixture_hellinger(|x| poisson::ln_mixture_pmf(&a, x), |x| poisson::ln_mixture_pmf(&b, x));
        assert!((h - (2.0 - 2.0 * (-15f64).exp())).abs() < 1e-9);
    }
}
