use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ebmoments::estimators::{erm_fit, erm_fit_clipped, mom_estimate, robbins_fit, robbins_fit_clipped};
use ebmoments::harness::{self, EstimatorName, Experiment};
use ebmoments::mindist::{self, make_grid, naive_plugin, npmle_fit, plugin_bayes};
use ebmoments::poisson::sample_channel;
use ebmoments::smooth::{chebyshev_approx, NamedFunctional};
use ebmoments::{ExperimentConfig, Prior, PriorClassTag, SampleCounts};

/// Empirical-Bayes estimation under the Poisson mixture model.
#[derive(Debug, Parser)]
#[command(name = "ebmoments", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw θ_i from a prior and X_i ~ Poisson(θ_i); writes `theta,x`.
    Simulate {
        /// Prior as JSON, e.g. '{"kind":"uniform","lo":0,"hi":10}', or a
        /// path to a file containing it.
        #[arg(long)]
        prior: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an estimator of E[θ^k | X] to observed counts; writes `x,estimate`.
    Estimate {
        /// CSV with an `x` column (e.g. the output of `simulate`).
        #[arg(long = "prior-data")]
        prior_data: PathBuf,
        /// mom | robbins | erm | erm-clipped | npmle-plugin | naive-plugin
        #[arg(long)]
        estimator: String,
        #[arg(long)]
        k: u32,
        /// Clip estimates to [a, b], given as `a,b`.
        #[arg(long, value_parser = parse_clip)]
        clip: Option<(f64, f64)>,
        /// Upper end of the NPMLE grid when θ is known to lie in [0, bound].
        #[arg(long)]
        bound: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte-Carlo regret experiment; writes records.csv and plots.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's `output` field.
        #[arg(long = "out-dir")]
        out_dir: Option<PathBuf>,
    },
    /// Chebyshev polynomial approximation of a named functional on [0, h];
    /// writes `power,coefficient`.
    Approx {
        /// cube | exp | sqrt1p | lipschitz-abs
        #[arg(long)]
        functional: String,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        degree: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_clip(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got `{s}`"))?;
    let a: f64 = a.trim().parse().map_err(|e| format!("bad lower bound `{a}`: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("bad upper bound `{b}`: {e}"))?;
    Ok((a, b))
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate { prior, n, seed, out } => simulate(&prior, n, seed, &out),
        Command::Estimate { prior_data, estimator, k, clip, bound, out } => {
            estimate(&prior_data, &estimator, k, clip, bound, &out)
        }
        Command::Bench { config, out_dir } => bench(&config, out_dir.as_deref()),
        Command::Approx { functional, h, degree, out } => approx(&functional, h, degree, &out),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(file))
}

fn simulate(prior: &str, n: usize, seed: u64, out: &Path) -> Result<()> {
    if n == 0 {
        bail!("--n must be at least 1");
    }
    let text = if prior.trim_start().starts_with('{') {
        prior.to_string()
    } else {
        std::fs::read_to_string(prior).with_context(|| format!("reading prior from {prior}"))?
    };
    let prior: Prior = serde_json::from_str(&text).context("parsing prior")?;
    let (thetas, xs) = sample_channel(&prior, n, seed);
    let mut w = csv_writer(out)?;
    w.write_record(["theta", "x"])?;
    for (t, x) in thetas.iter().zip(&xs) {
        w.write_record([t.to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn read_xs(path: &Path) -> Result<Vec<u64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let col = r
        .headers()?
        .iter()
        .position(|h| h.trim() == "x")
        .with_context(|| format!("{} has no `x` column", path.display()))?;
    let mut xs = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row?;
        let field = row.get(col).unwrap_or("").trim();
        let x = field
            .parse()
            .with_context(|| format!("{} row {}: `{field}` is not a count", path.display(), i + 2))?;
        xs.push(x);
    }
    Ok(xs)
}

fn estimate(
    data: &Path,
    name: &str,
    k: u32,
    clip: Option<(f64, f64)>,
    bound: Option<f64>,
    out: &Path,
) -> Result<()> {
    if k == 0 {
        bail!("--k must be at least 1");
    }
    let estimator: EstimatorName = name.parse()?;
    let counts = SampleCounts::tabulate(&read_xs(data)?)?;
    let x_max = counts.x_max();
    let class = bound.map(PriorClassTag::bounded).transpose()?;
    let npmle = || -> Result<mindist::GridMixingDistribution> {
        let grid = make_grid(x_max, class, mindist::DEFAULT_GRID_POINTS)?;
        Ok(npmle_fit(&counts, &grid, mindist::DEFAULT_TOL, mindist::DEFAULT_MAX_ITER)?.0)
    };
    let clip_value = |v: f64| match clip {
        Some((a, b)) => v.max(a).min(b),
        None => v,
    };
    if let Some((a, b)) = clip {
        if !(a >= 0.0 && a < b) {
            return Err(ebmoments::Error::InvalidBounds { a, b }.into());
        }
    }
    let values: BTreeMap<u64, f64> = match estimator {
        EstimatorName::Oracle => bail!("the oracle needs the true prior; use `bench` instead"),
        EstimatorName::Mom => (0..=x_max).map(|x| (x, clip_value(mom_estimate(x, k)))).collect(),
        EstimatorName::Robbins => match clip {
            Some((a, b)) => robbins_fit_clipped(&counts, k, a, b)?,
            None => robbins_fit(&counts, k),
        },
        EstimatorName::Erm | EstimatorName::ErmClipped => {
            let t = match (estimator, clip) {
                (_, Some((a, b))) => erm_fit_clipped(&counts, k, a, b)?,
                (EstimatorName::ErmClipped, None) => bail!("erm-clipped needs --clip a,b"),
                _ => erm_fit(&counts, k),
            };
            t.values().iter().enumerate().map(|(x, &v)| (x as u64, v)).collect()
        }
        EstimatorName::NpmlePlugin | EstimatorName::NaivePlugin => {
            let fitted = npmle()?;
            let t = if estimator == EstimatorName::NpmlePlugin {
                plugin_bayes(&fitted, k, x_max)?
            } else {
                naive_plugin(&fitted, k, x_max)?
            };
            t.values().iter().enumerate().map(|(x, &v)| (x as u64, clip_value(v))).collect()
        }
    };
    let mut w = csv_writer(out)?;
    w.write_record(["x", "estimate"])?;
    for (x, v) in values {
        w.write_record([x.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn bench(config_path: &Path, out_dir: Option<&Path>) -> Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let dir = match out_dir.map(Path::to_path_buf).or_else(|| config.output.clone()) {
        Some(d) => d,
        None => bail!("no output directory: pass --out-dir or set `output` in the config"),
    };
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let experiment = Experiment::new(config)?;
    let records = experiment.run();
    harness::emit_csv(&records, &dir.join("records.csv"))?;
    harness::write_plots(&records, &dir)?;

    let failed = records.iter().filter(|r| r.failed).count();
    println!("{} cells written to {}", records.len(), dir.join("records.csv").display());
    if failed > 0 {
        println!("{failed} cells had failed replicates (see the `failed` column)");
    }
    if let (harness::Functional::Moment { k }, Some(class)) =
        (&experiment.config().functional, experiment.config().effective_class())
    {
        for est in &experiment.config().estimators {
            let cell: Vec<_> = records.iter().filter(|r| r.estimator == *est).cloned().collect();
            if let Ok(fit) = harness::rate_diagnostic(&cell, class, *k) {
                println!("{est}: rate slope {} (R² {})", fit.slope, fit.r_squared);
            }
        }
    }
    Ok(())
}

fn approx(functional: &str, h: f64, degree: usize, out: &Path) -> Result<()> {
    let f: NamedFunctional = functional.parse()?;
    let a = chebyshev_approx(|t| f.eval(t, h), h, degree)?;
    let mut w = csv_writer(out)?;
    w.write_record(["power", "coefficient"])?;
    for (m, c) in a.coefficients().iter().enumerate() {
        w.write_record([m.to_string(), c.to_string()])?;
    }
    w.flush()?;
    println!("degree {} sup_residual {}", a.degree(), a.sup_residual());
    Ok(())
}
