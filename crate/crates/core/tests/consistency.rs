use ebmoments::harness::{self, EstimatorName, Experiment};
use ebmoments::mindist::{self, make_grid, mindist_fit, mixture_hellinger, npmle_fit, DivergenceKind};
use ebmoments::poisson::{ln_mixture_pmf, sample_channel};
use ebmoments::{ExperimentConfig, Prior, PriorClassTag, SampleCounts};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

fn npmle_hellinger(prior: &Prior, n: usize, seed: u64) -> f64 {
    let (_, xs) = sample_channel(prior, n, seed);
    let counts = SampleCounts::tabulate(&xs).unwrap();
    let grid = make_grid(counts.x_max(), None, mindist::DEFAULT_GRID_POINTS).unwrap();
    let (fitted, _) = npmle_fit(&counts, &grid, mindist::DEFAULT_TOL, mindist::DEFAULT_MAX_ITER).unwrap();
    mixture_hellinger(|x| ln_mixture_pmf(prior, x), |x| fitted.ln_pmf(x))
}

#[test]
fn npmle_hellinger_shrinks_with_n() {
    let prior = Prior::uniform(0.0, 10.0).unwrap();
    let medians: Vec<f64> = [100usize, 1000, 10_000]
        .iter()
        .map(|&n| median((0..11).map(|r| npmle_hellinger(&prior, n, 100 + r)).collect()))
        .collect();
    assert!(medians[0] > medians[1] && medians[1] > medians[2], "{medians:?}");
}

#[test]
fn kl_fit_matches_npmle() {
    let prior = Prior::gamma(3.0, 0.5).unwrap();
    for seed in 0..20 {
        let (_, xs) = sample_channel(&prior, 500, 40 + seed);
        let counts = SampleCounts::tabulate(&xs).unwrap();
        let grid = make_grid(counts.x_max(), None, 200).unwrap();
        let (ml, ml_report) = npmle_fit(&counts, &grid, 1e-9, 20_000).unwrap();
        let (kl, kl_report) = mindist_fit(&counts, &grid, DivergenceKind::Kl, 1e-9, 20_000).unwrap();
        let n = counts.n() as f64;
        let entropy: f64 = counts.iter().map(|(_, c)| c as f64 / n * (c as f64 / n).ln()).sum();
        assert!(
            (kl_report.objective - (ml_report.objective + entropy)).abs() < 1e-7,
            "seed {seed}: {} vs {}",
            kl_report.objective,
            ml_report.objective + entropy
        );
        // The fitted mixture pmf is unique even when the weights are not.
        for x in counts.support() {
            let (a, b) = (ml.ln_pmf(x), kl.ln_pmf(x));
            assert!((a - b).abs() < 1e-3, "seed {seed}, x {x}: {a} vs {b}");
        }
    }
}

#[test]
fn bounded_class_grid_fits_within_bound() {
    let prior = Prior::point_masses([(1.0, 0.3), (4.0, 0.7)]).unwrap();
    let (_, xs) = sample_channel(&prior, 2000, 5);
    let counts = SampleCounts::tabulate(&xs).unwrap();
    let class = PriorClassTag::bounded(5.0).unwrap();
    let grid = make_grid(counts.x_max(), Some(class), 101).unwrap();
    for kind in [DivergenceKind::Kl, DivergenceKind::SquaredHellinger, DivergenceKind::ChiSquared] {
        let (fit, report) = mindist_fit(&counts, &grid, kind, 1e-8, 5000).unwrap();
        assert!(report.converged, "{kind:?}");
        assert!(fit.atoms().iter().all(|&t| (0.0..=5.0).contains(&t)));
        assert!((fit.mean() - prior.mean()).abs() < 0.15, "{kind:?}: mean {}", fit.mean());
    }
}

#[test]
fn total_regret_matches_coordinate_regret() {
    let config = ExperimentConfig::from_json(
        r#"{"prior":{"kind":"uniform","lo":0,"hi":5},"functional":{"kind":"moment","k":1},
            "estimators":["robbins"],"n_grid":[200],"replicates":400,"seed":8}"#,
    )
    .unwrap();
    let experiment = Experiment::new(config).unwrap();
    let record = &experiment.run()[0];
    let total = record.mean_regret / 200.0;
    let total_se = record.se_regret / 200.0;

    let coords: Vec<f64> = (0..20_000u64)
        .map(|s| experiment.coordinate_regret(EstimatorName::Robbins, 200, 90_000 + s).unwrap())
        .collect();
    let m = coords.len() as f64;
    let mean = coords.iter().sum::<f64>() / m;
    let se = (coords.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt();
    let z = (total - mean) / (total_se.powi(2) + se.powi(2)).sqrt();
    assert!(z.abs() < 3.0, "total/n {total} ± {total_se}, coordinate {mean} ± {se}");
}

#[test]
fn experiment_round_trips_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("config.json");
    std::fs::write(
        &config_path,
        r#"{"prior":{"kind":"exponential","scale":2},"functional":{"kind":"smooth","name":"sqrt1p","h":6},
            "class":{"kind":"sub_exponential","s":2},
            "estimators":["erm","npmle-plugin"],"n_grid":[100,400],"replicates":3,"seed":2}"#,
    )
    .unwrap();
    let config = ExperimentConfig::load(&config_path).unwrap();
    let records = harness::run_experiment(&config).unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| !r.failed && r.mean_regret.is_finite()));

    let csv = dir.path().join("records.csv");
    harness::emit_csv(&records, &csv).unwrap();
    assert_eq!(harness::read_csv(&csv).unwrap(), records);
    harness::write_plots(&records, dir.path()).unwrap();
    assert!(std::fs::read_to_string(dir.path().join("regret.svg")).unwrap().starts_with("<svg"));
}
