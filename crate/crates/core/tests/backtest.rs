use std::time::Instant;

use angular_pool::backtest::{
    bundled_config, bundled_fixture, fit_parameters, run_backtest, BacktestConfig, Method, NamedMethod,
};
use angular_pool::ingest::{generate_synthetic, CellKey, SyntheticSpec};
use angular_pool::{BoundRule, Direction, ForecastDataset, HUB_LEVELS};

fn report_bytes(data: &ForecastDataset, cfg: &BacktestConfig) -> Vec<u8> {
    let out = run_backtest(data, cfg).unwrap();
    let mut buf = Vec::new();
    out.report.write_csv(&mut buf).unwrap();
    buf
}

#[test]
fn bundled_run_is_deterministic_and_benchmark_skill_is_zero() {
    let data = bundled_fixture();
    let cfg = bundled_config();
    let t = Instant::now();
    let first = run_backtest(&data, &cfg).unwrap();
    eprintln!("bundled backtest took {:?}", t.elapsed());
    for group in ["all", "large", "small"] {
        for metric in ["skill_mqs", "skill_interval_score_95", "skill_interval_score_50"] {
            assert_eq!(first.report.get("horizontal", group, metric), Some(0.0), "{group} {metric}");
        }
    }
    let mut a = Vec::new();
    first.report.write_csv(&mut a).unwrap();
    assert_eq!(a, report_bytes(&data, &cfg));
    let counts = &first.manifest.counts;
    assert_eq!(counts.series, 3);
    assert_eq!(counts.out_of_sample_origins, 8);
    assert_eq!(counts.cells_scored, 3 * 8 * 4);
    assert_eq!(counts.skipped_missing_truth, 0);
}

#[test]
fn no_look_ahead() {
    let data = bundled_fixture();
    let cfg = bundled_config();
    let origins = data.origins();
    let t = origins[10];
    let before = fit_parameters(&data, &cfg, "B", t).unwrap();

    let mut perturbed = data.clone();
    for ((_, date), v) in perturbed.truth.iter_mut() {
        if *date > t {
            *v *= 3.0;
        }
    }
    for (key, cell) in perturbed.cells.iter_mut() {
        if key.origin > t {
            cell.forecasts.remove("alpha");
        }
    }
    assert_ne!(perturbed, data);
    assert_eq!(fit_parameters(&perturbed, &cfg, "B", t).unwrap(), before);

    // Changing a truth the fit is allowed to see does move something.
    let mut seen = data.clone();
    for ((s, date), v) in seen.truth.iter_mut() {
        if s == "B" && *date <= t {
            *v += 40.0;
        }
    }
    assert_ne!(fit_parameters(&seen, &cfg, "B", t).unwrap().team_scores, before.team_scores);
}

#[test]
fn horizon_labels_do_not_matter() {
    let data = bundled_fixture();
    let mut cfg = bundled_config();
    cfg.methods.truncate(3);
    let base = run_backtest(&data, &cfg).unwrap();
    let relabel = |h: u32| 5 - h;
    let mut permuted = ForecastDataset { truth: data.truth.clone(), ..Default::default() };
    for (k, c) in &data.cells {
        permuted.cells.insert(CellKey { horizon: relabel(k.horizon), ..k.clone() }, c.clone());
    }
    let other = run_backtest(&permuted, &cfg).unwrap();
    for row in &base.report.rows {
        let v = other.report.get(&row.method, &row.group, &row.metric).unwrap();
        assert!((v - row.value).abs() <= 1e-12 * row.value.abs().max(1.0), "{row:?} vs {v}");
    }
}

#[test]
fn ragged_cells_only_change_themselves() {
    let data = bundled_fixture();
    let cfg = bundled_config();
    let origins = data.origins();
    let key = CellKey { series: "A".into(), origin: origins[12], horizon: 2 };
    let mut thinner = data.clone();
    thinner.cells.get_mut(&key).unwrap().forecasts.remove("charlie");
    // Parameters fitted at that origin only use earlier targets.
    assert_eq!(
        fit_parameters(&data, &cfg, "A", origins[12]).unwrap(),
        fit_parameters(&thinner, &cfg, "A", origins[12]).unwrap()
    );
    let a = run_backtest(&data, &cfg).unwrap();
    let b = run_backtest(&thinner, &cfg).unwrap();
    // Other series are untouched.
    for s in ["B", "C"] {
        for (m, per_series) in &a.series_scores.methods {
            assert_eq!(per_series[s], b.series_scores.get(m).unwrap()[s]);
        }
    }
}

#[test]
fn config_errors_are_exhaustive() {
    let data = bundled_fixture();
    let mut cfg = bundled_config();
    cfg.initial_in_sample = data.origins().len();
    cfg.benchmark = "missing".into();
    let err = run_backtest(&data, &cfg).unwrap_err();
    assert_eq!(err.code(), "invalid-config");
    let text = err.to_string();
    assert!(text.contains("initial_in_sample") && text.contains("benchmark"), "{text}");
}

// One team forecasts the true distribution; the others are biased. With
// inverse-MQS weights the weighted pools should beat the plain averages by
// a clear margin over many series.
#[test]
fn weighting_helps_when_one_team_is_right() {
    let mut spec = SyntheticSpec::new(vec![0.0, 1.5, 3.0], vec![1.0, 1.0, 1.0], 0.0, 1.0, 99);
    spec.series = (0..20)
        .map(|i| angular_pool::ingest::SyntheticSeries { id: format!("S{i:02}"), level: 0.0, scale: 1.0 })
        .collect();
    let data = generate_synthetic(&spec, 14, 2).unwrap();
    let methods = vec![
        NamedMethod::new("h", Method::Horizontal { weighted: false }),
        NamedMethod::new("hw", Method::Horizontal { weighted: true }),
        NamedMethod::new("v", Method::Vertical { weighted: false }),
        NamedMethod::new("vw", Method::Vertical { weighted: true }),
    ];
    let mut cfg = BacktestConfig::new(6, methods, "h");
    cfg.bound_rule = BoundRule::unbounded();
    let out = run_backtest(&data, &cfg).unwrap();
    for (plain, weighted) in [("h", "hw"), ("v", "vw")] {
        let p = &out.series_scores.get(plain).unwrap();
        let w = &out.series_scores.get(weighted).unwrap();
        let diffs: Vec<f64> = p.keys().map(|s| p[s].mqs - w[s].mqs).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean - 3.0 * sd / n.sqrt() > 0.0, "{weighted}: mean gain {mean}, sd {sd}");
    }
}

#[test]
fn fixed_angle_methods_round_trip_through_json() {
    let methods = vec![
        NamedMethod::new("h", Method::Horizontal { weighted: false }),
        NamedMethod::new("a30", Method::Angular { weighted: false, theta_deg: Some(30.0) }),
        NamedMethod::new("med", Method::Median { direction: Direction::Angular { theta_deg: 45.0 } }),
    ];
    let cfg = BacktestConfig::new(2, methods, "h");
    let text = cfg.to_json();
    assert_eq!(BacktestConfig::from_json(&text).unwrap(), cfg);
    assert_eq!(HUB_LEVELS.len(), cfg.levels.len());
}

// The files under fixtures/ are what the CLI examples and acceptance run use;
// they must stay in step with the in-code fixture.
#[test]
fn fixture_files_match_the_bundled_fixture() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    let forecasts = std::fs::File::open(dir.join("forecasts.csv")).unwrap();
    let truth = std::fs::File::open(dir.join("truth.csv")).unwrap();
    let parsed = angular_pool::ingest::parse_hub_csv(forecasts, truth).unwrap();
    assert!(parsed.warnings.is_empty());
    assert_eq!(parsed.dataset, bundled_fixture());
    let config = std::fs::read_to_string(dir.join("config.json")).unwrap();
    assert_eq!(BacktestConfig::from_json(&config).unwrap(), bundled_config());
}
