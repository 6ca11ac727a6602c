use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use angular_pool::backtest::{fit_parameters, run_backtest, BacktestConfig};
use angular_pool::ingest::{CellKey, HubReader};
use angular_pool::verify::{run_suite, Suite, SuiteReport, VerifyOptions};
use angular_pool::{
    angular_combine_grid, cdf_from_quantiles, crps, sup_distance, trim_by_mean, Aggregator, BoundRule,
    CombinationSpec, Direction, ForecastDataset, PiecewiseLinearCdf, ScoreSet, TrimKind, Weights, HUB_LEVELS,
};
use chrono::NaiveDate;
use log::{info, warn};

use crate::{
    AggArg, BacktestArgs, CliError, CliResult, CombineArgs, DirectionArg, HubInput, OptimizeArgs, RouteArg,
    ScoreArgs, SuiteArg, TrimArg, VerifyArgs,
};

const EMPTY_TRUTH: &str = "date,location,value\n";

pub fn read_cdf(path: &Path) -> CliResult<PiecewiseLinearCdf> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    PiecewiseLinearCdf::from_json(&text).map_err(|e| CliError::new(e.code(), format!("{}: {e}", path.display())))
}

pub fn read_cdfs(paths: &[PathBuf]) -> CliResult<Vec<PiecewiseLinearCdf>> {
    paths.iter().map(|p| read_cdf(p)).collect()
}

pub fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::new("io-error", format!("{}: {e}", path.display()))
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_error(path, e))?))
}

/// File at `path`, or stdout when no path is given.
pub fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_error(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn parse_date(text: &str) -> CliResult<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y-%m-%d").map_err(|e| CliError::usage(format!("bad date `{text}`: {e}")))
}

/// Reads every forecast file and the truth file (if any).
pub fn load_hub(input: &HubInput, need_truth: bool) -> CliResult<ForecastDataset> {
    if input.forecasts.is_empty() {
        return Err(CliError::usage("at least one --forecasts file is required"));
    }
    let mut reader = HubReader::new();
    for path in &input.forecasts {
        reader
            .add_forecasts(open(path)?, &stem(path))
            .map_err(|e| CliError::new(e.code(), format!("{}: {e}", path.display())))?;
    }
    let parsed = match &input.truth {
        Some(path) => reader.finish(open(path)?),
        None if need_truth => return Err(CliError::usage("--truth is required")),
        None => reader.finish(EMPTY_TRUTH.as_bytes()),
    }?;
    for w in &parsed.warnings {
        warn!("{w}");
    }
    info!(
        "{} cells, {} rows ignored, {} forecasts dropped, {} with crossing quantiles",
        parsed.dataset.cells.len(),
        parsed.ignored_rows,
        parsed.dropped_forecasts,
        parsed.crossing_forecasts
    );
    Ok(parsed.dataset)
}

pub fn direction(arg: DirectionArg, theta: Option<f64>) -> CliResult<Direction> {
    match (arg, theta) {
        (DirectionArg::Angular, Some(theta_deg)) => {
            if !(0.0..=90.0).contains(&theta_deg) {
                return Err(angular_pool::Error::InvalidAngle(theta_deg).into());
            }
            Ok(Direction::Angular { theta_deg })
        }
        (DirectionArg::Angular, None) => Err(CliError::usage("--theta is required for angular pooling")),
        (_, Some(_)) => Err(CliError::usage("--theta only applies to angular pooling")),
        (DirectionArg::Vertical, None) => Ok(Direction::Vertical),
        (DirectionArg::Horizontal, None) => Ok(Direction::Horizontal),
    }
}

fn read_weights(path: &Path, names: &[String]) -> CliResult<Weights> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let bad = |msg: String| CliError::new("invalid-weights", format!("{}: {msg}", path.display()));
    let raw: Vec<f64> = match value {
        serde_json::Value::Array(items) => items
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| bad(format!("`{v}` is not a number"))))
            .collect::<CliResult<_>>()?,
        serde_json::Value::Object(map) => names
            .iter()
            .map(|n| {
                map.get(n)
                    .and_then(|v| v.as_f64())
                    .ok_or_else(|| bad(format!("no numeric weight for `{n}`")))
            })
            .collect::<CliResult<_>>()?,
        _ => return Err(bad("expected an array or an object".into())),
    };
    if raw.len() != names.len() {
        return Err(bad(format!("{} weights for {} forecasts", raw.len(), names.len())));
    }
    Ok(Weights::normalized(raw)?)
}

fn combine_members(a: &CombineArgs) -> CliResult<(Vec<String>, Vec<PiecewiseLinearCdf>)> {
    if a.hub.is_empty() {
        if a.inputs.is_empty() {
            return Err(CliError::usage("no forecasts given"));
        }
        return Ok((a.inputs.iter().map(|p| stem(p)).collect(), read_cdfs(&a.inputs)?));
    }
    let (Some(series), Some(origin), Some(horizon)) = (&a.series, &a.origin, a.horizon) else {
        return Err(CliError::usage("--hub needs --series, --origin and --horizon"));
    };
    let data = load_hub(&HubInput { forecasts: a.hub.clone(), truth: None }, false)?;
    let key = CellKey { series: series.clone(), origin: parse_date(origin)?, horizon };
    let cell = data
        .cells
        .get(&key)
        .ok_or_else(|| CliError::new("invalid-input", format!("no forecasts for {series} at {origin}, horizon {horizon}")))?;
    let mut names = Vec::new();
    let mut cdfs = Vec::new();
    for (team, qf) in &cell.forecasts {
        names.push(team.clone());
        cdfs.push(cdf_from_quantiles(qf, BoundRule::default())?);
    }
    Ok((names, cdfs))
}

fn aggregator(a: &CombineArgs, names: &[String]) -> CliResult<Aggregator> {
    if a.weights_file.is_some() && a.agg != AggArg::Weighted {
        return Err(CliError::usage("--weights-file needs --agg weighted"));
    }
    if a.fraction != 0.0 && a.agg != AggArg::Trimmed {
        return Err(CliError::usage("--fraction needs --agg trimmed"));
    }
    Ok(match a.agg {
        AggArg::Mean => Aggregator::Mean,
        AggArg::Median => Aggregator::Median,
        AggArg::Weighted => {
            let path = a.weights_file.as_ref().ok_or_else(|| CliError::usage("--agg weighted needs --weights-file"))?;
            Aggregator::Weighted { weights: read_weights(path, names)? }
        }
        AggArg::Trimmed => Aggregator::Trimmed {
            trim: match a.trim {
                TrimArg::Exterior => TrimKind::Exterior,
                TrimArg::Interior => TrimKind::Interior,
            },
            fraction: a.fraction,
        },
    })
}

fn grid_route(members: &[PiecewiseLinearCdf], theta: f64, agg: &Aggregator, m: usize) -> CliResult<PiecewiseLinearCdf> {
    Ok(match agg {
        Aggregator::Trimmed { trim, fraction } => {
            angular_combine_grid(&trim_by_mean(members, *trim, *fraction)?, theta, &Aggregator::Mean, m)?
        }
        _ => angular_combine_grid(members, theta, agg, m)?,
    })
}

pub fn combine(a: &CombineArgs) -> CliResult<()> {
    let (names, members) = combine_members(a)?;
    let direction = direction(a.direction, a.theta)?;
    let agg = aggregator(a, &names)?;
    let theta = match direction {
        Direction::Angular { theta_deg } => Some(theta_deg),
        _ => None,
    };
    if theta.is_none() && (a.route.is_some() || a.check_exact) {
        return Err(CliError::usage("--route and --check-exact only apply to angular pooling"));
    }
    let median = matches!(agg, Aggregator::Median);
    if median && (a.route == Some(RouteArg::Exact) || a.check_exact) {
        return Err(CliError::usage("angular medians are only built on the grid"));
    }
    let mut spec = CombinationSpec::new(direction, agg.clone());
    spec.grid_points = a.m;
    let pooled = match (theta, a.route) {
        (Some(t), Some(RouteArg::Grid)) => grid_route(&members, t, &agg, a.m)?,
        _ => spec.combine(&members)?,
    };
    if a.check_exact {
        let t = theta.expect("checked above");
        let other = match a.route {
            Some(RouteArg::Grid) => spec.combine(&members)?,
            _ => grid_route(&members, t, &agg, a.m)?,
        };
        eprintln!("sup-norm gap between exact and grid routes: {:e} (m = {})", sup_distance(&pooled, &other), a.m);
    }
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", pooled.to_json())?;
    out.flush()?;
    Ok(())
}

const SCORE_COLUMNS: [&str; 6] = ["mqs", "crps", "interval_score_95", "interval_score_50", "coverage_95", "coverage_50"];

fn score_row(s: &ScoreSet, crps: f64) -> Vec<String> {
    [s.mqs, crps, s.interval_score_95, s.interval_score_50, s.coverage_95, s.coverage_50]
        .iter()
        .map(f64::to_string)
        .collect()
}

pub fn score(a: &ScoreArgs) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    if !a.inputs.is_empty() {
        if !a.hub.forecasts.is_empty() {
            return Err(CliError::usage("give CDF files or --forecasts, not both"));
        }
        let x = a.observation.ok_or_else(|| CliError::usage("--observation is required with CDF files"))?;
        w.write_record(std::iter::once("forecast").chain(SCORE_COLUMNS))?;
        for path in &a.inputs {
            let c = read_cdf(path)?;
            let s = ScoreSet::evaluate(&c, x, &HUB_LEVELS);
            w.write_record(std::iter::once(stem(path)).chain(score_row(&s, crps(&c, x))))?;
        }
    } else {
        if a.observation.is_some() {
            return Err(CliError::usage("--observation only applies to CDF files"));
        }
        let data = load_hub(&a.hub, true)?;
        let mut per_team: std::collections::BTreeMap<&str, (Vec<ScoreSet>, f64)> = Default::default();
        for (key, cell) in &data.cells {
            let Some(x) = data.truth_at(&key.series, cell.target_date) else { continue };
            for (team, qf) in &cell.forecasts {
                let c = cdf_from_quantiles(qf, BoundRule::default())?;
                let entry = per_team.entry(team).or_default();
                entry.0.push(ScoreSet::evaluate(&c, x, &HUB_LEVELS));
                entry.1 += crps(&c, x);
            }
        }
        w.write_record(["team", "cells"].into_iter().chain(SCORE_COLUMNS))?;
        for (team, (sets, crps_sum)) in per_team {
            let n = sets.len();
            let mean = ScoreSet::mean(&sets).expect("nonempty");
            let row = [team.to_string(), n.to_string()].into_iter().chain(score_row(&mean, crps_sum / n as f64));
            w.write_record(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_config(path: &Path) -> CliResult<BacktestConfig> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(BacktestConfig::from_json(&text)?)
}

pub fn backtest(a: &BacktestArgs) -> CliResult<()> {
    let cfg = read_config(&a.config)?;
    let data = load_hub(&a.hub, true)?;
    let outcome = run_backtest(&data, &cfg)?;
    fs::create_dir_all(&a.out_dir).map_err(|e| io_error(&a.out_dir, e))?;
    let report_path = a.out_dir.join("report.csv");
    let mut report = output(Some(&report_path))?;
    outcome.report.write_csv(&mut report)?;
    report.flush()?;
    let manifest_path = a.out_dir.join("manifest.json");
    fs::write(&manifest_path, outcome.manifest.to_json() + "\n").map_err(|e| io_error(&manifest_path, e))?;
    let c = &outcome.manifest.counts;
    eprintln!(
        "scored {} cells over {} series and {} origins; wrote {}",
        c.cells_scored,
        c.series,
        c.out_of_sample_origins,
        report_path.display()
    );
    Ok(())
}

pub fn optimize(a: &OptimizeArgs) -> CliResult<()> {
    let cfg = read_config(&a.config)?;
    let data = load_hub(&a.hub, true)?;
    let fitted = fit_parameters(&data, &cfg, &a.series, parse_date(&a.origin)?)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "{}", serde_json::to_string_pretty(&fitted)?)?;
    out.flush()?;
    Ok(())
}

pub fn verify(a: &VerifyArgs) -> CliResult<()> {
    let suites: Vec<Suite> = match a.suite {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Mean => vec![Suite::Mean],
        SuiteArg::Variance => vec![Suite::Variance],
        SuiteArg::Crps => vec![Suite::Crps],
        SuiteArg::Median => vec![Suite::Median],
        SuiteArg::Pdf => vec![Suite::Pdf],
        SuiteArg::Limits => vec![Suite::Limits],
    };
    if a.trials == 0 {
        return Err(CliError::usage("--trials must be positive"));
    }
    let opts = VerifyOptions { trials: a.trials, seed: a.seed, median_k: a.k, grid_points: a.m };
    let reports: Vec<SuiteReport> = suites.into_iter().map(|s| run_suite(s, &opts)).collect::<Result<_, _>>()?;
    let mut out = io::stdout().lock();
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&reports)?)?;
    } else {
        for r in &reports {
            for line in r.lines() {
                writeln!(out, "{line}")?;
            }
        }
    }
    out.flush()?;
    let failed = reports.iter().flat_map(|r| &r.checks).filter(|c| !c.passed()).count();
    if failed > 0 {
        let total: usize = reports.iter().map(|r| r.checks.len()).sum();
        return Err(CliError::new("verify-failed", format!("{failed} of {total} checks failed")));
    }
    Ok(())
}
