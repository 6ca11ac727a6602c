//! Forecast-Hub style CSV input and output, and synthetic Gaussian panels.
//!
//! Forecast files carry the columns
//! `forecast_date,target,target_end_date,location,type,quantile,value` plus an
//! optional `model` (or `team`) column; truth files carry `date,location,value`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::{Days, NaiveDate};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as NormalDist};

use crate::cdf::{QuantileForecast, HUB_LEVELS};
use crate::error::{Error, Result};

/// Tolerance when matching a CSV quantile column against the Hub levels.
pub const LEVEL_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub series: String,
    pub origin: NaiveDate,
    pub horizon: u32,
}

/// All team forecasts for one (series, origin, horizon).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub target_date: NaiveDate,
    pub forecasts: BTreeMap<String, QuantileForecast>,
}

/// Ragged panel of quantile forecasts plus realized values.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ForecastDataset {
    pub cells: BTreeMap<CellKey, Cell>,
    pub truth: BTreeMap<(String, NaiveDate), f64>,
}

impl ForecastDataset {
    pub fn series(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.cells.keys().map(|k| &k.series).collect();
        set.into_iter().cloned().collect()
    }

    pub fn origins(&self) -> Vec<NaiveDate> {
        let set: BTreeSet<NaiveDate> = self.cells.keys().map(|k| k.origin).collect();
        set.into_iter().collect()
    }

    pub fn horizons(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.cells.keys().map(|k| k.horizon).collect();
        set.into_iter().collect()
    }

    pub fn truth_at(&self, series: &str, date: NaiveDate) -> Option<f64> {
        self.truth.get(&(series.to_string(), date)).copied()
    }

    /// Cells of one series in (origin, horizon) order.
    pub fn series_cells<'a>(&'a self, series: &'a str) -> impl Iterator<Item = (&'a CellKey, &'a Cell)> + 'a {
        self.cells.iter().filter(move |(k, _)| k.series == series)
    }
}

/// Dataset plus everything the reader chose to drop.
#[derive(Debug, Clone, Default)]
pub struct ParsedHub {
    pub dataset: ForecastDataset,
    pub warnings: Vec<String>,
    pub ignored_rows: usize,
    pub dropped_forecasts: usize,
    pub crossing_forecasts: usize,
}

#[derive(Default)]
struct Partial {
    target_date: Option<NaiveDate>,
    values: [Option<f64>; 23],
    duplicate: bool,
}

/// Accumulates one or more forecast files before joining truth.
#[derive(Default)]
pub struct HubReader {
    partial: BTreeMap<(CellKey, String), Partial>,
    warnings: Vec<String>,
    ignored_rows: usize,
}

struct Columns {
    forecast_date: usize,
    target: usize,
    target_end_date: usize,
    location: usize,
    kind: usize,
    quantile: usize,
    value: usize,
    team: Option<usize>,
}

impl Columns {
    fn locate(headers: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing column `{name}`") })
        };
        Ok(Columns {
            forecast_date: find("forecast_date")?,
            target: find("target")?,
            target_end_date: find("target_end_date")?,
            location: find("location")?,
            kind: find("type")?,
            quantile: find("quantile")?,
            value: find("value")?,
            team: find("model").or_else(|_| find("team")).ok(),
        })
    }
}

fn parse_date(text: &str, line: u64) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text.trim(), "%Y-%m-%d")
        .map_err(|e| Error::Parse { line, msg: format!("bad date `{text}`: {e}") })
}

fn parse_value(text: &str, line: u64) -> Result<f64> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| Error::Parse { line, msg: format!("bad number `{text}`") })?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Parse { line, msg: format!("value {v} must be finite and nonnegative") });
    }
    Ok(v)
}

/// Horizon in weeks from targets like `"3 wk ahead inc death"`.
pub fn parse_horizon(target: &str) -> Option<u32> {
    let mut parts = target.split_whitespace();
    let n = parts.next()?.parse().ok()?;
    let rest: Vec<&str> = parts.collect();
    (rest == ["wk", "ahead", "inc", "death"] && n > 0).then_some(n)
}

pub fn hub_level_index(q: f64) -> Option<usize> {
    HUB_LEVELS.iter().position(|&a| (a - q).abs() <= LEVEL_MATCH_TOL)
}

impl HubReader {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reads one forecast file. Rows without a `model`/`team` column are
    /// attributed to `default_team`.
    pub fn add_forecasts<R: Read>(&mut self, reader: R, default_team: &str) -> Result<()> {
        let mut rdr = csv::ReaderBuilder::new().flexible(false).from_reader(reader);
        let cols = Columns::locate(rdr.headers()?)?;
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let field = |i: usize| rec.get(i).unwrap_or("");
            let kind = field(cols.kind).trim();
            let quantile = field(cols.quantile).trim();
            match (kind, quantile.is_empty()) {
                ("point", true) => {
                    self.ignored_rows += 1;
                    continue;
                }
                ("quantile", false) => {}
                ("point", false) | ("quantile", true) => {
                    return Err(Error::Parse {
                        line,
                        msg: "quantile must be present exactly for quantile rows".into(),
                    })
                }
                (other, _) => {
                    return Err(Error::Parse { line, msg: format!("unknown row type `{other}`") })
                }
            }
            let Some(horizon) = parse_horizon(field(cols.target)) else {
                self.ignored_rows += 1;
                continue;
            };
            let origin = parse_date(field(cols.forecast_date), line)?;
            let target_date = parse_date(field(cols.target_end_date), line)?;
            let value = parse_value(field(cols.value), line)?;
            let q: f64 = quantile
                .parse()
                .map_err(|_| Error::Parse { line, msg: format!("bad quantile `{quantile}`") })?;
            let Some(idx) = hub_level_index(q) else {
                self.warnings.push(format!("line {line}: quantile {q} is not a Hub level; row ignored"));
                self.ignored_rows += 1;
                continue;
            };
            let location = field(cols.location).trim();
            if location.is_empty() {
                return Err(Error::Parse { line, msg: "empty location".into() });
            }
            let team = cols.team.map_or(default_team, |i| field(i).trim()).to_string();
            let key = CellKey { series: location.to_string(), origin, horizon };
            let slot = self.partial.entry((key, team)).or_default();
            if slot.target_date.is_some_and(|d| d != target_date) {
                return Err(Error::Parse { line, msg: "inconsistent target_end_date".into() });
            }
            slot.target_date = Some(target_date);
            if slot.values[idx].replace(value).is_some() {
                slot.duplicate = true;
            }
        }
        Ok(())
    }

    /// Groups the collected rows into forecasts and joins the truth file.
    pub fn finish<R: Read>(self, truth: R) -> Result<ParsedHub> {
        let mut out = ParsedHub {
            warnings: self.warnings,
            ignored_rows: self.ignored_rows,
            ..Default::default()
        };
        for ((key, team), slot) in self.partial {
            let present = slot.values.iter().filter(|v| v.is_some()).count();
            if slot.duplicate || present < HUB_LEVELS.len() {
                let why = if slot.duplicate { "duplicate levels".to_string() } else { format!("{present} of 23 levels") };
                warn!("dropping {team} forecast for {} {} h{}: {why}", key.series, key.origin, key.horizon);
                out.warnings.push(format!(
                    "dropped {team} forecast for {} {} h{}: {why}",
                    key.series, key.origin, key.horizon
                ));
                out.dropped_forecasts += 1;
                continue;
            }
            let values: Vec<f64> = slot.values.iter().map(|v| v.unwrap_or_default()).collect();
            let qf = match QuantileForecast::hub(values) {
                Ok(qf) => qf,
                Err(e) => {
                    out.warnings.push(format!(
                        "rejected {team} forecast for {} {} h{}: {e}",
                        key.series, key.origin, key.horizon
                    ));
                    out.crossing_forecasts += 1;
                    continue;
                }
            };
            let target_date = slot.target_date.expect("set with every row");
            out.dataset
                .cells
                .entry(key)
                .or_insert_with(|| Cell { target_date, forecasts: BTreeMap::new() })
                .forecasts
                .insert(team, qf);
        }
        out.dataset.truth = parse_truth(truth)?;
        Ok(out)
    }
}

pub fn parse_truth<R: Read>(reader: R) -> Result<BTreeMap<(String, NaiveDate), f64>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing truth column `{name}`") })
    };
    let (date_col, loc_col, val_col) = (find("date")?, find("location")?, find("value")?);
    let mut truth = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let date = parse_date(rec.get(date_col).unwrap_or(""), line)?;
        let value = parse_value(rec.get(val_col).unwrap_or(""), line)?;
        let loc = rec.get(loc_col).unwrap_or("").trim().to_string();
        if truth.insert((loc, date), value).is_some() {
            return Err(Error::Parse { line, msg: "duplicate truth row".into() });
        }
    }
    Ok(truth)
}

/// Parses a single forecast file (team taken from a `model` column, or
/// `"ensemble-member"` when there is none) together with its truth file.
pub fn parse_hub_csv<R: Read, S: Read>(forecasts: R, truth: S) -> Result<ParsedHub> {
    let mut reader = HubReader::new();
    reader.add_forecasts(forecasts, "ensemble-member")?;
    reader.finish(truth)
}

/// Writes a dataset back out in the Hub layout with a `model` column.
pub fn write_hub_csv<W: Write, V: Write>(data: &ForecastDataset, forecasts: W, truth: V) -> Result<()> {
    let mut w = csv::Writer::from_writer(forecasts);
    w.write_record([
        "forecast_date", "target", "target_end_date", "location", "type", "quantile", "value", "model",
    ])?;
    for (key, cell) in &data.cells {
        let target = format!("{} wk ahead inc death", key.horizon);
        for (team, qf) in &cell.forecasts {
            for (a, q) in qf.levels().iter().zip(qf.quantiles()) {
                w.write_record([
                    key.origin.to_string(),
                    target.clone(),
                    cell.target_date.to_string(),
                    key.series.clone(),
                    "quantile".into(),
                    a.to_string(),
                    q.to_string(),
                    team.clone(),
                ])?;
            }
        }
    }
    w.flush()?;
    let mut t = csv::Writer::from_writer(truth);
    t.write_record(["date", "location", "value"])?;
    for ((loc, date), v) in &data.truth {
        t.write_record([date.to_string(), loc.clone(), v.to_string()])?;
    }
    t.flush()?;
    Ok(())
}

/// Gaussian quantiles at `levels`.
pub fn gaussian_forecast(mean: f64, sd: f64, levels: &[f64]) -> Result<QuantileForecast> {
    let n = NormalDist::new(mean, sd).map_err(|e| Error::invalid(e.to_string()))?;
    QuantileForecast::new(levels.to_vec(), levels.iter().map(|&a| n.inverse_cdf(a)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSeries {
    pub id: String,
    /// Added to every team mean and to the truth.
    #[serde(default)]
    pub level: f64,
    /// Multiplies every mean offset and standard deviation.
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Gaussian teams forecasting a Gaussian truth, identical at every origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub truth_mean: f64,
    pub truth_sd: f64,
    pub seed: u64,
    #[serde(default)]
    pub team_names: Vec<String>,
    #[serde(default)]
    pub series: Vec<SyntheticSeries>,
    #[serde(default = "first_origin")]
    pub first_origin: NaiveDate,
}

fn first_origin() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 6, 6).expect("valid date")
}

impl SyntheticSpec {
    pub fn new(means: Vec<f64>, sds: Vec<f64>, truth_mean: f64, truth_sd: f64, seed: u64) -> Self {
        SyntheticSpec {
            means,
            sds,
            truth_mean,
            truth_sd,
            seed,
            team_names: Vec::new(),
            series: Vec::new(),
            first_origin: first_origin(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.means.is_empty() || self.means.len() != self.sds.len() {
            return Err(Error::invalid("means and sds must be nonempty and of equal length"));
        }
        if !self.team_names.is_empty() && self.team_names.len() != self.means.len() {
            return Err(Error::invalid("team_names must match the number of teams"));
        }
        if self.sds.iter().chain([&self.truth_sd]).any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("standard deviations must be positive"));
        }
        if self.series.iter().any(|s| !(s.scale > 0.0)) {
            return Err(Error::invalid("series scales must be positive"));
        }
        Ok(())
    }

    fn team(&self, i: usize) -> String {
        self.team_names.get(i).cloned().unwrap_or_else(|| format!("team{}", i + 1))
    }
}

/// Builds a weekly panel: `n_origins` origins, horizons `1..=n_horizons`.
pub fn generate_synthetic(spec: &SyntheticSpec, n_origins: usize, n_horizons: u32) -> Result<ForecastDataset> {
    spec.validate()?;
    let series = if spec.series.is_empty() {
        vec![SyntheticSeries { id: "S1".into(), level: 0.0, scale: 1.0 }]
    } else {
        spec.series.clone()
    };
    let week = |n: u64| Days::new(7 * n);
    let mut data = ForecastDataset::default();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(spec.truth_mean, spec.truth_sd).map_err(|e| Error::invalid(e.to_string()))?;
    for s in &series {
        let forecasts: BTreeMap<String, QuantileForecast> = spec
            .means
            .iter()
            .zip(&spec.sds)
            .enumerate()
            .map(|(i, (&m, &sd))| {
                Ok((spec.team(i), gaussian_forecast(s.level + s.scale * m, s.scale * sd, &HUB_LEVELS)?))
            })
            .collect::<Result<_>>()?;
        for o in 0..n_origins {
            let origin = spec.first_origin + week(o as u64);
            for h in 1..=n_horizons {
                let key = CellKey { series: s.id.clone(), origin, horizon: h };
                let cell = Cell { target_date: origin + week(h as u64), forecasts: forecasts.clone() };
                data.cells.insert(key, cell);
            }
        }
        for t in 1..=(n_origins as u64 + n_horizons as u64) {
            let date = spec.first_origin + week(t);
            data.truth.insert((s.id.clone(), date), s.level + s.scale * noise.sample(&mut rng));
        }
    }
    Ok(data)
}
