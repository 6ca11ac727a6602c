//! Expanding-window backtests.
//!
//! At every out-of-sample origin `t` of every series, each method's
//! parameters are fitted on the cells whose target date is on or before `t`,
//! then the method's forecasts for the cells issued at `t` are scored.
//! Scores are averaged over horizons, then over origins, then over the series
//! of each group; skill scores use the geometric mean of per-series ratios.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdf::{cdf_from_quantiles, BoundRule, PiecewiseLinearCdf, HUB_LEVELS};
use crate::combine::{
    beta_pool, horizontal_combine, median_combine, recalibrate, secondary_combine,
    vertical_combine, Aggregator, BetaPoolParams, Direction, RecalibrationParams,
    TrimKind, DEFAULT_GRID_POINTS,
};
use crate::error::{Error, Result};
use crate::estimation::{
    argmin_smallest, average_by_origin, default_theta_candidates, optimize_beta, optimize_scalar,
    optimize_theta, pool_cell, switching_scores, theta_profile, trimmed_pool, InSampleCell,
    InSampleRecord, ScalarParameter, TeamScores, DEFAULT_MIN_PERIODS,
};
use crate::ingest::{generate_synthetic, ForecastDataset, SyntheticSeries, SyntheticSpec};
use crate::scoring::{mqs, skill_score, ScoreReport, ScoreSet};

/// Base pooling direction of a composite method. `Angular` uses an angle
/// optimized at each origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolDirection {
    Vertical,
    Horizontal,
    Angular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Horizontal {
        #[serde(default)]
        weighted: bool,
    },
    Vertical {
        #[serde(default)]
        weighted: bool,
    },
    /// Fixed angle when `theta_deg` is set, otherwise optimized per origin.
    Angular {
        #[serde(default)]
        weighted: bool,
        #[serde(default)]
        theta_deg: Option<f64>,
    },
    /// Horizontal or vertical, whichever has the lower in-sample MQS.
    Switching {
        #[serde(default)]
        weighted: bool,
    },
    Median {
        #[serde(default = "vertical")]
        direction: Direction,
    },
    BetaPool {
        #[serde(default)]
        weighted: bool,
        grid_a: Vec<f64>,
        grid_b: Vec<f64>,
    },
    Trimmed {
        trim: TrimKind,
        direction: PoolDirection,
        grid: Vec<f64>,
    },
    Recalibrated {
        #[serde(default)]
        weighted: bool,
        direction: PoolDirection,
        grid: Vec<f64>,
    },
    /// Two-member pool of the horizontal and vertical combinations, weight
    /// on the horizontal one optimized; `direction` is vertical or horizontal.
    Secondary {
        #[serde(default)]
        weighted: bool,
        direction: PoolDirection,
        grid: Vec<f64>,
    },
}

fn vertical() -> Direction {
    Direction::Vertical
}

impl Method {
    fn weighted(&self) -> bool {
        match self {
            Method::Horizontal { weighted }
            | Method::Vertical { weighted }
            | Method::Angular { weighted, .. }
            | Method::Switching { weighted }
            | Method::BetaPool { weighted, .. }
            | Method::Recalibrated { weighted, .. }
            | Method::Secondary { weighted, .. } => *weighted,
            Method::Median { .. } | Method::Trimmed { .. } => false,
        }
    }

    fn problems(&self, name: &str, out: &mut Vec<String>) {
        let mut grid = |label: &str, g: &[f64], ok: &dyn Fn(f64) -> bool, what: &str| {
            if g.is_empty() {
                out.push(format!("method `{name}`: {label} grid is empty"));
            } else if g.iter().any(|&v| !v.is_finite() || !ok(v)) {
                out.push(format!("method `{name}`: {label} grid values must be {what}"));
            }
        };
        match self {
            Method::Angular { theta_deg: Some(t), .. } if !(0.0..=90.0).contains(t) => {
                out.push(format!("method `{name}`: theta_deg {t} outside [0, 90]"))
            }
            Method::Median { direction: Direction::Angular { theta_deg } } if !(0.0..=90.0).contains(theta_deg) => {
                out.push(format!("method `{name}`: theta_deg {theta_deg} outside [0, 90]"))
            }
            Method::BetaPool { grid_a, grid_b, .. } => {
                grid("a", grid_a, &|v| v > 0.0, "positive");
                grid("b", grid_b, &|v| v > 0.0, "positive");
            }
            Method::Trimmed { grid: g, .. } => grid("trim fraction", g, &|v| (0.0..1.0).contains(&v), "in [0, 1)"),
            Method::Recalibrated { grid: g, .. } => grid("gamma", g, &|v| v > 0.0, "positive"),
            Method::Secondary { grid: g, direction, .. } => {
                grid("secondary weight", g, &|v| (0.0..=1.0).contains(&v), "in [0, 1]");
                if *direction == PoolDirection::Angular {
                    out.push(format!("method `{name}`: secondary direction must be vertical or horizontal"));
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMethod {
    pub name: String,
    #[serde(flatten)]
    pub method: Method,
}

impl NamedMethod {
    pub fn new(name: impl Into<String>, method: Method) -> Self {
        NamedMethod { name: name.into(), method }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    /// Origins used only for fitting before the first scored origin.
    pub initial_in_sample: usize,
    pub methods: Vec<NamedMethod>,
    pub benchmark: String,
    #[serde(default = "hub_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub bound_rule: BoundRule,
    #[serde(default = "min_periods")]
    pub min_weight_periods: usize,
    #[serde(default = "default_theta_candidates")]
    pub theta_candidates: Vec<f64>,
    #[serde(default = "grid_points")]
    pub grid_points: usize,
    /// Named series groups reported besides the implicit `all` group.
    #[serde(default)]
    pub groups: BTreeMap<String, Vec<String>>,
}

fn hub_levels() -> Vec<f64> {
    HUB_LEVELS.to_vec()
}

fn min_periods() -> usize {
    DEFAULT_MIN_PERIODS
}

fn grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

pub const ALL_GROUP: &str = "all";

impl BacktestConfig {
    pub fn new(initial_in_sample: usize, methods: Vec<NamedMethod>, benchmark: impl Into<String>) -> Self {
        BacktestConfig {
            initial_in_sample,
            methods,
            benchmark: benchmark.into(),
            levels: hub_levels(),
            bound_rule: BoundRule::default(),
            min_weight_periods: DEFAULT_MIN_PERIODS,
            theta_candidates: default_theta_candidates(),
            grid_points: DEFAULT_GRID_POINTS,
            groups: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks the config against `data`, reporting every problem found.
    pub fn validate(&self, data: &ForecastDataset) -> Result<()> {
        let mut out = Vec::new();
        let n_origins = data.origins().len();
        if self.initial_in_sample == 0 || self.initial_in_sample >= n_origins {
            out.push(format!(
                "initial_in_sample {} must be at least 1 and below the number of origins ({n_origins})",
                self.initial_in_sample
            ));
        }
        if self.methods.is_empty() {
            out.push("no methods configured".into());
        }
        let mut names = BTreeSet::new();
        for m in &self.methods {
            if m.name.trim().is_empty() {
                out.push("method names must be nonempty".into());
            } else if !names.insert(m.name.as_str()) {
                out.push(format!("duplicate method name `{}`", m.name));
            }
            m.method.problems(&m.name, &mut out);
        }
        if !names.contains(self.benchmark.as_str()) {
            out.push(format!("benchmark `{}` is not a configured method", self.benchmark));
        }
        if self.levels.is_empty()
            || self.levels.iter().any(|a| !(*a > 0.0 && *a < 1.0))
            || self.levels.windows(2).any(|w| w[0] >= w[1])
        {
            out.push("levels must be nonempty, strictly increasing and inside (0, 1)".into());
        }
        if self.theta_candidates.is_empty() || self.theta_candidates.iter().any(|t| !(0.0..=90.0).contains(t)) {
            out.push("theta_candidates must be nonempty and inside [0, 90]".into());
        }
        if self.grid_points < 2 {
            out.push("grid_points must be at least 2".into());
        }
        let known: BTreeSet<String> = data.series().into_iter().collect();
        for (label, members) in &self.groups {
            if label == ALL_GROUP {
                out.push(format!("group label `{ALL_GROUP}` is reserved"));
            }
            if members.is_empty() {
                out.push(format!("group `{label}` is empty"));
            }
            for s in members.iter().filter(|s| !known.contains(*s)) {
                out.push(format!("group `{label}` names unknown series `{s}`"));
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(out))
        }
    }
}

/// Parameters a method settled on at one origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FittedMethod {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_vertical: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<BetaPoolParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trim_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secondary_weight: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedParameters {
    pub series: String,
    pub origin: NaiveDate,
    pub in_sample_cells: usize,
    pub team_scores: TeamScores,
    pub methods: BTreeMap<String, FittedMethod>,
}

#[derive(Debug, Clone)]
struct PreparedCell {
    origin: NaiveDate,
    horizon: u32,
    target_date: NaiveDate,
    teams: Vec<String>,
    members: Vec<PiecewiseLinearCdf>,
    truth: Option<f64>,
}

impl PreparedCell {
    fn in_sample(&self) -> Option<InSampleCell> {
        Some(InSampleCell {
            origin: self.origin,
            horizon: self.horizon,
            teams: self.teams.clone(),
            members: self.members.clone(),
            observation: self.truth?,
        })
    }
}

/// One series' cells plus caches shared across its origins.
struct SeriesContext<'a> {
    cfg: &'a BacktestConfig,
    cells: Vec<PreparedCell>,
    degenerate: usize,
    // Unweighted angular MQS per candidate angle, per cell.
    profiles: Vec<Option<Vec<f64>>>,
}

impl<'a> SeriesContext<'a> {
    fn new(data: &ForecastDataset, cfg: &'a BacktestConfig, series: &str) -> Self {
        let mut degenerate = 0;
        let cells: Vec<PreparedCell> = data
            .series_cells(series)
            .map(|(key, cell)| {
                let mut teams = Vec::new();
                let mut members = Vec::new();
                for (team, qf) in &cell.forecasts {
                    match cdf_from_quantiles(qf, cfg.bound_rule) {
                        Ok(c) => {
                            teams.push(team.clone());
                            members.push(c);
                        }
                        Err(e) => {
                            warn!("{series} {} h{}: dropping {team}: {e}", key.origin, key.horizon);
                            degenerate += 1;
                        }
                    }
                }
                PreparedCell {
                    origin: key.origin,
                    horizon: key.horizon,
                    target_date: cell.target_date,
                    teams,
                    members,
                    truth: data.truth_at(series, cell.target_date),
                }
            })
            .collect();
        let n = cells.len();
        SeriesContext { cfg, cells, degenerate, profiles: vec![None; n] }
    }

    fn history_indices(&self, origin: NaiveDate) -> Vec<usize> {
        (0..self.cells.len())
            .filter(|&i| {
                let c = &self.cells[i];
                c.target_date <= origin && c.truth.is_some() && !c.members.is_empty()
            })
            .collect()
    }

    fn records(&self, idx: &[usize]) -> Vec<InSampleRecord> {
        let mut out = Vec::new();
        for &i in idx {
            let c = &self.cells[i];
            let x = c.truth.expect("history cells have truth");
            for (team, cdf) in c.teams.iter().zip(&c.members) {
                out.push(InSampleRecord {
                    team: team.clone(),
                    origin: c.origin,
                    horizon: c.horizon,
                    mqs: Some(mqs(cdf, x, &self.cfg.levels)),
                });
            }
        }
        out
    }

    // Same arithmetic as `optimize_theta` without weights, but each cell's
    // per-angle scores are computed once per series.
    fn cached_theta(&mut self, idx: &[usize], history: &[InSampleCell]) -> Result<f64> {
        let missing: Vec<usize> = idx.iter().copied().filter(|&i| self.profiles[i].is_none()).collect();
        let (cfg, cells) = (self.cfg, &self.cells);
        let fresh = missing
            .par_iter()
            .map(|&i| {
                let cell = cells[i].in_sample().expect("history cells have truth");
                theta_profile(&cell, None, &cfg.theta_candidates, &cfg.levels)
            })
            .collect::<Result<Vec<_>>>()?;
        for (i, p) in missing.into_iter().zip(fresh) {
            self.profiles[i] = Some(p);
        }
        let scored: Vec<(f64, f64)> = cfg
            .theta_candidates
            .iter()
            .enumerate()
            .map(|(j, &t)| {
                let vals = idx.iter().zip(history).map(|(&i, c)| (c.origin, self.profiles[i].as_ref().expect("filled")[j]));
                (t, average_by_origin(vals).expect("nonempty history"))
            })
            .collect();
        Ok(argmin_smallest(&scored).expect("candidates nonempty"))
    }

    fn theta(&mut self, h: &History, scores: Option<&TeamScores>, memo: &mut Option<f64>) -> Result<f64> {
        let cfg = self.cfg;
        if h.cells.is_empty() {
            return Ok(smallest(&cfg.theta_candidates));
        }
        match scores {
            Some(s) => optimize_theta(&h.cells, Some(s), &cfg.theta_candidates, &cfg.levels),
            None => {
                if memo.is_none() {
                    *memo = Some(self.cached_theta(&h.idx, &h.cells)?);
                }
                Ok(memo.expect("just set"))
            }
        }
    }

    fn direction(
        &mut self,
        d: PoolDirection,
        h: &History,
        scores: Option<&TeamScores>,
        memo: &mut Option<f64>,
    ) -> Result<(Direction, Option<f64>)> {
        Ok(match d {
            PoolDirection::Vertical => (Direction::Vertical, None),
            PoolDirection::Horizontal => (Direction::Horizontal, None),
            PoolDirection::Angular => {
                let t = self.theta(h, scores, memo)?;
                (Direction::Angular { theta_deg: t }, Some(t))
            }
        })
    }

    fn fit(&mut self, series: &str, origin: NaiveDate) -> Result<FittedParameters> {
        let cfg = self.cfg;
        let idx = self.history_indices(origin);
        let cells: Vec<InSampleCell> = idx.iter().filter_map(|&i| self.cells[i].in_sample()).collect();
        let h = History { idx, cells };
        let team_scores = TeamScores::from_records(&self.records(&h.idx), cfg.min_weight_periods);
        let empty = h.cells.is_empty();
        let levels = &cfg.levels;
        // Unweighted optimal angle, shared by every method that needs it.
        let mut memo = None;
        let mut methods = BTreeMap::new();
        for nm in &cfg.methods {
            let scores = nm.method.weighted().then_some(&team_scores);
            let mut fitted = FittedMethod::default();
            match &nm.method {
                Method::Horizontal { .. } | Method::Vertical { .. } | Method::Median { .. } => {}
                Method::Angular { theta_deg: Some(t), .. } => fitted.theta_deg = Some(*t),
                Method::Angular { theta_deg: None, .. } => {
                    fitted.theta_deg = Some(self.theta(&h, scores, &mut memo)?)
                }
                Method::Switching { .. } => {
                    let vertical = !empty && {
                        let (sh, sv) = switching_scores(&h.cells, scores, levels)?;
                        sh > sv
                    };
                    fitted.use_vertical = Some(vertical);
                }
                Method::BetaPool { grid_a, grid_b, .. } => {
                    fitted.beta = Some(if empty {
                        closest_to_one(grid_a, grid_b)?
                    } else {
                        optimize_beta(&h.cells, scores, grid_a, grid_b, levels)?
                    });
                }
                Method::Trimmed { trim, direction, grid } => {
                    let (d, t) = self.direction(*direction, &h, None, &mut memo)?;
                    fitted.theta_deg = t;
                    let param = ScalarParameter::TrimFraction { trim: *trim, direction: d };
                    fitted.trim_fraction = Some(scalar(&h, param, None, grid, levels)?);
                }
                Method::Recalibrated { direction, grid, .. } => {
                    let (d, t) = self.direction(*direction, &h, scores, &mut memo)?;
                    fitted.theta_deg = t;
                    let param = ScalarParameter::Gamma { direction: d };
                    fitted.gamma = Some(scalar(&h, param, scores, grid, levels)?);
                }
                Method::Secondary { direction, grid, .. } => {
                    let (d, _) = self.direction(*direction, &h, None, &mut memo)?;
                    let param = ScalarParameter::SecondaryWeight { direction: d };
                    fitted.secondary_weight = Some(scalar(&h, param, scores, grid, levels)?);
                }
            }
            methods.insert(nm.name.clone(), fitted);
        }
        Ok(FittedParameters {
            series: series.to_string(),
            origin,
            in_sample_cells: h.cells.len(),
            team_scores,
            methods,
        })
    }
}

struct History {
    idx: Vec<usize>,
    cells: Vec<InSampleCell>,
}

fn smallest(grid: &[f64]) -> f64 {
    grid.iter().copied().min_by(f64::total_cmp).expect("validated grid")
}

// With no history every grid value ties, so the smallest wins.
fn scalar(
    h: &History,
    param: ScalarParameter,
    scores: Option<&TeamScores>,
    grid: &[f64],
    levels: &[f64],
) -> Result<f64> {
    if h.cells.is_empty() {
        Ok(smallest(grid))
    } else {
        optimize_scalar(&h.cells, param, scores, grid, levels)
    }
}

fn closest_to_one(grid_a: &[f64], grid_b: &[f64]) -> Result<BetaPoolParams> {
    let mut pairs: Vec<(f64, f64)> = grid_a.iter().flat_map(|&a| grid_b.iter().map(move |&b| (a, b))).collect();
    pairs.sort_by(|p, q| {
        let d = |(a, b): (f64, f64)| (a - 1.0).hypot(b - 1.0);
        d(*p).total_cmp(&d(*q)).then(p.0.total_cmp(&q.0)).then(p.1.total_cmp(&q.1))
    });
    let (a, b) = *pairs.first().ok_or_else(|| Error::invalid("empty beta parameter grid"))?;
    BetaPoolParams::new(a, b)
}

/// Forecast of `method` for one cell, given the parameters fitted at its
/// origin.
pub fn method_forecast(
    method: &Method,
    fitted: &FittedMethod,
    cell: &InSampleCell,
    team_scores: &TeamScores,
    grid_points: usize,
) -> Result<PiecewiseLinearCdf> {
    let scores = method.weighted().then_some(team_scores);
    let theta = || fitted.theta_deg.ok_or_else(|| Error::invalid("angle was not fitted"));
    let direction = |d: PoolDirection| -> Result<Direction> {
        Ok(match d {
            PoolDirection::Vertical => Direction::Vertical,
            PoolDirection::Horizontal => Direction::Horizontal,
            PoolDirection::Angular => Direction::Angular { theta_deg: theta()? },
        })
    };
    let missing = |what: &str| Error::invalid(format!("{what} was not fitted"));
    match method {
        Method::Horizontal { .. } => pool_cell(cell, Direction::Horizontal, scores),
        Method::Vertical { .. } => pool_cell(cell, Direction::Vertical, scores),
        Method::Angular { .. } => pool_cell(cell, Direction::Angular { theta_deg: theta()? }, scores),
        Method::Switching { .. } => {
            let agg = match scores {
                Some(s) => Aggregator::Weighted { weights: s.weights_for(&cell.teams)? },
                None => Aggregator::Mean,
            };
            if fitted.use_vertical.ok_or_else(|| missing("switching choice"))? {
                vertical_combine(&cell.members, &agg)
            } else {
                horizontal_combine(&cell.members, &agg)
            }
        }
        Method::Median { direction } => median_combine(&cell.members, *direction, grid_points),
        Method::BetaPool { .. } => {
            let w = scores.map(|s| s.weights_for(&cell.teams)).transpose()?;
            beta_pool(&cell.members, w.as_ref(), fitted.beta.ok_or_else(|| missing("beta parameters"))?)
        }
        Method::Trimmed { trim, direction: d, .. } => {
            let f = fitted.trim_fraction.ok_or_else(|| missing("trim fraction"))?;
            trimmed_pool(&cell.members, *trim, f, direction(*d)?)
        }
        Method::Recalibrated { direction: d, .. } => {
            let g = fitted.gamma.ok_or_else(|| missing("gamma"))?;
            recalibrate(&pool_cell(cell, direction(*d)?, scores)?, &RecalibrationParams::hub(g)?)
        }
        Method::Secondary { direction: d, .. } => {
            let w = fitted.secondary_weight.ok_or_else(|| missing("secondary weight"))?;
            let h = pool_cell(cell, Direction::Horizontal, scores)?;
            let v = pool_cell(cell, Direction::Vertical, scores)?;
            secondary_combine(&h, &v, w, direction(*d)?)
        }
    }
}

/// Parameters every configured method would use for `series` at `origin`,
/// fitted only on cells whose target date is on or before `origin`.
pub fn fit_parameters(
    data: &ForecastDataset,
    cfg: &BacktestConfig,
    series: &str,
    origin: NaiveDate,
) -> Result<FittedParameters> {
    cfg.validate(data)?;
    let mut ctx = SeriesContext::new(data, cfg, series);
    ctx.fit(series, origin)
}

/// Per-method, per-series scores averaged over horizons then origins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SeriesScores {
    pub methods: Vec<(String, BTreeMap<String, ScoreSet>)>,
}

impl SeriesScores {
    pub fn get(&self, method: &str) -> Option<&BTreeMap<String, ScoreSet>> {
        self.methods.iter().find(|(m, _)| m == method).map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunCounts {
    pub series: usize,
    pub out_of_sample_origins: usize,
    pub cells_scored: usize,
    pub skipped_missing_truth: usize,
    pub skipped_no_teams: usize,
    pub degenerate_forecasts_dropped: usize,
    pub fits_without_history: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: BacktestConfig,
    pub counts: RunCounts,
}

impl RunManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

#[derive(Debug, Clone)]
pub struct BacktestOutcome {
    pub report: ScoreReport,
    pub series_scores: SeriesScores,
    pub manifest: RunManifest,
}

struct SeriesOutcome {
    scores: BTreeMap<String, ScoreSet>,
    counts: RunCounts,
}

fn run_series(data: &ForecastDataset, cfg: &BacktestConfig, series: &str, origins: &[NaiveDate]) -> Result<SeriesOutcome> {
    let mut ctx = SeriesContext::new(data, cfg, series);
    let mut counts = RunCounts { degenerate_forecasts_dropped: ctx.degenerate, ..Default::default() };
    let mut per_origin: BTreeMap<&str, Vec<ScoreSet>> = BTreeMap::new();
    for &origin in origins {
        let todo: Vec<usize> = (0..ctx.cells.len()).filter(|&i| ctx.cells[i].origin == origin).collect();
        let scorable: Vec<usize> = todo
            .iter()
            .copied()
            .filter(|&i| {
                let c = &ctx.cells[i];
                if c.truth.is_none() {
                    counts.skipped_missing_truth += 1;
                    false
                } else if c.members.is_empty() {
                    counts.skipped_no_teams += 1;
                    false
                } else {
                    true
                }
            })
            .collect();
        if scorable.is_empty() {
            continue;
        }
        let fitted = ctx.fit(series, origin).map_err(|e| context(e, series, origin))?;
        if fitted.in_sample_cells == 0 {
            counts.fits_without_history += 1;
        }
        counts.cells_scored += scorable.len();
        for nm in &cfg.methods {
            let params = &fitted.methods[&nm.name];
            let sets = scorable
                .iter()
                .map(|&i| {
                    let cell = ctx.cells[i].in_sample().expect("scorable cells have truth");
                    let cdf = method_forecast(&nm.method, params, &cell, &fitted.team_scores, cfg.grid_points)
                        .map_err(|e| context(e, series, origin))?;
                    Ok(ScoreSet::evaluate(&cdf, cell.observation, &cfg.levels))
                })
                .collect::<Result<Vec<_>>>()?;
            per_origin
                .entry(nm.name.as_str())
                .or_default()
                .push(ScoreSet::mean(&sets).expect("nonempty"));
        }
    }
    let scores = per_origin
        .into_iter()
        .map(|(m, sets)| (m.to_string(), ScoreSet::mean(&sets).expect("nonempty")))
        .collect();
    Ok(SeriesOutcome { scores, counts })
}

fn context(e: Error, series: &str, origin: NaiveDate) -> Error {
    match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{series} at {origin}: {msg}")),
        other => other,
    }
}

/// Runs the expanding-window evaluation. Series run in parallel; the report
/// is assembled in a fixed order, so output is identical across runs.
pub fn run_backtest(data: &ForecastDataset, cfg: &BacktestConfig) -> Result<BacktestOutcome> {
    cfg.validate(data)?;
    let origins = data.origins();
    let out_of_sample = &origins[cfg.initial_in_sample..];
    let series = data.series();
    info!("backtest: {} series, {} out-of-sample origins", series.len(), out_of_sample.len());
    let outcomes = series
        .par_iter()
        .map(|s| run_series(data, cfg, s, out_of_sample))
        .collect::<Result<Vec<_>>>()?;

    let mut counts = RunCounts { series: series.len(), out_of_sample_origins: out_of_sample.len(), ..Default::default() };
    let mut by_method: BTreeMap<String, BTreeMap<String, ScoreSet>> = BTreeMap::new();
    for (s, o) in series.iter().zip(outcomes) {
        counts.cells_scored += o.counts.cells_scored;
        counts.skipped_missing_truth += o.counts.skipped_missing_truth;
        counts.skipped_no_teams += o.counts.skipped_no_teams;
        counts.degenerate_forecasts_dropped += o.counts.degenerate_forecasts_dropped;
        counts.fits_without_history += o.counts.fits_without_history;
        for (m, set) in o.scores {
            by_method.entry(m).or_default().insert(s.clone(), set);
        }
    }
    let series_scores = SeriesScores {
        methods: cfg
            .methods
            .iter()
            .map(|m| (m.name.clone(), by_method.remove(&m.name).unwrap_or_default()))
            .collect(),
    };
    let mut groups: Vec<(String, Vec<String>)> = vec![(ALL_GROUP.to_string(), series.clone())];
    groups.extend(cfg.groups.iter().map(|(k, v)| (k.clone(), v.clone())));
    let report = group_summary(&series_scores, &groups, &cfg.benchmark)?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        counts,
    };
    Ok(BacktestOutcome { report, series_scores, manifest })
}

const METRICS: [(&str, fn(&ScoreSet) -> f64); 5] = [
    ("mqs", |s| s.mqs),
    ("interval_score_95", |s| s.interval_score_95),
    ("interval_score_50", |s| s.interval_score_50),
    ("coverage_95", |s| s.coverage_95),
    ("coverage_50", |s| s.coverage_50),
];

/// Group rows: every metric averaged over the group's series, and skill
/// scores for the three accuracy metrics against `benchmark`. Series a
/// method never scored are left out of its rows.
pub fn group_summary(scores: &SeriesScores, groups: &[(String, Vec<String>)], benchmark: &str) -> Result<ScoreReport> {
    let bench = scores
        .get(benchmark)
        .ok_or_else(|| Error::invalid(format!("unknown benchmark method `{benchmark}`")))?;
    let known: BTreeSet<&String> = scores.methods.iter().flat_map(|(_, s)| s.keys()).collect();
    for (label, members) in groups {
        if let Some(s) = members.iter().find(|s| !known.contains(s)) {
            return Err(Error::invalid(format!("group `{label}` names unscored series `{s}`")));
        }
    }
    let mut report = ScoreReport::default();
    for (method, per_series) in &scores.methods {
        for (label, members) in groups {
            let sets: Vec<ScoreSet> = members.iter().filter_map(|s| per_series.get(s).copied()).collect();
            let Some(mean) = ScoreSet::mean(&sets) else { continue };
            for (name, f) in METRICS {
                report.push(method, label, name, f(&mean));
            }
            for (name, f) in &METRICS[..3] {
                let (m, b): (Vec<f64>, Vec<f64>) = members
                    .iter()
                    .filter_map(|s| Some((f(per_series.get(s)?), f(bench.get(s)?))))
                    .unzip();
                let skill = skill_score(&m, &b).unwrap_or_else(|e| {
                    warn!("{method}/{label}: no skill score for {name}: {e}");
                    f64::NAN
                });
                report.push(method, label, &format!("skill_{name}"), skill);
            }
        }
    }
    Ok(report)
}

/// Three-series Gaussian panel with a ragged team set, used by the CLI
/// smoke tests and the acceptance suite.
pub fn bundled_fixture() -> ForecastDataset {
    let mut spec = SyntheticSpec::new(vec![-0.5, 0.0, 0.3, 0.8], vec![1.0, 1.2, 0.6, 1.5], 0.0, 1.0, 20_211_023);
    spec.team_names = ["alpha", "bravo", "charlie", "delta"].map(String::from).to_vec();
    spec.series = [("A", 100.0, 10.0), ("B", 50.0, 5.0), ("C", 20.0, 2.0)]
        .map(|(id, level, scale)| SyntheticSeries { id: id.into(), level, scale })
        .to_vec();
    let mut data = generate_synthetic(&spec, 16, 4).expect("fixture spec is valid");
    // delta joins series B late, so its weight starts on the fallback.
    let origins = data.origins();
    for (key, cell) in data.cells.iter_mut() {
        if key.series == "B" && key.origin < origins[8] {
            cell.forecasts.remove("delta");
        }
    }
    data
}

/// Config exercising every method family on [`bundled_fixture`].
pub fn bundled_config() -> BacktestConfig {
    let methods = vec![
        NamedMethod::new("horizontal", Method::Horizontal { weighted: false }),
        NamedMethod::new("vertical", Method::Vertical { weighted: false }),
        NamedMethod::new("angular", Method::Angular { weighted: false, theta_deg: None }),
        NamedMethod::new("horizontal_weighted", Method::Horizontal { weighted: true }),
        NamedMethod::new("vertical_weighted", Method::Vertical { weighted: true }),
        NamedMethod::new("angular_weighted", Method::Angular { weighted: true, theta_deg: None }),
        NamedMethod::new("switching", Method::Switching { weighted: false }),
        NamedMethod::new("median", Method::Median { direction: Direction::Vertical }),
        NamedMethod::new(
            "beta_pool",
            Method::BetaPool { weighted: false, grid_a: vec![0.5, 1.0, 2.0], grid_b: vec![0.5, 1.0, 2.0] },
        ),
        NamedMethod::new(
            "trimmed_exterior",
            Method::Trimmed { trim: TrimKind::Exterior, direction: PoolDirection::Horizontal, grid: vec![0.0, 0.5] },
        ),
        NamedMethod::new(
            "recalibrated_vertical",
            Method::Recalibrated { weighted: false, direction: PoolDirection::Vertical, grid: vec![0.5, 1.0, 1.5] },
        ),
        NamedMethod::new(
            "secondary_vertical",
            Method::Secondary { weighted: false, direction: PoolDirection::Vertical, grid: vec![0.0, 0.25, 0.5, 0.75, 1.0] },
        ),
    ];
    let mut cfg = BacktestConfig::new(8, methods, "horizontal");
    cfg.groups.insert("large".into(), vec!["A".into()]);
    cfg.groups.insert("small".into(), vec!["B".into(), "C".into()]);
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{gaussian_forecast, Cell, CellKey};

    fn set(mqs: f64) -> ScoreSet {
        ScoreSet { mqs, interval_score_95: 2.0 * mqs, interval_score_50: mqs, coverage_95: 0.9, coverage_50: 0.5 }
    }

    #[test]
    fn config_round_trip_and_defaults() {
        let cfg = bundled_config();
        let back = BacktestConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        let minimal = r#"{"initial_in_sample": 3, "benchmark": "h",
            "methods": [{"name": "h", "kind": "horizontal"},
                        {"name": "a", "kind": "angular", "weighted": true}]}"#;
        let cfg = BacktestConfig::from_json(minimal).unwrap();
        assert_eq!(cfg.levels.len(), 23);
        assert_eq!(cfg.theta_candidates.len(), 91);
        assert_eq!(cfg.methods[1].method, Method::Angular { weighted: true, theta_deg: None });
    }

    #[test]
    fn validation_lists_every_problem() {
        let data = bundled_fixture();
        let mut cfg = bundled_config();
        cfg.initial_in_sample = 16;
        cfg.benchmark = "nope".into();
        cfg.methods.push(NamedMethod::new("angular", Method::Angular { weighted: false, theta_deg: Some(120.0) }));
        cfg.groups.insert("ghost".into(), vec!["Z".into()]);
        match cfg.validate(&data) {
            Err(Error::Config(problems)) => {
                assert_eq!(problems.len(), 5, "{problems:?}");
                assert!(problems[0].contains("initial_in_sample"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn group_summary_hand_example() {
        let mut bench = BTreeMap::new();
        let mut other = BTreeMap::new();
        for (s, b, m) in [("x", 2.0, 1.0), ("y", 4.0, 8.0), ("z", 1.0, 0.9)] {
            bench.insert(s.to_string(), set(b));
            other.insert(s.to_string(), set(m));
        }
        let scores = SeriesScores { methods: vec![("bench".into(), bench), ("m".into(), other)] };
        let groups = vec![
            ("all".to_string(), vec!["x".to_string(), "y".to_string(), "z".to_string()]),
            ("pair".to_string(), vec!["x".to_string(), "y".to_string()]),
        ];
        let r = group_summary(&scores, &groups, "bench").unwrap();
        assert_eq!(r.get("bench", "all", "skill_mqs"), Some(0.0));
        // ratios 0.5, 2, 0.9 -> geometric mean 0.9^(1/3)
        let expected = 100.0 * (1.0 - 0.9f64.powf(1.0 / 3.0));
        assert!((r.get("m", "all", "skill_mqs").unwrap() - expected).abs() < 1e-12);
        assert!(r.get("m", "pair", "skill_mqs").unwrap().abs() < 1e-12);
        assert!((r.get("m", "all", "mqs").unwrap() - 9.9 / 3.0).abs() < 1e-12);
        assert_eq!(r.get("m", "pair", "mqs"), Some(4.5));
        let bad = vec![("g".to_string(), vec!["w".to_string()])];
        assert!(group_summary(&scores, &bad, "bench").is_err());
        assert!(group_summary(&scores, &groups, "missing").is_err());
    }

    #[test]
    fn single_group_equals_overall() {
        let mut bench = BTreeMap::new();
        bench.insert("x".to_string(), set(2.0));
        bench.insert("y".to_string(), set(3.0));
        let scores = SeriesScores { methods: vec![("b".into(), bench)] };
        let all = vec!["x".to_string(), "y".to_string()];
        let r = group_summary(&scores, &[("all".into(), all.clone()), ("g".into(), all)], "b").unwrap();
        for m in ["mqs", "coverage_95", "skill_mqs"] {
            assert_eq!(r.get("b", "all", m), r.get("b", "g", m));
        }
    }

    fn one_team_panel() -> ForecastDataset {
        let mut data = ForecastDataset::default();
        let start = NaiveDate::from_ymd_opt(2021, 1, 2).unwrap();
        for o in 0..8u64 {
            let origin = start + chrono::Days::new(7 * o);
            for h in 1..=2u32 {
                let qf = gaussian_forecast(50.0 + o as f64, 5.0, &HUB_LEVELS).unwrap();
                let target_date = origin + chrono::Days::new(7 * h as u64);
                let mut forecasts = BTreeMap::new();
                forecasts.insert("only".to_string(), qf);
                data.cells.insert(CellKey { series: "S".into(), origin, horizon: h }, Cell { target_date, forecasts });
            }
        }
        for t in 1..=10u64 {
            data.truth.insert(("S".into(), start + chrono::Days::new(7 * t)), 48.0 + 1.5 * t as f64);
        }
        data
    }

    #[test]
    fn single_team_methods_agree() {
        let data = one_team_panel();
        let mut cfg = bundled_config();
        cfg.initial_in_sample = 3;
        cfg.groups.clear();
        let out = run_backtest(&data, &cfg).unwrap();
        let h = out.report.get("horizontal", "all", "mqs").unwrap();
        for nm in &cfg.methods {
            let v = out.report.get(&nm.name, "all", "mqs").unwrap();
            // Recalibration and the beta pool may legitimately move away
            // from the single member.
            if matches!(nm.method, Method::Recalibrated { .. } | Method::BetaPool { .. }) {
                continue;
            }
            assert!((v - h).abs() <= 1e-9 * h, "{} differs: {v} vs {h}", nm.name);
        }
    }

    #[test]
    fn missing_truth_cells_are_counted() {
        let mut data = one_team_panel();
        // Target of the last origin's second horizon.
        let last = NaiveDate::from_ymd_opt(2021, 1, 2).unwrap() + chrono::Days::new(63);
        data.truth.remove(&("S".to_string(), last)).unwrap();
        let cfg = BacktestConfig::new(3, vec![NamedMethod::new("h", Method::Horizontal { weighted: false })], "h");
        let out = run_backtest(&data, &cfg).unwrap();
        assert_eq!(out.manifest.counts.skipped_missing_truth, 1);
        assert_eq!(out.manifest.counts.cells_scored, 9);
    }

    #[test]
    fn cached_theta_matches_direct_search() {
        let data = bundled_fixture();
        let cfg = bundled_config();
        let origin = data.origins()[10];
        let fitted = fit_parameters(&data, &cfg, "C", origin).unwrap();
        let ctx = SeriesContext::new(&data, &cfg, "C");
        let history: Vec<InSampleCell> =
            ctx.history_indices(origin).iter().filter_map(|&i| ctx.cells[i].in_sample()).collect();
        let direct = optimize_theta(&history, None, &cfg.theta_candidates, &cfg.levels).unwrap();
        assert_eq!(fitted.methods["angular"].theta_deg, Some(direct));
        let weighted = optimize_theta(&history, Some(&fitted.team_scores), &cfg.theta_candidates, &cfg.levels).unwrap();
        assert_eq!(fitted.methods["angular_weighted"].theta_deg, Some(weighted));
    }
}
