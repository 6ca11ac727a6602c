//! In-sample parameter selection by exhaustive grid search.
//!
//! Every objective here is the in-sample MQS: per cell, the MQS of the pooled
//! forecast against its observation; averaged over the horizons of each
//! origin, then over origins.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cdf::PiecewiseLinearCdf;
use crate::combine::{
    beta_pool, recalibrate, secondary_combine, trim_by_mean, Aggregator, BetaPoolParams,
    CombinationSpec, Direction, RecalibrationParams, TrimKind, Weights,
};
use crate::error::{Error, Result};
use crate::scoring::mqs;

pub const DEFAULT_MIN_PERIODS: usize = 5;

/// Integer degrees 0 through 90.
pub fn default_theta_candidates() -> Vec<f64> {
    (0..=90).map(f64::from).collect()
}

/// One past (origin, horizon) with its member forecasts and realized value.
#[derive(Debug, Clone)]
pub struct InSampleCell {
    pub origin: NaiveDate,
    pub horizon: u32,
    pub teams: Vec<String>,
    pub members: Vec<PiecewiseLinearCdf>,
    pub observation: f64,
}

/// A single team's in-sample MQS at one (origin, horizon); `None` when the
/// team did not forecast that cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InSampleRecord {
    pub team: String,
    pub origin: NaiveDate,
    pub horizon: u32,
    pub mqs: Option<f64>,
}

impl InSampleRecord {
    pub fn new(team: impl Into<String>, origin: NaiveDate, horizon: u32, mqs: Option<f64>) -> Result<Self> {
        if mqs.is_some_and(|m| !(m.is_finite() && m >= 0.0)) {
            return Err(Error::invalid("in-sample MQS must be finite and nonnegative"));
        }
        Ok(InSampleRecord { team: team.into(), origin, horizon, mqs })
    }
}

/// Mean over origins of the per-origin mean over horizons.
pub fn average_by_origin<I>(values: I) -> Option<f64>
where
    I: IntoIterator<Item = (NaiveDate, f64)>,
{
    let mut by_origin: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for (o, v) in values {
        let e = by_origin.entry(o).or_default();
        e.0 += v;
        e.1 += 1;
    }
    if by_origin.is_empty() {
        return None;
    }
    let n = by_origin.len() as f64;
    Some(by_origin.values().map(|(s, c)| s / *c as f64).sum::<f64>() / n)
}

/// Per-team in-sample performance summary: mean MQS and number of origins
/// with at least one scored forecast.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TeamScores {
    scores: BTreeMap<String, (f64, usize)>,
    min_periods: usize,
}

impl TeamScores {
    pub fn from_records(records: &[InSampleRecord], min_periods: usize) -> Self {
        let mut per_team: BTreeMap<&str, Vec<(NaiveDate, f64)>> = BTreeMap::new();
        for r in records {
            let e = per_team.entry(&r.team).or_default();
            if let Some(m) = r.mqs {
                e.push((r.origin, m));
            }
        }
        let scores = per_team
            .into_iter()
            .filter_map(|(team, vals)| {
                let periods = vals.iter().map(|v| v.0).collect::<std::collections::BTreeSet<_>>().len();
                average_by_origin(vals).map(|m| (team.to_string(), (m, periods)))
            })
            .collect();
        TeamScores { scores, min_periods }
    }

    pub fn min_periods(&self) -> usize {
        self.min_periods
    }

    /// Mean in-sample MQS and period count for `team`, if it has any.
    pub fn get(&self, team: &str) -> Option<(f64, usize)> {
        self.scores.get(team).copied()
    }

    /// MQS used for weighting each of `teams` in a combination. Teams short
    /// of `min_periods` take the mean over the qualified teams in the same
    /// combination; `None` when no team qualifies.
    pub fn effective_scores(&self, teams: &[String]) -> Option<Vec<f64>> {
        let qualified: Vec<Option<f64>> = teams
            .iter()
            .map(|t| self.get(t).filter(|&(_, n)| n >= self.min_periods).map(|(m, _)| m))
            .collect();
        let known: Vec<f64> = qualified.iter().flatten().copied().collect();
        if known.is_empty() {
            return None;
        }
        let fallback = known.iter().sum::<f64>() / known.len() as f64;
        Some(qualified.into_iter().map(|m| m.unwrap_or(fallback)).collect())
    }

    /// Inverse-MQS weights for `teams`, in the given order. Equal weights
    /// when no team has enough history; teams with zero MQS share all the
    /// weight when present.
    pub fn weights_for(&self, teams: &[String]) -> Result<Weights> {
        if teams.is_empty() {
            return Err(Error::invalid("no teams to weight"));
        }
        let Some(scores) = self.effective_scores(teams) else {
            return Ok(Weights::equal(teams.len()));
        };
        if scores.iter().any(|&m| m == 0.0) {
            return Weights::normalized(scores.iter().map(|&m| if m == 0.0 { 1.0 } else { 0.0 }).collect());
        }
        Weights::normalized(scores.iter().map(|m| 1.0 / m).collect())
    }
}

/// Inverse-MQS weights for every team appearing in `records`, sorted by
/// team name.
pub fn estimate_weights(records: &[InSampleRecord], min_periods: usize) -> Result<Vec<(String, f64)>> {
    let mut teams: Vec<String> = records.iter().map(|r| r.team.clone()).collect();
    teams.sort();
    teams.dedup();
    let w = TeamScores::from_records(records, min_periods).weights_for(&teams)?;
    Ok(teams.into_iter().zip(w.as_slice().iter().copied()).collect())
}

fn cell_aggregator(cell: &InSampleCell, scores: Option<&TeamScores>) -> Result<Aggregator> {
    Ok(match scores {
        Some(s) => Aggregator::Weighted { weights: s.weights_for(&cell.teams)? },
        None => Aggregator::Mean,
    })
}

fn cell_weights(cell: &InSampleCell, scores: Option<&TeamScores>) -> Result<Option<Weights>> {
    scores.map(|s| s.weights_for(&cell.teams)).transpose()
}

/// Mean or inverse-MQS-weighted pool of one cell's members.
pub fn pool_cell(cell: &InSampleCell, direction: Direction, scores: Option<&TeamScores>) -> Result<PiecewiseLinearCdf> {
    CombinationSpec::new(direction, cell_aggregator(cell, scores)?).combine(&cell.members)
}

/// In-sample MQS of the forecasts produced by `forecast` on each cell.
pub fn in_sample_mqs<F>(history: &[InSampleCell], levels: &[f64], forecast: F) -> Result<f64>
where
    F: Fn(&InSampleCell) -> Result<PiecewiseLinearCdf>,
{
    let scored = history
        .iter()
        .map(|c| Ok((c.origin, mqs(&forecast(c)?, c.observation, levels))))
        .collect::<Result<Vec<_>>>()?;
    average_by_origin(scored).ok_or_else(|| Error::invalid("empty in-sample history"))
}

/// Relative band within which two objective values count as tied, so that
/// round-off between algebraically equal pools cannot pick the winner.
pub const TIE_TOLERANCE: f64 = 1e-12;

// Candidates whose score is within the tie band of the best finite one;
// every candidate when none is finite.
fn near_best<T: Copy>(scored: &[(T, f64)]) -> Vec<T> {
    let best = scored.iter().map(|s| s.1).filter(|s| s.is_finite()).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return scored.iter().map(|s| s.0).collect();
    }
    let band = best + TIE_TOLERANCE * best.abs().max(1.0);
    scored.iter().filter(|s| s.1 <= band).map(|s| s.0).collect()
}

/// Smallest parameter among the best-scoring `(parameter, score)` pairs.
pub fn argmin_smallest(scored: &[(f64, f64)]) -> Option<f64> {
    near_best(scored).into_iter().min_by(f64::total_cmp)
}

/// Grid argmin of `objective`; ties go to the smallest grid value. Grid
/// points are evaluated in parallel and reduced in a fixed order.
pub fn grid_argmin<F>(grid: &[f64], objective: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if grid.is_empty() {
        return Err(Error::invalid("empty parameter grid"));
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::invalid("parameter grid must be finite"));
    }
    let scored = grid
        .par_iter()
        .map(|&g| objective(g).map(|s| (g, s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmin_smallest(&scored).expect("grid is nonempty"))
}

/// Angle with the smallest in-sample MQS of the (possibly weighted) angular
/// pool; ties go to the smallest angle. Weights, when given, are held fixed.
pub fn optimize_theta(
    history: &[InSampleCell],
    scores: Option<&TeamScores>,
    candidates: &[f64],
    levels: &[f64],
) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::invalid("empty in-sample history"));
    }
    for &t in candidates {
        crate::cdf::check_angle(t)?;
    }
    grid_argmin(candidates, |theta| {
        in_sample_mqs(history, levels, |c| pool_cell(c, Direction::Angular { theta_deg: theta }, scores))
    })
}

/// Per-cell MQS of the angular pool at every candidate angle.
pub fn theta_profile(
    cell: &InSampleCell,
    scores: Option<&TeamScores>,
    candidates: &[f64],
    levels: &[f64],
) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|&theta| Ok(mqs(&pool_cell(cell, Direction::Angular { theta_deg: theta }, scores)?, cell.observation, levels)))
        .collect()
}

/// Scalar method parameters tuned on in-sample MQS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "parameter", rename_all = "snake_case")]
pub enum ScalarParameter {
    /// Fraction of members trimmed (by mean) before a mean pool.
    TrimFraction { trim: TrimKind, direction: Direction },
    /// Recalibration exponent applied to a mean or weighted pool.
    Gamma { direction: Direction },
    /// Weight on the horizontal pool when pooling it with the vertical pool.
    SecondaryWeight { direction: Direction },
}

/// Mean pool of the members kept by mean-based trimming. When the fraction
/// cannot be applied to this many members (interior trimming that keeps
/// nobody), the untrimmed mean pool is used.
pub fn trimmed_pool(
    members: &[PiecewiseLinearCdf],
    trim: TrimKind,
    fraction: f64,
    direction: Direction,
) -> Result<PiecewiseLinearCdf> {
    let spec = |m: &[PiecewiseLinearCdf]| CombinationSpec::new(direction, Aggregator::Mean).combine(m);
    match trim_by_mean(members, trim, fraction) {
        Ok(kept) => spec(&kept),
        Err(Error::InvalidFraction { .. }) if (0.0..1.0).contains(&fraction) => spec(members),
        Err(e) => Err(e),
    }
}

/// Builds the forecast a scalar parameter value implies for one cell.
pub fn scalar_forecast(
    cell: &InSampleCell,
    parameter: ScalarParameter,
    scores: Option<&TeamScores>,
    value: f64,
) -> Result<PiecewiseLinearCdf> {
    match parameter {
        ScalarParameter::TrimFraction { trim, direction } => trimmed_pool(&cell.members, trim, value, direction),
        ScalarParameter::Gamma { direction } => {
            recalibrate(&pool_cell(cell, direction, scores)?, &RecalibrationParams::hub(value)?)
        }
        ScalarParameter::SecondaryWeight { direction } => {
            let h = pool_cell(cell, Direction::Horizontal, scores)?;
            let v = pool_cell(cell, Direction::Vertical, scores)?;
            secondary_combine(&h, &v, value, direction)
        }
    }
}

/// Grid argmin of in-sample MQS over one scalar parameter; ties go to the
/// smallest value.
pub fn optimize_scalar(
    history: &[InSampleCell],
    parameter: ScalarParameter,
    scores: Option<&TeamScores>,
    grid: &[f64],
    levels: &[f64],
) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::invalid("empty in-sample history"));
    }
    grid_argmin(grid, |v| in_sample_mqs(history, levels, |c| scalar_forecast(c, parameter, scores, v)))
}

/// Joint grid search for the beta-pool parameters. Ties go to the pair
/// closest to (1, 1), then to the lexicographically smallest.
pub fn optimize_beta(
    history: &[InSampleCell],
    scores: Option<&TeamScores>,
    grid_a: &[f64],
    grid_b: &[f64],
    levels: &[f64],
) -> Result<BetaPoolParams> {
    if history.is_empty() {
        return Err(Error::invalid("empty in-sample history"));
    }
    if grid_a.is_empty() || grid_b.is_empty() {
        return Err(Error::invalid("empty beta parameter grid"));
    }
    let pairs: Vec<BetaPoolParams> = grid_a
        .iter()
        .flat_map(|&a| grid_b.iter().map(move |&b| BetaPoolParams::new(a, b)))
        .collect::<Result<_>>()?;
    let scored = pairs
        .par_iter()
        .map(|&p| {
            in_sample_mqs(history, levels, |c| beta_pool(&c.members, cell_weights(c, scores)?.as_ref(), p))
                .map(|s| (p, s))
        })
        .collect::<Result<Vec<_>>>()?;
    let dist = |p: &BetaPoolParams| (p.a() - 1.0).hypot(p.b() - 1.0);
    Ok(near_best(&scored)
        .into_iter()
        .min_by(|p, q| {
            dist(p)
                .total_cmp(&dist(q))
                .then_with(|| p.a().total_cmp(&q.a()))
                .then_with(|| p.b().total_cmp(&q.b()))
        })
        .expect("grid is nonempty"))
}

/// In-sample MQS of the horizontal and vertical pools, for switching.
pub fn switching_scores(history: &[InSampleCell], scores: Option<&TeamScores>, levels: &[f64]) -> Result<(f64, f64)> {
    Ok((
        in_sample_mqs(history, levels, |c| pool_cell(c, Direction::Horizontal, scores))?,
        in_sample_mqs(history, levels, |c| pool_cell(c, Direction::Vertical, scores))?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdf::HUB_LEVELS;

    fn day(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 1, n).unwrap()
    }

    fn uniform(a: f64, b: f64) -> PiecewiseLinearCdf {
        PiecewiseLinearCdf::new(vec![(a, 0.0), (b, 1.0)]).unwrap()
    }

    fn cell(origin: u32, members: Vec<PiecewiseLinearCdf>, obs: f64) -> InSampleCell {
        let teams = (0..members.len()).map(|i| format!("t{i}")).collect();
        InSampleCell { origin: day(origin), horizon: 1, teams, members, observation: obs }
    }

    fn records(team: &str, mqs: &[f64]) -> Vec<InSampleRecord> {
        mqs.iter()
            .enumerate()
            .map(|(i, &m)| InSampleRecord::new(team, day(i as u32 + 1), 1, Some(m)).unwrap())
            .collect()
    }

    #[test]
    fn inverse_mqs_weights() {
        let mut r = records("a", &[1.0; 5]);
        r.extend(records("b", &[2.0; 5]));
        r.extend(records("c", &[4.0; 5]));
        let w = estimate_weights(&r, DEFAULT_MIN_PERIODS).unwrap();
        let values: Vec<f64> = w.iter().map(|x| x.1).collect();
        assert_eq!(values, vec![4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]);
    }

    #[test]
    fn short_history_takes_mean_of_others() {
        let mut r = records("a", &[2.0; 6]);
        r.extend(records("b", &[4.0; 5]));
        r.extend(records("c", &[0.5; 3]));
        let scores = TeamScores::from_records(&r, 5);
        let teams: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        assert_eq!(scores.effective_scores(&teams).unwrap(), vec![2.0, 4.0, 3.0]);
        let w = scores.weights_for(&teams).unwrap();
        let total = 0.5 + 0.25 + 1.0 / 3.0;
        assert!((w.as_slice()[2] - (1.0 / 3.0) / total).abs() < 1e-15);
    }

    #[test]
    fn weight_fallbacks() {
        let w = estimate_weights(&records("solo", &[3.0; 2]), 5).unwrap();
        assert_eq!(w, vec![("solo".to_string(), 1.0)]);
        let mut r = records("a", &[1.0; 2]);
        r.extend(records("b", &[9.0; 2]));
        let w = estimate_weights(&r, 5).unwrap();
        assert_eq!(w[0].1, 0.5);
        let mut r = records("a", &[0.0; 5]);
        r.extend(records("b", &[1.0; 5]));
        assert_eq!(estimate_weights(&r, 5).unwrap()[0].1, 1.0);
    }

    #[test]
    fn weights_invariant_to_common_scale() {
        let mut r = records("a", &[1.5; 5]);
        r.extend(records("b", &[2.5; 5]));
        let scaled: Vec<InSampleRecord> =
            r.iter().map(|x| InSampleRecord { mqs: x.mqs.map(|m| m * 7.0), ..x.clone() }).collect();
        let (w1, w2) = (estimate_weights(&r, 5).unwrap(), estimate_weights(&scaled, 5).unwrap());
        for (a, b) in w1.iter().zip(&w2) {
            assert!((a.1 - b.1).abs() < 1e-15);
        }
    }

    #[test]
    fn record_rejects_bad_mqs() {
        assert!(InSampleRecord::new("a", day(1), 1, Some(f64::NAN)).is_err());
        assert!(InSampleRecord::new("a", day(1), 1, Some(-1.0)).is_err());
        assert!(InSampleRecord::new("a", day(1), 1, None).is_ok());
    }

    #[test]
    fn horizon_then_origin_averaging() {
        let v = [(day(1), 1.0), (day(1), 3.0), (day(2), 5.0)];
        assert_eq!(average_by_origin(v), Some(3.5));
        assert_eq!(average_by_origin(Vec::new()), None);
    }

    // Two identical members: every pool is the member itself, so the
    // objective is flat and the smallest angle wins.
    #[test]
    fn theta_ties_go_to_smallest() {
        let h = vec![cell(1, vec![uniform(0.0, 1.0), uniform(0.0, 1.0)], 0.3)];
        assert_eq!(optimize_theta(&h, None, &default_theta_candidates(), &HUB_LEVELS).unwrap(), 0.0);
        assert_eq!(optimize_theta(&h, None, &[37.0], &HUB_LEVELS).unwrap(), 37.0);
        assert!(optimize_theta(&[], None, &[1.0], &HUB_LEVELS).is_err());
        assert!(matches!(optimize_theta(&h, None, &[91.0], &HUB_LEVELS), Err(Error::InvalidAngle(_))));
    }

    // Observations spread like the vertical mixture of two distant members
    // favour steep angles; observations at the centre favour the horizontal
    // pool, which puts all its mass there.
    #[test]
    fn theta_extremes() {
        let members = || vec![uniform(-3.0, -1.0), uniform(1.0, 3.0)];
        let centre: Vec<InSampleCell> = (1..=4).map(|o| cell(o, members(), 0.0)).collect();
        assert_eq!(optimize_theta(&centre, None, &default_theta_candidates(), &HUB_LEVELS).unwrap(), 0.0);
        let spread: Vec<InSampleCell> =
            [-2.5, 2.5, -1.5, 1.5, -2.0, 2.0].iter().enumerate().map(|(i, &x)| cell(i as u32 + 1, members(), x)).collect();
        assert_eq!(optimize_theta(&spread, None, &default_theta_candidates(), &HUB_LEVELS).unwrap(), 90.0);
    }

    #[test]
    fn theta_matches_brute_force() {
        let members = || vec![uniform(-1.0, 0.5), uniform(0.0, 2.0), uniform(0.2, 0.6)];
        let obs = [0.1, 1.4, -0.6, 0.9, 0.3];
        let h: Vec<InSampleCell> = obs.iter().enumerate().map(|(i, &x)| cell(i as u32 + 1, members(), x)).collect();
        let grid = default_theta_candidates();
        let found = optimize_theta(&h, None, &grid, &HUB_LEVELS).unwrap();
        let mut best = (f64::INFINITY, -1.0);
        for &t in &grid {
            let total: f64 = h
                .iter()
                .map(|c| mqs(&CombinationSpec::new(Direction::Angular { theta_deg: t }, Aggregator::Mean).combine(&c.members).unwrap(), c.observation, &HUB_LEVELS))
                .sum::<f64>()
                / h.len() as f64;
            if total < best.0 {
                best = (total, t);
            }
        }
        assert_eq!(found, best.1);
        let profile = theta_profile(&h[0], None, &grid, &HUB_LEVELS).unwrap();
        assert_eq!(profile.len(), 91);
    }

    #[test]
    fn grid_argmin_properties() {
        assert_eq!(grid_argmin(&[3.0, 1.0, 2.0], |_| Ok(5.0)).unwrap(), 1.0);
        assert_eq!(grid_argmin(&[3.0, 1.0, 2.0], |g| Ok((g - 2.2).abs())).unwrap(), 2.0);
        assert_eq!(grid_argmin(&[0.0, 1.0], |g| Ok(if g == 0.0 { f64::NAN } else { 1.0 })).unwrap(), 1.0);
        assert!(grid_argmin(&[], |_| Ok(0.0)).is_err());
        assert!(grid_argmin(&[f64::NAN], |_| Ok(0.0)).is_err());
    }

    #[test]
    fn secondary_weight_prefers_perfect_horizontal() {
        let members = || vec![uniform(-3.0, -1.0), uniform(1.0, 3.0)];
        let h: Vec<InSampleCell> = (1..=3).map(|o| cell(o, members(), 0.0)).collect();
        let param = ScalarParameter::SecondaryWeight { direction: Direction::Vertical };
        let grid = [0.0, 0.25, 0.5, 0.75, 1.0];
        assert_eq!(optimize_scalar(&h, param, None, &grid, &HUB_LEVELS).unwrap(), 1.0);
    }

    #[test]
    fn gamma_on_calibrated_history_is_identity() {
        let n = 200;
        let h: Vec<InSampleCell> = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) / n as f64;
                InSampleCell { origin: day(1) + chrono::Days::new(i), horizon: 1, teams: vec!["a".into()], members: vec![uniform(0.0, 1.0)], observation: x }
            })
            .collect();
        let param = ScalarParameter::Gamma { direction: Direction::Vertical };
        assert_eq!(optimize_scalar(&h, param, None, &[0.5, 1.0, 2.0], &HUB_LEVELS).unwrap(), 1.0);
    }

    #[test]
    fn trimming_removes_outlier() {
        let members = || vec![uniform(-1.0, 1.0), uniform(-1.1, 0.9), uniform(-0.9, 1.1), uniform(-1.0, 1.0), uniform(40.0, 60.0)];
        let obs = [0.2, -0.4, 0.7, -0.1, 0.0, 0.5];
        let h: Vec<InSampleCell> = obs.iter().enumerate().map(|(i, &x)| cell(i as u32 + 1, members(), x)).collect();
        let param = ScalarParameter::TrimFraction { trim: TrimKind::Exterior, direction: Direction::Horizontal };
        let grid = [0.0, 0.2, 0.4];
        let found = optimize_scalar(&h, param, None, &grid, &HUB_LEVELS).unwrap();
        let brute = grid
            .iter()
            .map(|&g| (g, in_sample_mqs(&h, &HUB_LEVELS, |c| scalar_forecast(c, param, None, g)).unwrap()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
            .unwrap()
            .0;
        assert_eq!(found, brute);
        assert!(found == 0.2 || found == 0.4);
    }

    #[test]
    fn interior_trim_falls_back_when_nothing_kept() {
        let m = vec![uniform(0.0, 1.0), uniform(1.0, 2.0)];
        let plain = CombinationSpec::new(Direction::Vertical, Aggregator::Mean).combine(&m).unwrap();
        assert_eq!(trimmed_pool(&m, TrimKind::Interior, 0.2, Direction::Vertical).unwrap(), plain);
        assert!(trimmed_pool(&m, TrimKind::Interior, 1.5, Direction::Vertical).is_err());
    }

    #[test]
    fn beta_grid_search() {
        let h: Vec<InSampleCell> = (0..40)
            .map(|i| {
                let x = (i as f64 + 0.5) / 40.0;
                InSampleCell { origin: day(1) + chrono::Days::new(i), horizon: 1, teams: vec!["a".into()], members: vec![uniform(0.0, 1.0)], observation: x }
            })
            .collect();
        let p = optimize_beta(&h, None, &[0.5, 1.0, 2.0], &[0.5, 1.0, 2.0], &HUB_LEVELS).unwrap();
        assert_eq!((p.a(), p.b()), (1.0, 1.0));
        let p = optimize_beta(&h, None, &[3.0], &[0.5], &HUB_LEVELS).unwrap();
        assert_eq!((p.a(), p.b()), (3.0, 0.5));
        assert!(optimize_beta(&h, None, &[], &[1.0], &HUB_LEVELS).is_err());

        // Wide mixture of two members, truth concentrated between them.
        let wide: Vec<InSampleCell> = (0..30)
            .map(|i| {
                let x = -0.3 + 0.6 * (i as f64 + 0.5) / 30.0;
                InSampleCell { origin: day(1) + chrono::Days::new(i), horizon: 1, teams: vec!["a".into(), "b".into()], members: vec![uniform(-1.5, 0.5), uniform(-0.5, 1.5)], observation: x }
            })
            .collect();
        let grid = [0.5, 1.0, 2.0, 4.0];
        let p = optimize_beta(&wide, None, &grid, &grid, &HUB_LEVELS).unwrap();
        assert_eq!(p.a(), p.b());
        assert!(p.a() > 1.0);
    }

    #[test]
    fn switching_scores_order() {
        let members = || vec![uniform(-3.0, -1.0), uniform(1.0, 3.0)];
        let h: Vec<InSampleCell> = (1..=3).map(|o| cell(o, members(), 0.0)).collect();
        let (sh, sv) = switching_scores(&h, None, &HUB_LEVELS).unwrap();
        assert!(sh < sv);
    }
}
