//! Pooling of piecewise-linear CDFs.
//!
//! Vertical pooling aggregates probabilities at fixed outcome values,
//! horizontal pooling aggregates quantiles at fixed probability levels, and
//! angular pooling aggregates the points where a family of lines at angle
//! `theta` cuts the member CDFs. Mean, weighted and median pools are exact on
//! the piecewise-linear representation; the grid route reproduces the
//! line-by-line construction and serves as a cross-check.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::cdf::{
    check_angle, cot_deg, intersect_scaled, limits, shift_quantiles, PiecewiseLinearCdf,
    ScaledFrame, HUB_LEVELS,
};
use crate::error::{Error, Result};

pub const DEFAULT_GRID_POINTS: usize = 1001;

/// Nonnegative combining weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidWeights("weights must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Weights(weights))
    }

    pub fn equal(k: usize) -> Self {
        Weights(vec![1.0 / k as f64; k])
    }

    /// Scales nonnegative values so they sum to one.
    pub fn normalized(raw: Vec<f64>) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0 && sum.is_finite()) {
            return Err(Error::InvalidWeights(format!("cannot normalize weights summing to {sum}")));
        }
        Self::new(raw.into_iter().map(|w| w / sum).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Weights::new(v)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Direction {
    Vertical,
    Horizontal,
    Angular { theta_deg: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrimKind {
    /// Drop the forecasts with the most extreme means.
    Exterior,
    /// Keep only the forecasts with the most extreme means.
    Interior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Aggregator {
    Mean,
    Weighted { weights: Weights },
    Median,
    Trimmed { trim: TrimKind, fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinationSpec {
    pub direction: Direction,
    pub aggregator: Aggregator,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}

impl CombinationSpec {
    pub fn new(direction: Direction, aggregator: Aggregator) -> Self {
        CombinationSpec { direction, aggregator, grid_points: DEFAULT_GRID_POINTS }
    }

    /// Pools `cdfs`. Angular mean and weighted pools use the exact link route;
    /// angular medians use the grid route.
    pub fn combine(&self, cdfs: &[PiecewiseLinearCdf]) -> Result<PiecewiseLinearCdf> {
        match self.direction {
            Direction::Vertical => vertical_combine(cdfs, &self.aggregator),
            Direction::Horizontal => horizontal_combine(cdfs, &self.aggregator),
            Direction::Angular { theta_deg } => {
                check_angle(theta_deg)?;
                if theta_deg == 0.0 {
                    return horizontal_combine(cdfs, &self.aggregator);
                }
                match &self.aggregator {
                    Aggregator::Mean => angular_combine_exact(cdfs, theta_deg, None),
                    Aggregator::Weighted { weights } => {
                        angular_combine_exact(cdfs, theta_deg, Some(weights))
                    }
                    Aggregator::Median => {
                        median_combine(cdfs, self.direction, self.grid_points)
                    }
                    Aggregator::Trimmed { trim, fraction } => {
                        let kept = trim_by_mean(cdfs, *trim, *fraction)?;
                        angular_combine_exact(&kept, theta_deg, None)
                    }
                }
            }
        }
    }
}

/// One member curve seen by the pooling engine. `by_p` selects the quantile
/// view (abscissa p, ordinate x) instead of the CDF view.
struct Curve<'a> {
    pts: &'a [(f64, f64)],
    below: f64,
    above: f64,
}

#[derive(Clone, Copy)]
enum PointAgg<'a> {
    Weighted(&'a [f64]),
    Median,
}

fn aggregate(values: &mut [f64], agg: PointAgg) -> f64 {
    match agg {
        PointAgg::Weighted(w) => values.iter().zip(w).map(|(v, w)| v * w).sum(),
        PointAgg::Median => median(values),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn curve_limits(c: &Curve, t: f64, by_p: bool) -> (f64, f64) {
    if by_p {
        limits(c.pts, t, |k| k.1, |k| k.0, c.below, c.above)
    } else {
        limits(c.pts, t, |k| k.0, |k| k.1, c.below, c.above)
    }
}

/// Pools monotone polylines exactly. Every breakpoint of every member is
/// visited, both one-sided limits are aggregated there, and for medians the
/// pairwise crossings between breakpoints are added so the order statistic
/// stays linear on each piece. Returns `(abscissa, pooled ordinate)` pairs.
fn pool_curves(curves: &[Curve], by_p: bool, agg: PointAgg) -> Vec<(f64, f64)> {
    let key = |k: &(f64, f64)| if by_p { k.1 } else { k.0 };
    let mut ts: Vec<f64> = curves.iter().flat_map(|c| c.pts.iter().map(key)).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();

    if matches!(agg, PointAgg::Median) && curves.len() > 2 {
        let mut crossings = Vec::new();
        for w in ts.windows(2) {
            let (ta, tb) = (w[0], w[1]);
            let starts: Vec<f64> = curves.iter().map(|c| curve_limits(c, ta, by_p).1).collect();
            let ends: Vec<f64> = curves.iter().map(|c| curve_limits(c, tb, by_p).0).collect();
            for i in 0..curves.len() {
                for j in i + 1..curves.len() {
                    let da = starts[i] - starts[j];
                    let db = ends[i] - ends[j];
                    if da * db < 0.0 {
                        let t = ta + (tb - ta) * da / (da - db);
                        if t > ta && t < tb {
                            crossings.push(t);
                        }
                    }
                }
            }
        }
        ts.extend(crossings);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
    }

    let mut out = Vec::with_capacity(2 * ts.len());
    let mut left = vec![0.0; curves.len()];
    let mut right = vec![0.0; curves.len()];
    for &t in &ts {
        for (i, c) in curves.iter().enumerate() {
            (left[i], right[i]) = curve_limits(c, t, by_p);
        }
        let l = aggregate(&mut left, agg);
        let r = aggregate(&mut right, agg);
        out.push((t, l));
        if r != l {
            out.push((t, r));
        }
    }
    out
}

fn check_nonempty(cdfs: &[PiecewiseLinearCdf]) -> Result<()> {
    if cdfs.is_empty() {
        Err(Error::invalid("no forecasts to combine"))
    } else {
        Ok(())
    }
}

fn check_weights(weights: &Weights, k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} forecasts",
            weights.len(),
            k
        )));
    }
    Ok(())
}

/// Resolves an aggregator into the member subset and the pointwise rule.
fn resolve<'a>(
    cdfs: &'a [PiecewiseLinearCdf],
    agg: &'a Aggregator,
) -> Result<(Vec<&'a PiecewiseLinearCdf>, Option<Vec<f64>>)> {
    check_nonempty(cdfs)?;
    Ok(match agg {
        Aggregator::Mean => (cdfs.iter().collect(), Some(Weights::equal(cdfs.len()).0)),
        Aggregator::Weighted { weights } => {
            check_weights(weights, cdfs.len())?;
            // Zero-weight members contribute nothing, not even breakpoints.
            let (members, w): (Vec<_>, Vec<_>) = cdfs
                .iter()
                .zip(weights.as_slice())
                .filter(|(_, w)| **w > 0.0)
                .map(|(c, w)| (c, *w))
                .unzip();
            (members, Some(w))
        }
        Aggregator::Median => (cdfs.iter().collect(), None),
        Aggregator::Trimmed { trim, fraction } => {
            let idx = trim_indices(cdfs, *trim, *fraction)?;
            let k = idx.len();
            (idx.into_iter().map(|i| &cdfs[i]).collect(), Some(Weights::equal(k).0))
        }
    })
}

fn point_agg(w: &Option<Vec<f64>>) -> PointAgg<'_> {
    match w {
        Some(w) => PointAgg::Weighted(w),
        None => PointAgg::Median,
    }
}

/// Linear opinion pool (and its median / trimmed variants).
pub fn vertical_combine(
    cdfs: &[PiecewiseLinearCdf],
    agg: &Aggregator,
) -> Result<PiecewiseLinearCdf> {
    let (members, w) = resolve(cdfs, agg)?;
    let curves: Vec<Curve> =
        members.iter().map(|c| Curve { pts: c.knots(), below: 0.0, above: 1.0 }).collect();
    PiecewiseLinearCdf::from_points_lossy(pool_curves(&curves, false, point_agg(&w)))
}

/// Quantile averaging (and its median / trimmed variants).
pub fn horizontal_combine(
    cdfs: &[PiecewiseLinearCdf],
    agg: &Aggregator,
) -> Result<PiecewiseLinearCdf> {
    let (members, w) = resolve(cdfs, agg)?;
    let curves: Vec<Curve> = members
        .iter()
        .map(|c| Curve { pts: c.knots(), below: c.lower(), above: c.upper() })
        .collect();
    let pooled = pool_curves(&curves, true, point_agg(&w));
    PiecewiseLinearCdf::from_points_lossy(pooled.into_iter().map(|(p, x)| (x, p)).collect())
}

/// Angular pool through the link transform: shift every member's quantile
/// function by `alpha / tan(theta)` in the unit frame, pool vertically, and
/// shift back. At 90 degrees this is the vertical pool itself.
pub fn angular_combine_exact(
    cdfs: &[PiecewiseLinearCdf],
    theta_deg: f64,
    weights: Option<&Weights>,
) -> Result<PiecewiseLinearCdf> {
    if !(theta_deg > 0.0 && theta_deg <= 90.0) {
        return Err(Error::InvalidAngle(theta_deg));
    }
    let agg = match weights {
        Some(w) => Aggregator::Weighted { weights: w.clone() },
        None => Aggregator::Mean,
    };
    if theta_deg == 90.0 {
        return vertical_combine(cdfs, &agg);
    }
    let (members, w) = resolve(cdfs, &agg)?;
    let frame = ScaledFrame::covering(members.iter().copied())?;
    let cot = cot_deg(theta_deg);
    let shifted: Vec<Vec<(f64, f64)>> =
        members.iter().map(|c| shift_quantiles(c.scaled(&frame), cot)).collect();
    let curves: Vec<Curve> =
        shifted.iter().map(|pts| Curve { pts, below: 0.0, above: 1.0 }).collect();
    let pooled = pool_curves(&curves, false, point_agg(&w));
    PiecewiseLinearCdf::from_scaled(shift_quantiles(pooled, -cot), &frame)
}

/// The line-by-line construction: `m` anchors evenly spaced inside the
/// diagonal of the unit frame, one line at angle `theta` through each (and
/// through both corners), and the member intersection points aggregated
/// coordinate by coordinate.
pub fn angular_combine_grid(
    cdfs: &[PiecewiseLinearCdf],
    theta_deg: f64,
    agg: &Aggregator,
    m: usize,
) -> Result<PiecewiseLinearCdf> {
    check_angle(theta_deg)?;
    if m == 0 {
        return Err(Error::invalid("grid needs at least one anchor"));
    }
    let (members, w) = resolve(cdfs, agg)?;
    let frame = ScaledFrame::covering(members.iter().copied())?;
    let scaled: Vec<Vec<(f64, f64)>> = members.iter().map(|c| c.scaled(&frame)).collect();
    let agg = point_agg(&w);
    let mut xs = vec![0.0; scaled.len()];
    let mut ps = vec![0.0; scaled.len()];
    // m interior anchors plus the two corners, which supply the support
    // endpoints.
    let anchors = std::iter::once(0.0)
        .chain((1..=m).map(|j| j as f64 / (m + 1) as f64))
        .chain(std::iter::once(1.0));
    let mut points: Vec<(f64, f64)> = anchors
        .map(|d| {
            for (i, knots) in scaled.iter().enumerate() {
                (xs[i], ps[i]) = intersect_scaled(knots, theta_deg, d);
            }
            (aggregate(&mut xs, agg), aggregate(&mut ps, agg))
        })
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    PiecewiseLinearCdf::from_scaled(points, &frame)
}

/// Median pool along a direction. Vertical and horizontal medians are exact;
/// medians at an interior angle use the grid route with `m` anchors.
pub fn median_combine(
    cdfs: &[PiecewiseLinearCdf],
    direction: Direction,
    m: usize,
) -> Result<PiecewiseLinearCdf> {
    match direction {
        Direction::Vertical => vertical_combine(cdfs, &Aggregator::Median),
        Direction::Horizontal => horizontal_combine(cdfs, &Aggregator::Median),
        Direction::Angular { theta_deg } => {
            check_angle(theta_deg)?;
            if theta_deg == 0.0 {
                horizontal_combine(cdfs, &Aggregator::Median)
            } else if theta_deg == 90.0 {
                vertical_combine(cdfs, &Aggregator::Median)
            } else {
                angular_combine_grid(cdfs, theta_deg, &Aggregator::Median, m)
            }
        }
    }
}

/// Indices kept after ranking members by mean. `round(fraction * k / 2)`
/// members are dropped (exterior) or kept (interior) at each end; ties keep
/// input order.
pub fn trim_indices(cdfs: &[PiecewiseLinearCdf], kind: TrimKind, fraction: f64) -> Result<Vec<usize>> {
    let k = cdfs.len();
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidFraction { fraction, k });
    }
    let means: Vec<f64> = cdfs.iter().map(PiecewiseLinearCdf::mean).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[a].total_cmp(&means[b]));
    let n = (fraction * k as f64 / 2.0).round() as usize;
    let mut kept: Vec<usize> = match kind {
        TrimKind::Exterior if 2 * n < k => order[n..k - n].to_vec(),
        TrimKind::Interior if n > 0 && 2 * n <= k => {
            order[..n].iter().chain(&order[k - n..]).copied().collect()
        }
        _ => return Err(Error::InvalidFraction { fraction, k }),
    };
    kept.sort_unstable();
    Ok(kept)
}

pub fn trim_by_mean(
    cdfs: &[PiecewiseLinearCdf],
    kind: TrimKind,
    fraction: f64,
) -> Result<Vec<PiecewiseLinearCdf>> {
    Ok(trim_indices(cdfs, kind, fraction)?.into_iter().map(|i| cdfs[i].clone()).collect())
}

/// Horizontal pool when its in-sample MQS is no worse than the vertical
/// pool's, otherwise the vertical pool.
pub fn hv_switch(
    cdfs: &[PiecewiseLinearCdf],
    mqs_horizontal: f64,
    mqs_vertical: f64,
    agg: &Aggregator,
) -> Result<PiecewiseLinearCdf> {
    if !(mqs_horizontal.is_finite() && mqs_vertical.is_finite()) {
        return Err(Error::invalid("switching needs finite in-sample scores"));
    }
    if mqs_horizontal <= mqs_vertical {
        horizontal_combine(cdfs, agg)
    } else {
        vertical_combine(cdfs, agg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct BetaPoolParams {
    a: f64,
    b: f64,
}

impl BetaPoolParams {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() {
            Ok(BetaPoolParams { a, b })
        } else {
            Err(Error::invalid(format!("beta parameters must be positive, got ({a}, {b})")))
        }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl TryFrom<(f64, f64)> for BetaPoolParams {
    type Error = Error;
    fn try_from((a, b): (f64, f64)) -> Result<Self> {
        Self::new(a, b)
    }
}

impl From<BetaPoolParams> for (f64, f64) {
    fn from(p: BetaPoolParams) -> Self {
        (p.a, p.b)
    }
}

/// Beta-transformed linear pool: the vertical pool's probabilities at each
/// of its knots passed through the regularized incomplete beta function.
pub fn beta_pool(
    cdfs: &[PiecewiseLinearCdf],
    weights: Option<&Weights>,
    params: BetaPoolParams,
) -> Result<PiecewiseLinearCdf> {
    let agg = match weights {
        Some(w) => Aggregator::Weighted { weights: w.clone() },
        None => Aggregator::Mean,
    };
    let pool = vertical_combine(cdfs, &agg)?;
    if params.a == 1.0 && params.b == 1.0 {
        return Ok(pool);
    }
    let points =
        pool.knots().iter().map(|&(x, p)| (x, beta_reg(params.a, params.b, p))).collect();
    PiecewiseLinearCdf::from_points_lossy(points)
}

/// Bin-mass power recalibration. Bins are the probability intervals between
/// consecutive `bin_edges`; each bin mass `m` becomes `m^gamma`, renormalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecalibrationParams {
    gamma: f64,
    bin_edges: Vec<f64>,
}

impl RecalibrationParams {
    pub fn new(gamma: f64, bin_edges: Vec<f64>) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("recalibration gamma must be positive, got {gamma}")));
        }
        if bin_edges.len() < 2
            || bin_edges[0] != 0.0
            || bin_edges[bin_edges.len() - 1] != 1.0
            || bin_edges.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::invalid("bin edges must increase strictly from 0 to 1"));
        }
        Ok(RecalibrationParams { gamma, bin_edges })
    }

    /// The 24 bins bounded by the Hub levels and the support ends.
    pub fn hub(gamma: f64) -> Result<Self> {
        let mut edges = Vec::with_capacity(HUB_LEVELS.len() + 2);
        edges.push(0.0);
        edges.extend(HUB_LEVELS);
        edges.push(1.0);
        Self::new(gamma, edges)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bin_edges(&self) -> &[f64] {
        &self.bin_edges
    }

    /// Edges after reweighting, aligned with `bin_edges`.
    pub fn mapped_edges(&self) -> Vec<f64> {
        let powered: Vec<f64> = self
            .bin_edges
            .windows(2)
            .map(|w| {
                let m = w[1] - w[0];
                if m == 0.0 {
                    0.0
                } else {
                    m.powf(self.gamma)
                }
            })
            .collect();
        let total: f64 = powered.iter().sum();
        let mut edges = Vec::with_capacity(self.bin_edges.len());
        let mut acc = 0.0;
        edges.push(0.0);
        for m in &powered[..powered.len() - 1] {
            acc += m / total;
            edges.push(acc);
        }
        edges.push(1.0);
        edges
    }
}

pub fn recalibrate(
    cdf: &PiecewiseLinearCdf,
    params: &RecalibrationParams,
) -> Result<PiecewiseLinearCdf> {
    if params.gamma == 1.0 {
        return Ok(cdf.clone());
    }
    let from = params.bin_edges();
    let to = params.mapped_edges();
    let map = |p: f64| {
        let j = from.partition_point(|&e| e <= p).clamp(1, from.len() - 1);
        let (e0, e1) = (from[j - 1], from[j]);
        to[j - 1] + (p - e0) / (e1 - e0) * (to[j] - to[j - 1])
    };
    let knots = cdf.knots();
    let mut points = Vec::with_capacity(knots.len() + from.len());
    points.push(knots[0]);
    for w in knots.windows(2) {
        let ((xa, pa), (xb, pb)) = (w[0], w[1]);
        for &e in from.iter().filter(|&&e| e > pa && e < pb) {
            points.push((xa + (e - pa) / (pb - pa) * (xb - xa), e));
        }
        points.push((xb, pb));
    }
    PiecewiseLinearCdf::from_points_lossy(points.into_iter().map(|(x, p)| (x, map(p))).collect())
}

/// Weighted two-member pool of a horizontal and a vertical combination.
pub fn secondary_combine(
    cdf_h: &PiecewiseLinearCdf,
    cdf_v: &PiecewiseLinearCdf,
    w: f64,
    direction: Direction,
) -> Result<PiecewiseLinearCdf> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidWeights(format!("secondary weight {w} outside [0, 1]")));
    }
    let pair = [cdf_h.clone(), cdf_v.clone()];
    let agg = Aggregator::Weighted { weights: Weights::new(vec![w, 1.0 - w])? };
    match direction {
        Direction::Vertical => vertical_combine(&pair, &agg),
        Direction::Horizontal => horizontal_combine(&pair, &agg),
        Direction::Angular { .. } => {
            Err(Error::invalid("secondary combination is vertical or horizontal"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdf::{sup_distance, BoundRule, FlatRule};
    use crate::ingest::gaussian_forecast;

    fn cdf(knots: &[(f64, f64)]) -> PiecewiseLinearCdf {
        PiecewiseLinearCdf::new(knots.to_vec()).unwrap()
    }

    fn uniform(a: f64, b: f64) -> PiecewiseLinearCdf {
        cdf(&[(a, 0.0), (b, 1.0)])
    }

    fn gaussian_pair() -> Vec<PiecewiseLinearCdf> {
        [-0.15, 0.15]
            .iter()
            .map(|&m| {
                crate::cdf::cdf_from_quantiles(
                    &gaussian_forecast(m, 0.1, &HUB_LEVELS).unwrap(),
                    BoundRule::unbounded(),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn vertical_examples() {
        let v = vertical_combine(&[uniform(0.0, 1.0), uniform(1.0, 2.0)], &Aggregator::Mean).unwrap();
        assert_eq!(v.eval(1.0, FlatRule::Midpoint), 0.5);
        assert_eq!(v.eval(0.5, FlatRule::Midpoint), 0.25);

        let g = gaussian_pair();
        let v = vertical_combine(&g, &Aggregator::Mean).unwrap();
        let (m0, m1) = (g[0].moments(), g[1].moments());
        let mu = 0.5 * (m0.mean + m1.mean);
        let mixture = 0.5 * (m0.variance + (m0.mean - mu).powi(2))
            + 0.5 * (m1.variance + (m1.mean - mu).powi(2));
        assert!((v.moments().variance - mixture).abs() < 1e-12);
        assert!((v.moments().variance - 0.0325).abs() < 2e-3);
    }

    #[test]
    fn vertical_median_of_three_values() {
        // At x = 1 the members sit at 0.2, 0.5 and 0.9.
        let a = cdf(&[(0.0, 0.0), (1.0, 0.2), (5.0, 1.0)]);
        let b = cdf(&[(0.0, 0.0), (1.0, 0.5), (5.0, 1.0)]);
        let c = cdf(&[(0.0, 0.0), (1.0, 0.9), (5.0, 1.0)]);
        let m = vertical_combine(&[a, b, c], &Aggregator::Median).unwrap();
        assert!((m.eval(1.0, FlatRule::Midpoint) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn horizontal_examples() {
        let h = horizontal_combine(&[uniform(0.0, 1.0), uniform(0.0, 3.0)], &Aggregator::Mean).unwrap();
        assert_eq!(h.knots(), &[(0.0, 0.0), (2.0, 1.0)]);

        let single = gaussian_pair().remove(0);
        let h = horizontal_combine(std::slice::from_ref(&single), &Aggregator::Mean).unwrap();
        assert_eq!(h, single);

        let g = gaussian_pair();
        let h = horizontal_combine(&g, &Aggregator::Mean).unwrap();
        let centered = crate::cdf::cdf_from_quantiles(
            &gaussian_forecast(0.0, 0.1, &HUB_LEVELS).unwrap(),
            BoundRule::unbounded(),
        )
        .unwrap();
        assert!(sup_distance(&h, &centered) < 1e-12);
    }

    #[test]
    fn angular_grid_examples() {
        let g = gaussian_pair();
        let a = angular_combine_grid(&g, 45.0, &Aggregator::Mean, 1001).unwrap();
        assert!(a.mean().abs() < 1e-3);

        let single = [g[0].clone()];
        for theta in [0.0, 30.0, 90.0] {
            let a = angular_combine_grid(&single, theta, &Aggregator::Mean, 1001).unwrap();
            assert!(sup_distance(&a, &g[0]) <= 2.0 / 1001.0, "theta {theta}");
        }

        let pair = [uniform(0.0, 1.0), uniform(1.0, 2.0)];
        let grid = angular_combine_grid(&pair, 90.0, &Aggregator::Mean, 1001).unwrap();
        let exact = vertical_combine(&pair, &Aggregator::Mean).unwrap();
        assert!(sup_distance(&grid, &exact) <= 2.0 / 1001.0);
    }

    #[test]
    fn angular_exact_examples() {
        let g = gaussian_pair();
        let exact = angular_combine_exact(&g, 45.0, None).unwrap();
        let grid = angular_combine_grid(&g, 45.0, &Aggregator::Mean, 1001).unwrap();
        assert!(sup_distance(&exact, &grid) <= 2.0 / 1001.0);
        let avg = 0.5 * (g[0].mean() + g[1].mean());
        assert!((exact.mean() - avg).abs() < 1e-12);

        let v = vertical_combine(&g, &Aggregator::Mean).unwrap();
        assert_eq!(angular_combine_exact(&g, 90.0, None).unwrap(), v);
        assert!(angular_combine_exact(&g, 0.0, None).is_err());
    }

    #[test]
    fn median_examples() {
        let set = [uniform(0.0, 1.0), uniform(0.0, 2.0), uniform(0.0, 3.0)];
        let v = median_combine(&set, Direction::Vertical, 1001).unwrap();
        assert!(sup_distance(&v, &uniform(0.0, 2.0)) < 1e-12);
        let a = median_combine(&set, Direction::Angular { theta_deg: 45.0 }, 1001).unwrap();
        assert!(sup_distance(&a, &v) <= 2.0 / 1001.0);
        let one = median_combine(&set[..1], Direction::Vertical, 1001).unwrap();
        assert_eq!(one, set[0]);
        assert!(median_combine(&[], Direction::Vertical, 1001).is_err());
    }

    #[test]
    fn median_handles_crossings() {
        // Members cross inside a segment; the median follows the middle one.
        let set = [
            cdf(&[(0.0, 0.0), (4.0, 1.0)]),
            cdf(&[(0.0, 0.0), (1.0, 0.6), (4.0, 1.0)]),
            cdf(&[(0.0, 0.0), (3.0, 0.5), (4.0, 1.0)]),
        ];
        let m = vertical_combine(&set, &Aggregator::Median).unwrap();
        for i in 0..=400 {
            let x = i as f64 / 100.0;
            let mut v: Vec<f64> = set.iter().map(|c| c.eval(x, FlatRule::Midpoint)).collect();
            v.sort_by(f64::total_cmp);
            assert!((m.eval(x, FlatRule::Midpoint) - v[1]).abs() < 1e-12, "x = {x}");
        }
    }

    fn with_means(means: &[f64]) -> Vec<PiecewiseLinearCdf> {
        means.iter().map(|&m| uniform(m - 0.5, m + 0.5)).collect()
    }

    fn kept_means(kept: &[PiecewiseLinearCdf]) -> Vec<f64> {
        kept.iter().map(|c| c.mean().round()).collect()
    }

    #[test]
    fn trimming_examples() {
        let set = with_means(&[3.0, 1.0, 5.0, 2.0, 4.0]);
        let ext = trim_by_mean(&set, TrimKind::Exterior, 0.4).unwrap();
        assert_eq!(kept_means(&ext), vec![3.0, 2.0, 4.0]);
        let int = trim_by_mean(&set, TrimKind::Interior, 0.4).unwrap();
        assert_eq!(kept_means(&int), vec![1.0, 5.0]);
        assert_eq!(trim_by_mean(&set, TrimKind::Exterior, 0.0).unwrap().len(), 5);
        assert!(matches!(
            trim_by_mean(&set[..2], TrimKind::Exterior, 0.99),
            Err(Error::InvalidFraction { .. })
        ));
        assert!(trim_by_mean(&set, TrimKind::Interior, 0.0).is_err());
        assert!(trim_by_mean(&set, TrimKind::Exterior, 1.0).is_err());
    }

    #[test]
    fn switching_examples() {
        let set = [uniform(0.0, 1.0), uniform(1.0, 3.0)];
        let h = horizontal_combine(&set, &Aggregator::Mean).unwrap();
        let v = vertical_combine(&set, &Aggregator::Mean).unwrap();
        assert_eq!(hv_switch(&set, 10.0, 12.0, &Aggregator::Mean).unwrap(), h);
        assert_eq!(hv_switch(&set, 12.0, 10.0, &Aggregator::Mean).unwrap(), v);
        assert_eq!(hv_switch(&set, 10.0, 10.0, &Aggregator::Mean).unwrap(), h);
        assert!(hv_switch(&set, f64::NAN, 10.0, &Aggregator::Mean).is_err());
    }

    #[test]
    fn beta_pool_examples() {
        let set = [uniform(0.0, 1.0), uniform(0.5, 2.0)];
        let w = Weights::new(vec![0.3, 0.7]).unwrap();
        let pool = vertical_combine(&set, &Aggregator::Weighted { weights: w.clone() }).unwrap();
        let same = beta_pool(&set, Some(&w), BetaPoolParams::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!(same, pool);

        let u = [uniform(0.0, 1.0)];
        let b = beta_pool(&u, None, BetaPoolParams::new(2.0, 2.0).unwrap()).unwrap();
        for &(x, p) in b.knots() {
            assert!((p - (3.0 * x * x - 2.0 * x.powi(3))).abs() < 1e-12);
        }
        assert!(BetaPoolParams::new(0.0, 1.0).is_err());
        let skew = beta_pool(&set, None, BetaPoolParams::new(0.3, 5.0).unwrap()).unwrap();
        assert!(skew.knots().windows(2).all(|k| k[1].1 >= k[0].1));
    }

    #[test]
    fn recalibration_examples() {
        let c = uniform(0.0, 10.0);
        assert_eq!(recalibrate(&c, &RecalibrationParams::hub(1.0).unwrap()).unwrap(), c);

        let halves = RecalibrationParams::new(2.0, vec![0.0, 0.5, 1.0]).unwrap();
        let r = recalibrate(&c, &halves).unwrap();
        assert!((r.eval(5.0, FlatRule::Midpoint) - 0.5).abs() < 1e-12);

        let uneven = RecalibrationParams::new(2.0, vec![0.0, 0.8, 1.0]).unwrap();
        let r = recalibrate(&c, &uneven).unwrap();
        // masses (0.8, 0.2) become (0.64, 0.04) / 0.68
        assert!((r.eval(8.0, FlatRule::Midpoint) - 0.64 / 0.68).abs() < 1e-12);
        assert!((r.eval(4.0, FlatRule::Midpoint) - 0.32 / 0.68).abs() < 1e-12);
        assert!(RecalibrationParams::new(0.0, vec![0.0, 1.0]).is_err());
        assert!(RecalibrationParams::new(1.0, vec![0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn secondary_examples() {
        let (h, v) = (uniform(0.0, 1.0), uniform(1.0, 2.0));
        assert_eq!(secondary_combine(&h, &v, 1.0, Direction::Vertical).unwrap(), h);
        assert_eq!(secondary_combine(&h, &v, 0.0, Direction::Horizontal).unwrap(), v);
        let mix = secondary_combine(&h, &v, 0.5, Direction::Vertical).unwrap();
        assert_eq!(mix.eval(1.0, FlatRule::Midpoint), 0.5);
        assert!(secondary_combine(&h, &v, 1.5, Direction::Vertical).is_err());
    }

    #[test]
    fn weights_validation() {
        assert!(Weights::new(vec![0.5, 0.6]).is_err());
        assert!(Weights::new(vec![-0.5, 1.5]).is_err());
        let w = Weights::normalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(w.as_slice(), &[0.25, 0.75]);
        let set = [uniform(0.0, 1.0), uniform(1.0, 2.0)];
        let bad = Aggregator::Weighted { weights: Weights::equal(3) };
        assert!(vertical_combine(&set, &bad).is_err());
        assert!(vertical_combine(&[], &Aggregator::Mean).is_err());
    }

    #[test]
    fn spec_dispatch() {
        let g = gaussian_pair();
        let spec = CombinationSpec::new(Direction::Angular { theta_deg: 0.0 }, Aggregator::Mean);
        assert_eq!(spec.combine(&g).unwrap(), horizontal_combine(&g, &Aggregator::Mean).unwrap());
        let bad = CombinationSpec::new(Direction::Angular { theta_deg: 120.0 }, Aggregator::Mean);
        assert!(matches!(bad.combine(&g), Err(Error::InvalidAngle(_))));
        let json = serde_json::to_string(&spec).unwrap();
        let back: CombinationSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
