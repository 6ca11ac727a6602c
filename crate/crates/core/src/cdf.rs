//! Piecewise-linear CDFs and the geometric primitives used by the pooling
//! routines: construction from quantile forecasts, evaluation, inversion,
//! closed-form moments, line intersection, axis scaling and the angular
//! link transform.
//!
//! A CDF is stored as an ordered list of `(x, p)` knots. Equal consecutive
//! `x` values encode a jump (point mass); equal consecutive `p` values encode
//! a flat stretch with no mass. Outside the knots the CDF is 0 to the left
//! and 1 to the right.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 23 probability levels requested by the US COVID-19 Forecast Hub.
pub const HUB_LEVELS: [f64; 23] = [
    0.01, 0.025, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7,
    0.75, 0.8, 0.85, 0.9, 0.95, 0.975, 0.99,
];

/// Values within this distance of 0 or 1 are snapped when a pooled curve is
/// turned back into a CDF.
const SNAP_EPS: f64 = 1e-12;
/// Largest backwards step tolerated (relative) before a rebuilt curve is
/// rejected as non-monotone.
const MONOTONE_TOL: f64 = 1e-9;

/// A probability in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ProbabilityLevel(f64);

impl ProbabilityLevel {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(ProbabilityLevel(value))
        } else {
            Err(Error::invalid(format!("probability level {value} outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for ProbabilityLevel {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<ProbabilityLevel> for f64 {
    fn from(level: ProbabilityLevel) -> f64 {
        level.0
    }
}

/// Quantile forecast from one forecaster for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    levels: Vec<f64>,
    quantiles: Vec<f64>,
}

impl QuantileForecast {
    pub fn new(levels: Vec<f64>, quantiles: Vec<f64>) -> Result<Self> {
        if levels.len() != quantiles.len() {
            return Err(Error::invalid(format!(
                "{} levels but {} quantiles",
                levels.len(),
                quantiles.len()
            )));
        }
        for &a in &levels {
            ProbabilityLevel::new(a)?;
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("probability levels must be strictly increasing"));
        }
        if quantiles.iter().any(|q| !q.is_finite()) {
            return Err(Error::invalid("quantiles must be finite"));
        }
        if let Some(i) = quantiles.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "crossing quantiles at levels {} and {}",
                levels[i],
                levels[i + 1]
            )));
        }
        Ok(QuantileForecast { levels, quantiles })
    }

    /// Forecast at the standard 23 Hub levels.
    pub fn hub(quantiles: Vec<f64>) -> Result<Self> {
        Self::new(HUB_LEVELS.to_vec(), quantiles)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn to_cdf(&self) -> Result<PiecewiseLinearCdf> {
        cdf_from_quantiles(self, BoundRule::default())
    }
}

/// How the outer tails are closed when a CDF is built from quantiles.
///
/// The lower bound sits one quantile gap below the lowest quantile and the
/// upper bound one gap above the highest. `floor` clips the lower bound
/// (counts cannot go below zero); it only applies when the lowest quantile
/// itself is at or above the floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundRule {
    pub floor: Option<f64>,
}

impl Default for BoundRule {
    fn default() -> Self {
        BoundRule { floor: Some(0.0) }
    }
}

impl BoundRule {
    pub fn unbounded() -> Self {
        BoundRule { floor: None }
    }
}

pub fn cdf_from_quantiles(qf: &QuantileForecast, rule: BoundRule) -> Result<PiecewiseLinearCdf> {
    let n = qf.len();
    if n < 2 {
        return Err(Error::invalid("at least two quantile levels are required"));
    }
    let (levels, q) = (qf.levels(), qf.quantiles());
    if levels[0] <= 0.0 || levels[n - 1] >= 1.0 {
        return Err(Error::invalid("levels must lie strictly inside (0, 1)"));
    }
    let mut lb = q[0] - (q[1] - q[0]);
    if let Some(floor) = rule.floor {
        if q[0] >= floor {
            lb = lb.max(floor);
        }
    }
    let ub = q[n - 1] + (q[n - 1] - q[n - 2]);
    if ub <= lb {
        return Err(Error::DegenerateSupport(q[0]));
    }
    let mut knots = Vec::with_capacity(n + 2);
    knots.push((lb, 0.0));
    knots.extend(q.iter().copied().zip(levels.iter().copied()));
    knots.push((ub, 1.0));
    PiecewiseLinearCdf::new(knots)
}

/// Which value to report where a CDF jumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlatRule {
    Lower,
    Upper,
    #[default]
    Midpoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CdfDocument", into = "CdfDocument")]
pub struct PiecewiseLinearCdf {
    knots: Vec<(f64, f64)>,
}

/// On-disk form: `{"knots": [[x, p], ...]}`.
#[derive(Serialize, Deserialize)]
struct CdfDocument {
    knots: Vec<[f64; 2]>,
}

impl TryFrom<CdfDocument> for PiecewiseLinearCdf {
    type Error = Error;
    fn try_from(doc: CdfDocument) -> Result<Self> {
        PiecewiseLinearCdf::new(doc.knots.into_iter().map(|[x, p]| (x, p)).collect())
    }
}

impl From<PiecewiseLinearCdf> for CdfDocument {
    fn from(cdf: PiecewiseLinearCdf) -> Self {
        CdfDocument { knots: cdf.knots.into_iter().map(|(x, p)| [x, p]).collect() }
    }
}

impl PiecewiseLinearCdf {
    /// Validates and normalizes a knot list.
    pub fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::invalid("a CDF needs at least two knots"));
        }
        if knots.iter().any(|(x, p)| !x.is_finite() || !p.is_finite()) {
            return Err(Error::invalid("knots must be finite"));
        }
        if knots.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(Error::invalid("knot x values must be nondecreasing"));
        }
        if knots.windows(2).any(|w| w[1].1 < w[0].1) {
            return Err(Error::invalid("knot probabilities must be nondecreasing"));
        }
        if knots[0].1 != 0.0 || knots[knots.len() - 1].1 != 1.0 {
            return Err(Error::invalid("first knot must have p = 0 and last p = 1"));
        }
        Ok(PiecewiseLinearCdf { knots: normalize(knots) })
    }

    /// Rebuilds a CDF from pooled points that may carry rounding noise:
    /// probabilities are clamped, tiny backward steps are flattened and
    /// missing end knots at p = 0 and p = 1 are added.
    pub(crate) fn from_points_lossy(mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("no points to build a CDF from"));
        }
        if points.iter().any(|(x, p)| !x.is_finite() || !p.is_finite()) {
            return Err(Error::invalid("pooled curve has non-finite points"));
        }
        let x_scale = points.iter().fold(1.0_f64, |m, (x, _)| m.max(x.abs()));
        for pt in points.iter_mut() {
            pt.1 = pt.1.clamp(0.0, 1.0);
            if pt.1 < SNAP_EPS {
                pt.1 = 0.0;
            } else if pt.1 > 1.0 - SNAP_EPS {
                pt.1 = 1.0;
            }
        }
        for i in 1..points.len() {
            let (px, pp) = points[i - 1];
            let pt = &mut points[i];
            if pt.0 < px {
                let drop = px - pt.0;
                if drop > MONOTONE_TOL * x_scale {
                    return Err(Error::NonMonotoneResult(drop));
                }
                pt.0 = px;
            }
            if pt.1 < pp {
                let drop = pp - pt.1;
                if drop > MONOTONE_TOL {
                    return Err(Error::NonMonotoneResult(drop));
                }
                pt.1 = pp;
            }
        }
        if points[0].1 > 0.0 {
            points.insert(0, (points[0].0, 0.0));
        }
        let last = points[points.len() - 1];
        if last.1 < 1.0 {
            points.push((last.0, 1.0));
        }
        if points.len() < 2 {
            points.push(points[0]);
        }
        Ok(PiecewiseLinearCdf { knots: normalize(points) })
    }

    pub fn knots(&self) -> &[(f64, f64)] {
        &self.knots
    }

    pub fn lower(&self) -> f64 {
        self.knots[0].0
    }

    pub fn upper(&self) -> f64 {
        self.knots[self.knots.len() - 1].0
    }

    /// Left and right limits of the CDF at `x`; they differ only at a jump.
    pub fn eval_limits(&self, x: f64) -> (f64, f64) {
        limits(&self.knots, x, |k| k.0, |k| k.1, 0.0, 1.0)
    }

    pub fn eval(&self, x: f64, rule: FlatRule) -> f64 {
        let (lo, hi) = self.eval_limits(x);
        match rule {
            FlatRule::Lower => lo,
            FlatRule::Upper => hi,
            FlatRule::Midpoint => 0.5 * (lo + hi),
        }
    }

    /// Left and right limits of the quantile function at `alpha`.
    pub fn quantile_limits(&self, alpha: f64) -> (f64, f64) {
        let alpha = alpha.clamp(0.0, 1.0);
        limits(&self.knots, alpha, |k| k.1, |k| k.0, self.lower(), self.upper())
    }

    /// Generalized inverse `inf { x : F(x) >= alpha }`, with `alpha = 0`
    /// mapped to the lower end of the support.
    pub fn inverse(&self, alpha: f64) -> f64 {
        self.quantile_limits(alpha).0
    }

    /// Mean and variance by exact integration of the quantile function.
    pub fn moments(&self) -> Moments {
        let mean = self.mean();
        let variance = self
            .knots
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0].0 - mean, w[1].0 - mean);
                (w[1].1 - w[0].1) * (a * a + a * b + b * b) / 3.0
            })
            .sum::<f64>()
            .max(0.0);
        Moments { mean, variance }
    }

    pub fn mean(&self) -> f64 {
        self.knots.windows(2).map(|w| (w[1].1 - w[0].1) * 0.5 * (w[0].0 + w[1].0)).sum()
    }

    /// Slope of the segment containing `x`; zero outside the support.
    pub fn density_at(&self, x: f64) -> Result<f64> {
        if x < self.lower() || x > self.upper() {
            return Ok(0.0);
        }
        let i = self.knots.partition_point(|k| k.0 < x);
        if i < self.knots.len() && self.knots[i].0 == x {
            return Err(Error::UndefinedDensity(x));
        }
        let (a, b) = (self.knots[i - 1], self.knots[i]);
        Ok((b.1 - a.1) / (b.0 - a.0))
    }

    /// Knots mapped into the unit frame.
    pub fn scaled(&self, frame: &ScaledFrame) -> Vec<(f64, f64)> {
        self.knots.iter().map(|&(x, p)| (frame.scale(x), p)).collect()
    }

    pub(crate) fn from_scaled(points: Vec<(f64, f64)>, frame: &ScaledFrame) -> Result<Self> {
        Self::from_points_lossy(points.into_iter().map(|(u, p)| (frame.unscale(u), p)).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("finite knots always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Largest pointwise gap between two CDFs, checked just left and right of
/// every knot of either curve. "Just" is 1e-10 of the joint support width, so
/// two jumps that differ only by round-off in their position do not count as
/// a gap the size of the jump.
pub fn sup_distance(a: &PiecewiseLinearCdf, b: &PiecewiseLinearCdf) -> f64 {
    let lo = a.lower().min(b.lower());
    let hi = a.upper().max(b.upper());
    let delta = 1e-10 * (hi - lo);
    let gap = |x: f64| (a.eval(x, FlatRule::Midpoint) - b.eval(x, FlatRule::Midpoint)).abs();
    a.knots
        .iter()
        .chain(b.knots.iter())
        .map(|&(x, _)| gap(x - delta).max(gap(x + delta)))
        .fold(0.0, f64::max)
}

/// Drops repeated knots, collapses runs along a vertical or horizontal line
/// to their two ends, and trims flat stretches at p = 0 and p = 1.
fn normalize(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for pt in points {
        if out.last() == Some(&pt) {
            continue;
        }
        let n = out.len();
        if n >= 2 {
            let (a, b) = (out[n - 2], out[n - 1]);
            if (a.0 == b.0 && b.0 == pt.0) || (a.1 == b.1 && b.1 == pt.1) {
                out[n - 1] = pt;
                continue;
            }
        }
        out.push(pt);
    }
    while out.len() > 2 && out[1].1 == 0.0 {
        out.remove(0);
    }
    while out.len() > 2 && out[out.len() - 2].1 == 1.0 {
        out.pop();
    }
    out
}

/// Left and right limits of a monotone polyline at `t`. `key` selects the
/// abscissa and `val` the ordinate; outside the knots the curve is constant
/// at `below` / `above`.
pub(crate) fn limits<K, V>(
    pts: &[(f64, f64)],
    t: f64,
    key: K,
    val: V,
    below: f64,
    above: f64,
) -> (f64, f64)
where
    K: Fn(&(f64, f64)) -> f64,
    V: Fn(&(f64, f64)) -> f64,
{
    let n = pts.len();
    let lo = pts.partition_point(|k| key(k) < t);
    let hi = pts.partition_point(|k| key(k) <= t);
    if lo < hi {
        // A knot at the edge of the curve takes the outside value on its open side.
        let left = if lo == 0 { below } else { val(&pts[lo]) };
        let right = if hi == n { above } else { val(&pts[hi - 1]) };
        return (left, right);
    }
    if lo == 0 {
        return (below, below);
    }
    if lo == n {
        return (above, above);
    }
    let (a, b) = (&pts[lo - 1], &pts[lo]);
    let v = val(a) + (t - key(a)) / (key(b) - key(a)) * (val(b) - val(a));
    (v, v)
}

/// Affine map of an outcome interval onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaledFrame {
    lo: f64,
    hi: f64,
}

impl ScaledFrame {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || hi <= lo {
            return Err(Error::DegenerateSupport(lo));
        }
        Ok(ScaledFrame { lo, hi })
    }

    /// Smallest frame containing every support.
    pub fn covering<'a, I>(cdfs: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a PiecewiseLinearCdf>,
    {
        let (lo, hi) = cdfs
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c.lower()), hi.max(c.upper()))
            });
        Self::new(lo, hi)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn scale(&self, x: f64) -> f64 {
        (x - self.lo) / self.width()
    }

    pub fn unscale(&self, u: f64) -> f64 {
        self.lo + u * self.width()
    }
}

/// Line of slope `-tan(theta)` through the diagonal point `(d, d)` of the
/// unit box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngledLine {
    theta_deg: f64,
    anchor: f64,
}

impl AngledLine {
    pub fn new(theta_deg: f64, anchor: f64) -> Result<Self> {
        check_angle(theta_deg)?;
        if !(0.0..=1.0).contains(&anchor) {
            return Err(Error::invalid(format!("anchor {anchor} outside [0, 1]")));
        }
        Ok(AngledLine { theta_deg, anchor })
    }

    pub fn theta_deg(&self) -> f64 {
        self.theta_deg
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    /// Where the line meets p = 0; `None` for the horizontal line.
    pub fn x_intercept(&self) -> Option<f64> {
        if self.theta_deg == 0.0 {
            None
        } else {
            Some(self.anchor * (1.0 + cot_deg(self.theta_deg)))
        }
    }
}

pub(crate) fn check_angle(theta_deg: f64) -> Result<()> {
    if (0.0..=90.0).contains(&theta_deg) {
        Ok(())
    } else {
        Err(Error::InvalidAngle(theta_deg))
    }
}

/// `1 / tan(theta)`, exactly zero at 90 degrees.
pub fn cot_deg(theta_deg: f64) -> f64 {
    if theta_deg == 90.0 {
        0.0
    } else {
        1.0 / theta_deg.to_radians().tan()
    }
}

/// Intersection of an angled line with a CDF given by scaled knots. The CDF
/// is extended flat at 0 and 1 outside its knots.
pub(crate) fn intersect_scaled(knots: &[(f64, f64)], theta_deg: f64, d: f64) -> (f64, f64) {
    if theta_deg == 0.0 {
        let x = limits(knots, d, |k| k.1, |k| k.0, knots[0].0, knots[knots.len() - 1].0).0;
        return (x, d);
    }
    if theta_deg == 90.0 {
        let (lo, hi) = limits(knots, d, |k| k.0, |k| k.1, 0.0, 1.0);
        return (d, 0.5 * (lo + hi));
    }
    let tan = theta_deg.to_radians().tan();
    let c = d + d / tan;
    // Signed offset of each knot above the line; nondecreasing along the
    // polyline because the CDF rises while the line falls.
    let side = |k: &(f64, f64)| k.1 + tan * (k.0 - c);
    let i = knots.partition_point(|k| side(k) <= 0.0);
    if i == 0 {
        return (c, 0.0);
    }
    if i == knots.len() {
        return (c - 1.0 / tan, 1.0);
    }
    let (a, b) = (knots[i - 1], knots[i]);
    let (sa, sb) = (side(&a), side(&b));
    if sa == 0.0 {
        return a;
    }
    let t = -sa / (sb - sa);
    (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1))
}

/// Intersection point in outcome units and probability.
pub fn intersect_line(
    cdf: &PiecewiseLinearCdf,
    line: &AngledLine,
    frame: &ScaledFrame,
) -> Result<(f64, f64)> {
    check_angle(line.theta_deg)?;
    let (u, p) = intersect_scaled(&cdf.scaled(frame), line.theta_deg, line.anchor);
    Ok((frame.unscale(u), p))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkDirection {
    Forward,
    Inverse,
}

/// Shifts each quantile by `alpha / tan(theta)` (forward) or back (inverse),
/// working in the scaled frame.
pub fn link_transform(
    cdf: &PiecewiseLinearCdf,
    theta_deg: f64,
    frame: &ScaledFrame,
    direction: LinkDirection,
) -> Result<PiecewiseLinearCdf> {
    if !(theta_deg > 0.0 && theta_deg <= 90.0) {
        return Err(Error::InvalidAngle(theta_deg));
    }
    let shift = match direction {
        LinkDirection::Forward => cot_deg(theta_deg),
        LinkDirection::Inverse => -cot_deg(theta_deg),
    };
    let moved = shift_quantiles(cdf.scaled(frame), shift);
    if let Some(w) = moved.windows(2).find(|w| w[1].0 < w[0].0) {
        let drop = w[0].0 - w[1].0;
        if drop > 1e-12 {
            return Err(Error::NonMonotoneResult(drop));
        }
    }
    PiecewiseLinearCdf::from_scaled(moved, frame)
}

pub(crate) fn shift_quantiles(points: Vec<(f64, f64)>, shift: f64) -> Vec<(f64, f64)> {
    points.into_iter().map(|(u, p)| (u + p * shift, p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cdf(knots: &[(f64, f64)]) -> PiecewiseLinearCdf {
        PiecewiseLinearCdf::new(knots.to_vec()).unwrap()
    }

    fn hub_with_ends(q1: f64, q25: f64, q975: f64, q99: f64) -> QuantileForecast {
        let mut q: Vec<f64> = (0..23).map(|i| 20.0 + 3.0 * i as f64).collect();
        q[0] = q1;
        q[1] = q25;
        q[21] = q975;
        q[22] = q99;
        QuantileForecast::hub(q).unwrap()
    }

    #[test]
    fn bounds_extend_by_outer_gaps() {
        let c = hub_with_ends(10.0, 13.0, 94.0, 100.0).to_cdf().unwrap();
        assert_eq!(c.knots()[0], (7.0, 0.0));
        assert_eq!(c.knots()[c.knots().len() - 1], (106.0, 1.0));
        assert_eq!(c.knots().len(), 25);
    }

    #[test]
    fn lower_bound_clipped_at_zero() {
        let c = hub_with_ends(2.0, 6.0, 94.0, 100.0).to_cdf().unwrap();
        assert_eq!(c.lower(), 0.0);
        let free = cdf_from_quantiles(&hub_with_ends(2.0, 6.0, 94.0, 100.0), BoundRule::unbounded())
            .unwrap();
        assert_eq!(free.lower(), -2.0);
    }

    #[test]
    fn equal_quantiles_are_rejected() {
        let qf = QuantileForecast::hub(vec![5.0; 23]).unwrap();
        assert!(matches!(qf.to_cdf(), Err(Error::DegenerateSupport(_))));
    }

    #[test]
    fn construction_errors() {
        assert!(QuantileForecast::new(vec![0.5], vec![1.0]).unwrap().to_cdf().is_err());
        assert!(QuantileForecast::new(vec![0.1, 0.9], vec![2.0, 1.0]).is_err());
        assert!(QuantileForecast::new(vec![0.9, 0.1], vec![1.0, 2.0]).is_err());
        assert!(QuantileForecast::new(vec![0.1, 0.9], vec![1.0]).is_err());
    }

    #[test]
    fn repeated_quantiles_become_jumps() {
        let qf = QuantileForecast::new(vec![0.25, 0.5, 0.75], vec![1.0, 2.0, 2.0]).unwrap();
        let c = qf.to_cdf().unwrap();
        assert_eq!(c.knots(), &[(0.0, 0.0), (1.0, 0.25), (2.0, 0.5), (2.0, 1.0)]);
        assert_eq!(c.eval(2.0, FlatRule::Lower), 0.5);
        assert_eq!(c.eval(2.0, FlatRule::Upper), 1.0);
    }

    #[test]
    fn eval_examples() {
        let u = cdf(&[(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(u.eval(0.25, FlatRule::Midpoint), 0.25);
        assert_eq!(u.eval(-1.0, FlatRule::Midpoint), 0.0);
        assert_eq!(u.eval(2.0, FlatRule::Lower), 1.0);
        let j = cdf(&[(0.0, 0.0), (0.5, 0.2), (0.5, 0.8), (1.0, 1.0)]);
        assert!((j.eval(0.5, FlatRule::Midpoint) - 0.5).abs() < 1e-15);
        assert_eq!(j.eval(0.5, FlatRule::Lower), 0.2);
        assert_eq!(j.eval(0.5, FlatRule::Upper), 0.8);
    }

    #[test]
    fn point_mass_eval() {
        let pm = cdf(&[(5.0, 0.0), (5.0, 1.0)]);
        assert_eq!(pm.eval_limits(5.0), (0.0, 1.0));
        assert_eq!(pm.eval(4.9, FlatRule::Upper), 0.0);
        assert_eq!(pm.eval(5.1, FlatRule::Lower), 1.0);
    }

    #[test]
    fn inverse_examples() {
        let u = cdf(&[(0.0, 0.0), (1.0, 1.0)]);
        assert!((u.inverse(0.3) - 0.3).abs() < 1e-15);
        let c = cdf(&[(0.0, 0.0), (2.0, 0.5), (4.0, 1.0)]);
        assert_eq!(c.inverse(0.75), 3.0);
        assert_eq!(c.inverse(1.0), 4.0);
        assert_eq!(c.inverse(0.0), 0.0);
    }

    #[test]
    fn inverse_on_flat_stretch_takes_left_end() {
        let c = cdf(&[(0.0, 0.0), (1.0, 0.5), (3.0, 0.5), (4.0, 1.0)]);
        assert_eq!(c.inverse(0.5), 1.0);
        assert_eq!(c.quantile_limits(0.5), (1.0, 3.0));
    }

    #[test]
    fn moments_examples() {
        let m = cdf(&[(0.0, 0.0), (1.0, 1.0)]).moments();
        assert!((m.mean - 0.5).abs() < 1e-15);
        assert!((m.variance - 1.0 / 12.0).abs() < 1e-15);
        let pm = cdf(&[(5.0, 0.0), (5.0, 1.0)]).moments();
        assert_eq!((pm.mean, pm.variance), (5.0, 0.0));
        // 0.5 * 0.5 + 0.5 * 2 = 1.25
        let m = cdf(&[(0.0, 0.0), (1.0, 0.5), (3.0, 1.0)]).moments();
        assert!((m.mean - 1.25).abs() < 1e-15);
    }

    #[test]
    fn density_examples() {
        assert_eq!(cdf(&[(0.0, 0.0), (1.0, 1.0)]).density_at(0.5).unwrap(), 1.0);
        assert_eq!(cdf(&[(0.0, 0.0), (2.0, 1.0)]).density_at(1.0).unwrap(), 0.5);
        let j = cdf(&[(0.0, 0.0), (0.5, 0.2), (0.5, 0.8), (1.0, 1.0)]);
        assert!(matches!(j.density_at(0.5), Err(Error::UndefinedDensity(_))));
        assert_eq!(j.density_at(3.0).unwrap(), 0.0);
    }

    #[test]
    fn intersection_examples() {
        let unit = ScaledFrame::new(0.0, 1.0).unwrap();
        let u = cdf(&[(0.0, 0.0), (1.0, 1.0)]);
        for theta in [0.0, 10.0, 45.0, 80.0, 90.0] {
            for d in [0.0, 0.3, 0.7, 1.0] {
                let (x, p) = intersect_line(&u, &AngledLine::new(theta, d).unwrap(), &unit).unwrap();
                assert!((x - d).abs() < 1e-12 && (p - d).abs() < 1e-12, "{theta} {d}");
            }
        }
        let steep = cdf(&[(0.0, 0.0), (0.5, 1.0)]);
        let (x, p) = intersect_line(&steep, &AngledLine::new(45.0, 0.5).unwrap(), &unit).unwrap();
        assert!((x - 1.0 / 3.0).abs() < 1e-12);
        assert!((p - 2.0 / 3.0).abs() < 1e-12);
        let jump = cdf(&[(0.0, 0.0), (0.5, 0.0), (0.5, 1.0), (1.0, 1.0)]);
        let (x, p) = intersect_line(&jump, &AngledLine::new(60.0, 0.5).unwrap(), &unit).unwrap();
        assert!((x - 0.5).abs() < 1e-12 && (p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_angles() {
        assert!(matches!(AngledLine::new(120.0, 0.5), Err(Error::InvalidAngle(_))));
        assert!(matches!(AngledLine::new(-1.0, 0.5), Err(Error::InvalidAngle(_))));
        let u = cdf(&[(0.0, 0.0), (1.0, 1.0)]);
        let unit = ScaledFrame::new(0.0, 1.0).unwrap();
        assert!(link_transform(&u, 0.0, &unit, LinkDirection::Forward).is_err());
    }

    #[test]
    fn link_transform_examples() {
        let unit = ScaledFrame::new(0.0, 1.0).unwrap();
        let u = cdf(&[(0.0, 0.0), (1.0, 1.0)]);
        let t = link_transform(&u, 45.0, &unit, LinkDirection::Forward).unwrap();
        assert_eq!(t.lower(), 0.0);
        assert!((t.upper() - 2.0).abs() < 1e-12);
        assert!((t.mean() - 1.0).abs() < 1e-12);
        assert_eq!(link_transform(&u, 90.0, &unit, LinkDirection::Forward).unwrap(), u);
        // A shift larger than the support makes the inverse decrease.
        assert!(matches!(
            link_transform(&u, 30.0, &unit, LinkDirection::Inverse),
            Err(Error::NonMonotoneResult(_))
        ));
    }

    #[test]
    fn frame_round_trip() {
        let f = ScaledFrame::new(-3.5, 120.25).unwrap();
        for x in [-3.5, 0.0, 17.3, 120.25] {
            assert!((f.unscale(f.scale(x)) - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
        assert!(ScaledFrame::new(1.0, 1.0).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let c = cdf(&[(0.1, 0.0), (0.30000000000000004, 0.4), (2.0, 1.0)]);
        let text = c.to_json();
        assert_eq!(text, r#"{"knots":[[0.1,0.0],[0.30000000000000004,0.4],[2.0,1.0]]}"#);
        assert_eq!(PiecewiseLinearCdf::from_json(&text).unwrap(), c);
        assert!(PiecewiseLinearCdf::from_json(r#"{"knots":[[0,0],[1,0.5]]}"#).is_err());
    }

    #[test]
    fn normalization_trims_flat_ends() {
        let c = cdf(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.5), (3.0, 1.0), (4.0, 1.0)]);
        assert_eq!(c.knots(), &[(1.0, 0.0), (2.0, 0.5), (3.0, 1.0)]);
        let c = cdf(&[(0.0, 0.0), (1.0, 0.2), (1.0, 0.4), (1.0, 0.6), (2.0, 1.0)]);
        assert_eq!(c.knots(), &[(0.0, 0.0), (1.0, 0.2), (1.0, 0.6), (2.0, 1.0)]);
    }
}
