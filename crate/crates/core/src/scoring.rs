//! Proper scores and calibration statistics for piecewise-linear forecasts.

use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::cdf::PiecewiseLinearCdf;
use crate::error::{Error, Result};

/// Pinball loss on the doubled scale: `2 (alpha - 1{x <= q}) (x - q)`.
pub fn quantile_score(alpha: f64, q: f64, x: f64) -> f64 {
    let hit = if x <= q { 1.0 } else { 0.0 };
    2.0 * (alpha - hit) * (x - q)
}

/// Mean quantile score over `levels`.
pub fn mqs(cdf: &PiecewiseLinearCdf, x: f64, levels: &[f64]) -> f64 {
    levels.iter().map(|&a| quantile_score(a, cdf.inverse(a), x)).sum::<f64>() / levels.len() as f64
}

/// Winkler score of the central `(1 - alpha)` interval `[l, u]`.
pub fn interval_score(alpha: f64, l: f64, u: f64, x: f64) -> f64 {
    let mut s = u - l;
    if x <= l {
        s += 2.0 / alpha * (l - x);
    }
    if x >= u {
        s += 2.0 / alpha * (x - u);
    }
    s
}

/// Interval score of the forecast's own central `(1 - alpha)` interval.
pub fn forecast_interval_score(cdf: &PiecewiseLinearCdf, alpha: f64, x: f64) -> f64 {
    interval_score(alpha, cdf.inverse(alpha / 2.0), cdf.inverse(1.0 - alpha / 2.0), x)
}

/// Exact CRPS, `integral (F(x) - 1{x > z})^2 dx`, integrated piece by piece.
pub fn crps(cdf: &PiecewiseLinearCdf, z: f64) -> f64 {
    let knots = cdf.knots();
    let (lo, hi) = (cdf.lower(), cdf.upper());
    // Outside the support the integrand is the indicator alone.
    let mut total = (lo - z).max(0.0) + (z - hi).max(0.0);
    for w in knots.windows(2) {
        let ((xa, pa), (xb, pb)) = (w[0], w[1]);
        if xb <= xa {
            continue;
        }
        if z <= xa {
            total += sq_integral(1.0 - pa, 1.0 - pb, xb - xa);
        } else if z >= xb {
            total += sq_integral(pa, pb, xb - xa);
        } else {
            let pz = pa + (z - xa) / (xb - xa) * (pb - pa);
            total += sq_integral(pa, pz, z - xa) + sq_integral(1.0 - pz, 1.0 - pb, xb - z);
        }
    }
    total
}

/// Integral of the square of a linear function going from `a` to `b` over
/// an interval of width `h`.
fn sq_integral(a: f64, b: f64, h: f64) -> f64 {
    h * (a * a + a * b + b * b) / 3.0
}

/// `100 (1 - geometric mean of method / benchmark)`.
///
/// Pairs where either score is zero are skipped with a warning; negative or
/// non-finite scores are rejected.
pub fn skill_score(method: &[f64], benchmark: &[f64]) -> Result<f64> {
    if method.len() != benchmark.len() {
        return Err(Error::invalid(format!(
            "{} method scores but {} benchmark scores",
            method.len(),
            benchmark.len()
        )));
    }
    if method.iter().chain(benchmark).any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::invalid("skill scores need finite nonnegative scores"));
    }
    let mut log_sum = 0.0;
    let mut n = 0usize;
    for (&m, &b) in method.iter().zip(benchmark) {
        if m == 0.0 || b == 0.0 {
            warn!("skipping zero score pair ({m}, {b}) in skill score");
            continue;
        }
        log_sum += (m / b).ln();
        n += 1;
    }
    if n == 0 {
        return Err(Error::invalid("no positive score pairs for the skill score"));
    }
    Ok(100.0 * (1.0 - (log_sum / n as f64).exp()))
}

/// For each level, the fraction of observations at or below the forecast
/// quantile.
pub fn reliability_data(pairs: &[(PiecewiseLinearCdf, f64)], levels: &[f64]) -> Result<Vec<(f64, f64)>> {
    if pairs.is_empty() {
        return Err(Error::invalid("no forecast/observation pairs"));
    }
    let n = pairs.len() as f64;
    Ok(levels
        .iter()
        .map(|&a| {
            let hits = pairs.iter().filter(|(c, x)| *x <= c.inverse(a)).count();
            (a, hits as f64 / n)
        })
        .collect())
}

/// Fraction of observations inside the central `(1 - alpha)` interval.
pub fn interval_coverage(pairs: &[(PiecewiseLinearCdf, f64)], alpha: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no forecast/observation pairs"));
    }
    let inside = pairs
        .iter()
        .filter(|(c, x)| c.inverse(alpha / 2.0) <= *x && *x <= c.inverse(1.0 - alpha / 2.0))
        .count();
    Ok(inside as f64 / pairs.len() as f64)
}

/// Per-forecast evaluation summary used when aggregating a backtest.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreSet {
    pub mqs: f64,
    pub interval_score_95: f64,
    pub interval_score_50: f64,
    pub coverage_95: f64,
    pub coverage_50: f64,
}

impl ScoreSet {
    pub fn evaluate(cdf: &PiecewiseLinearCdf, x: f64, levels: &[f64]) -> Self {
        let covered = |alpha: f64| {
            let inside = cdf.inverse(alpha / 2.0) <= x && x <= cdf.inverse(1.0 - alpha / 2.0);
            if inside {
                1.0
            } else {
                0.0
            }
        };
        ScoreSet {
            mqs: mqs(cdf, x, levels),
            interval_score_95: forecast_interval_score(cdf, 0.05, x),
            interval_score_50: forecast_interval_score(cdf, 0.5, x),
            coverage_95: covered(0.05),
            coverage_50: covered(0.5),
        }
    }

    /// Componentwise mean; `None` for an empty slice.
    pub fn mean(sets: &[ScoreSet]) -> Option<ScoreSet> {
        if sets.is_empty() {
            return None;
        }
        let n = sets.len() as f64;
        let sum = sets.iter().fold(ScoreSet::default(), |a, s| ScoreSet {
            mqs: a.mqs + s.mqs,
            interval_score_95: a.interval_score_95 + s.interval_score_95,
            interval_score_50: a.interval_score_50 + s.interval_score_50,
            coverage_95: a.coverage_95 + s.coverage_95,
            coverage_50: a.coverage_50 + s.coverage_50,
        });
        Some(ScoreSet {
            mqs: sum.mqs / n,
            interval_score_95: sum.interval_score_95 / n,
            interval_score_50: sum.interval_score_50 / n,
            coverage_95: sum.coverage_95 / n,
            coverage_50: sum.coverage_50 / n,
        })
    }
}

/// One `(method, group, metric, value)` line of a score report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub group: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rows: Vec<ReportRow>,
}

impl ScoreReport {
    pub fn push(&mut self, method: &str, group: &str, metric: &str, value: f64) {
        self.rows.push(ReportRow {
            method: method.to_string(),
            group: group.to_string(),
            metric: metric.to_string(),
            value,
        });
    }

    pub fn get(&self, method: &str, group: &str, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.group == group && r.metric == metric)
            .map(|r| r.value)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>()?;
        Ok(ScoreReport { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdf::HUB_LEVELS;

    fn uniform(a: f64, b: f64) -> PiecewiseLinearCdf {
        PiecewiseLinearCdf::new(vec![(a, 0.0), (b, 1.0)]).unwrap()
    }

    #[test]
    fn quantile_score_examples() {
        assert_eq!(quantile_score(0.3, 4.0, 4.0), 0.0);
        assert!((quantile_score(0.9, 10.0, 12.0) - 3.6).abs() < 1e-12);
        assert!((quantile_score(0.9, 10.0, 8.0) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn mqs_examples() {
        let pm = PiecewiseLinearCdf::new(vec![(5.0, 0.0), (5.0, 1.0)]).unwrap();
        assert_eq!(mqs(&pm, 5.0, &HUB_LEVELS), 0.0);
        // Per-level scores 0.125, 0, 0.125.
        let m = mqs(&uniform(0.0, 1.0), 0.5, &[0.25, 0.5, 0.75]);
        assert!((m - 1.0 / 12.0).abs() < 1e-15);
        let shifted = mqs(&uniform(7.0, 8.0), 7.5, &[0.25, 0.5, 0.75]);
        assert!((shifted - m).abs() < 1e-12);
    }

    #[test]
    fn interval_score_examples() {
        assert_eq!(interval_score(0.05, 1.0, 3.0, 2.0), 2.0);
        assert!((interval_score(0.05, 1.0, 3.0, 4.0) - 42.0).abs() < 1e-12);
        assert!((interval_score(0.5, 1.0, 3.0, 0.0) - 6.0).abs() < 1e-12);
        // Endpoints count as misses but add nothing.
        assert_eq!(interval_score(0.05, 1.0, 3.0, 1.0), 2.0);
    }

    #[test]
    fn crps_examples() {
        let pm = PiecewiseLinearCdf::new(vec![(2.0, 0.0), (2.0, 1.0)]).unwrap();
        assert_eq!(crps(&pm, 2.0), 0.0);
        assert_eq!(crps(&pm, 3.5), 1.5);
        assert!((crps(&uniform(0.0, 1.0), 0.0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((crps(&uniform(0.0, 1.0), 0.5) - 1.0 / 12.0).abs() < 1e-15);
        assert!((crps(&uniform(0.0, 1.0), -1.0) - (1.0 + 1.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn skill_score_examples() {
        assert_eq!(skill_score(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((skill_score(&[0.9, 1.8], &[1.0, 2.0]).unwrap() - 10.0).abs() < 1e-10);
        assert!(skill_score(&[0.5, 2.0], &[1.0, 1.0]).unwrap().abs() < 1e-12);
        assert!(skill_score(&[-1.0], &[1.0]).is_err());
        assert!(skill_score(&[1.0], &[1.0, 2.0]).is_err());
        // zero benchmark pair is skipped
        assert!((skill_score(&[0.9, 5.0], &[1.0, 0.0]).unwrap() - 10.0).abs() < 1e-10);
        assert!(skill_score(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn reliability_and_coverage() {
        let c = uniform(0.0, 2.0);
        let at_median = vec![(c.clone(), 1.0); 4];
        let r = reliability_data(&at_median, &[0.5]).unwrap();
        assert_eq!(r, vec![(0.5, 1.0)]);
        assert_eq!(interval_coverage(&at_median, 0.05).unwrap(), 1.0);

        let above = vec![(c.clone(), 5.0); 3];
        assert!(reliability_data(&above, &HUB_LEVELS).unwrap().iter().all(|&(_, f)| f == 0.0));
        assert_eq!(interval_coverage(&above, 0.5).unwrap(), 0.0);
        assert!(interval_coverage(&[], 0.5).is_err());
    }

    #[test]
    fn report_csv_round_trip() {
        let mut report = ScoreReport::default();
        report.push("horizontal", "all", "mqs", 1.25);
        report.push("vertical", "all", "skill_mqs", -0.1);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("method,group,metric,value\n"));
        assert_eq!(ScoreReport::read_csv(&buf[..]).unwrap(), report);
        assert_eq!(report.get("vertical", "all", "skill_mqs"), Some(-0.1));
    }
}
