//! Randomized checks of the pooling theorems, run by `angular-pool verify`
//! and by the acceptance tests.
//!
//! Every suite is deterministic given its seed: trial `i` draws from a
//! ChaCha stream selected by `i`, so results do not depend on thread count.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal};

use crate::cdf::{cdf_from_quantiles, intersect_scaled, sup_distance, BoundRule, PiecewiseLinearCdf, ScaledFrame, HUB_LEVELS};
use crate::combine::{
    angular_combine_exact, angular_combine_grid, horizontal_combine, median_combine, vertical_combine,
    Aggregator, CombinationSpec, Direction,
};
use crate::error::{Error, Result};
use crate::ingest::gaussian_forecast;
use crate::scoring::crps;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Mean,
    Variance,
    Crps,
    Median,
    Pdf,
    Limits,
}

impl Suite {
    pub const ALL: [Suite; 6] = [Suite::Mean, Suite::Variance, Suite::Crps, Suite::Median, Suite::Pdf, Suite::Limits];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Mean => "mean",
            Suite::Variance => "variance",
            Suite::Crps => "crps",
            Suite::Median => "median",
            Suite::Pdf => "pdf",
            Suite::Limits => "limits",
        }
    }

    fn stream(self) -> u64 {
        Suite::ALL.iter().position(|s| *s == self).expect("listed") as u64
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown suite `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    pub trials: usize,
    pub seed: u64,
    /// Fixed member count for the median suite; odd counts 3, 5, 7 otherwise.
    pub median_k: Option<usize>,
    pub grid_points: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { trials: 200, seed: 1, median_k: None, grid_points: 1001 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped { reason: String },
}

/// One checked property: the worst residual seen against its tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
    #[serde(flatten)]
    pub status: Status,
}

impl Check {
    fn measured(name: &str, residuals: &[f64], tolerance: f64) -> Self {
        // NaN residuals count as failures.
        let worst = residuals.iter().copied().fold(f64::NEG_INFINITY, |a, r| if r.is_nan() || a.is_nan() { f64::NAN } else { a.max(r) });
        let status = if worst <= tolerance { Status::Pass } else { Status::Fail };
        Check { name: name.into(), cases: residuals.len(), worst, tolerance, status }
    }

    fn skipped(name: &str, reason: &str) -> Self {
        Check {
            name: name.into(),
            cases: 0,
            worst: f64::NAN,
            tolerance: f64::NAN,
            status: Status::Skipped { reason: reason.into() },
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    /// One line per check: `suite/check: pass|FAIL|skipped ...`.
    pub fn lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| match &c.status {
                Status::Skipped { reason } => format!("{}/{}: skipped: {reason}", self.suite, c.name),
                s => format!(
                    "{}/{}: {} (cases {}, worst residual {:e}, tolerance {:e})",
                    self.suite,
                    c.name,
                    if *s == Status::Pass { "pass" } else { "FAIL" },
                    c.cases,
                    c.worst,
                    c.tolerance
                ),
            })
            .collect()
    }
}

fn trial_rng(seed: u64, suite: Suite, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(suite.stream() << 32 | trial as u64);
    rng
}

/// Random piecewise-linear CDF with 2 to 8 knots on roughly [-3, 9],
/// including occasional jumps and flat stretches.
pub fn random_cdf<R: Rng>(rng: &mut R) -> PiecewiseLinearCdf {
    let n = rng.random_range(2..=8usize);
    let mut xs = vec![rng.random_range(-3.0..3.0)];
    for _ in 1..n {
        let step = if n > 2 && rng.random_bool(0.1) { 0.0 } else { rng.random_range(0.05..2.0) };
        xs.push(xs[xs.len() - 1] + step);
    }
    if xs[n - 1] == xs[0] {
        xs[n - 1] += 1.0;
    }
    let mut inner: Vec<f64> = (0..n - 2).map(|_| rng.random_range(0.0..1.0)).collect();
    inner.sort_by(f64::total_cmp);
    for i in 1..inner.len() {
        if rng.random_bool(0.1) {
            inner[i] = inner[i - 1];
        }
    }
    let mut ps = vec![0.0];
    ps.extend(inner);
    ps.push(1.0);
    for i in 1..n {
        // A repeated point would be a zero-length segment; make it a slope.
        if xs[i] == xs[i - 1] && ps[i] == ps[i - 1] {
            xs[i] += 0.1;
            for x in xs.iter_mut().skip(i + 1) {
                *x += 0.1;
            }
        }
    }
    PiecewiseLinearCdf::new(xs.into_iter().zip(ps).collect()).expect("generator builds valid CDFs")
}

pub fn random_set<R: Rng>(rng: &mut R, k_min: usize, k_max: usize) -> Vec<PiecewiseLinearCdf> {
    let k = rng.random_range(k_min..=k_max);
    (0..k).map(|_| random_cdf(rng)).collect()
}

/// Gaussian discretized at `levels` with unbounded extension.
pub fn gaussian_cdf(mean: f64, sd: f64, levels: &[f64]) -> Result<PiecewiseLinearCdf> {
    cdf_from_quantiles(&gaussian_forecast(mean, sd, levels)?, BoundRule::unbounded())
}

/// Members shaped like hub submissions: Gaussian quantiles at the 23 hub
/// levels, extended to bounded support with the default rule.
pub fn forecast_like_set<R: Rng>(rng: &mut R, k_min: usize, k_max: usize) -> Result<Vec<PiecewiseLinearCdf>> {
    let k = rng.random_range(k_min..=k_max);
    (0..k)
        .map(|_| {
            let qf = gaussian_forecast(rng.random_range(-2.0..2.0), rng.random_range(0.2..1.5), &HUB_LEVELS)?;
            cdf_from_quantiles(&qf, BoundRule::default())
        })
        .collect()
}

/// Levels `1/n, 2/n, ..., (n-1)/n`.
pub fn fine_levels(n: usize) -> Vec<f64> {
    (1..n).map(|i| i as f64 / n as f64).collect()
}

/// Angular-average density from member densities at the points where one
/// angled line meets the members. Densities and `tan(theta)` must be in the
/// same (scaled) units.
pub fn angular_density(member_densities: &[f64], theta_deg: f64) -> f64 {
    let t = theta_deg.to_radians().tan();
    let num: f64 = member_densities.iter().map(|f| f / (f + t)).sum();
    let den: f64 = member_densities.iter().map(|f| 1.0 / (f + t)).sum();
    num / den
}

/// Centered finite difference of `cdf` at `x` with half-width `h`.
pub fn finite_difference_density(cdf: &PiecewiseLinearCdf, x: f64, h: f64) -> f64 {
    let f = |t: f64| cdf.eval(t, crate::cdf::FlatRule::Midpoint);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn par_trials<T, F>(opts: &VerifyOptions, suite: Suite, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    (0..n).into_par_iter().map(|i| f(&mut trial_rng(opts.seed, suite, i))).collect()
}

fn mean_of_means(cdfs: &[PiecewiseLinearCdf]) -> f64 {
    cdfs.iter().map(PiecewiseLinearCdf::mean).sum::<f64>() / cdfs.len() as f64
}

fn suite_mean(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let residuals = par_trials(opts, Suite::Mean, opts.trials, |rng| {
        let set = random_set(rng, 2, 6);
        let target = mean_of_means(&set);
        (1..=89)
            .map(|t| Ok((angular_combine_exact(&set, f64::from(t), None)?.mean() - target).abs()))
            .collect::<Result<Vec<f64>>>()
    })?;
    Ok(vec![Check::measured("angular mean equals mean of means", &residuals.concat(), 1e-9)])
}

fn suite_variance(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let sharp = par_trials(opts, Suite::Variance, opts.trials, |rng| {
        let set = random_set(rng, 2, 6);
        let v = vertical_combine(&set, &Aggregator::Mean)?.moments().variance;
        (1..=89)
            .map(|t| Ok(angular_combine_exact(&set, f64::from(t), None)?.moments().variance - v))
            .collect::<Result<Vec<f64>>>()
    })?;
    let levels = HUB_LEVELS;
    let mono = par_trials(opts, Suite::Variance, opts.trials, |rng| {
        // Separate stream range from the sharpness trials.
        let _ = rng.random::<u64>();
        let k = rng.random_range(2..=5usize);
        let sd = rng.random_range(0.2..1.5);
        let set = (0..k)
            .map(|_| gaussian_cdf(rng.random_range(-2.0..2.0), sd, &levels))
            .collect::<Result<Vec<_>>>()?;
        let vars = (0..=18)
            .map(|j| {
                let spec = CombinationSpec::new(Direction::Angular { theta_deg: 5.0 * j as f64 }, Aggregator::Mean);
                Ok(spec.combine(&set)?.moments().variance)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(vars.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max))
    })?;
    let m = opts.grid_points;
    let symmetry = par_trials(opts, Suite::Variance, opts.trials, |rng| {
        let _ = rng.random::<[u64; 2]>();
        let sd = rng.random_range(0.2..1.5);
        let pair = [gaussian_cdf(rng.random_range(-2.0..0.0), sd, &levels)?, gaussian_cdf(rng.random_range(0.0..2.0), sd, &levels)?];
        let theta = rng.random_range(1.0..89.0);
        let pool = angular_combine_grid(&pair, theta, &Aggregator::Mean, m)?;
        let mu = mean_of_means(&pair);
        let f = |x: f64| pool.eval(x, crate::cdf::FlatRule::Midpoint);
        Ok((0..=50)
            .map(|j| {
                let z = 3.0 * sd * j as f64 / 50.0;
                (f(mu - z) + f(mu + z) - 1.0).abs()
            })
            .fold(0.0, f64::max))
    })?;
    Ok(vec![
        Check::measured("angular variance at most vertical variance", &sharp.concat(), 1e-9),
        Check::measured("variance nondecreasing in angle (equal-scale Gaussians)", &mono, 1e-6),
        Check::measured("two equal-scale symmetric members pool symmetrically", &symmetry, 2.0 / m as f64),
    ])
}

/// Trapezoid rule for the CRPS integral with `n` nodes, split at the
/// observation and at every jump so each piece has a continuous integrand.
pub fn crps_trapezoid(cdf: &PiecewiseLinearCdf, z: f64, n: usize) -> f64 {
    let lo = cdf.lower().min(z);
    let hi = cdf.upper().max(z);
    let mut cuts = vec![lo, hi, z];
    cuts.extend(cdf.knots().windows(2).filter(|w| w[0].0 == w[1].0).map(|w| w[0].0));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let total = hi - lo;
    let mut sum = 0.0;
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let pieces = (((b - a) / total) * n as f64).ceil().max(1.0) as usize;
        let h = (b - a) / pieces as f64;
        let step = if b <= z { 0.0 } else { 1.0 };
        // One-sided limits at the piece ends keep jumps out of the integrand.
        let g = |x: f64, side: usize| {
            let (l, r) = cdf.eval_limits(x);
            let fx = if side == 0 { r } else if side == 1 { l } else { cdf.eval(x, crate::cdf::FlatRule::Midpoint) };
            (fx - step).powi(2)
        };
        let mut s = 0.5 * (g(a, 0) + g(b, 1));
        for i in 1..pieces {
            s += g(a + i as f64 * h, 2);
        }
        sum += s * h;
    }
    sum
}

fn suite_crps(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let bound = par_trials(opts, Suite::Crps, opts.trials, |rng| {
        let set = random_set(rng, 2, 6);
        let lo = set.iter().map(|c| c.lower()).fold(f64::INFINITY, f64::min);
        let hi = set.iter().map(|c| c.upper()).fold(f64::NEG_INFINITY, f64::max);
        let z = rng.random_range(lo - 1.0..hi + 1.0);
        let direction = match rng.random_range(0..5) {
            0 => Direction::Vertical,
            1 => Direction::Horizontal,
            2 => Direction::Angular { theta_deg: 15.0 },
            3 => Direction::Angular { theta_deg: 45.0 },
            _ => Direction::Angular { theta_deg: 75.0 },
        };
        let pool = CombinationSpec::new(direction, Aggregator::Mean).combine(&set)?;
        let avg = set.iter().map(|c| crps(c, z)).sum::<f64>() / set.len() as f64;
        Ok(crps(&pool, z) - avg)
    })?;
    let n_quad = opts.trials.min(100);
    let quad = par_trials(opts, Suite::Crps, n_quad, |rng| {
        let _ = rng.random::<u64>();
        let c = random_cdf(rng);
        let z = rng.random_range(c.lower() - 1.0..c.upper() + 1.0);
        let exact = crps(&c, z);
        Ok((exact - crps_trapezoid(&c, z, 100_000)).abs() / exact.abs().max(f64::MIN_POSITIVE))
    })?;
    Ok(vec![
        Check::measured("pooled CRPS at most mean member CRPS", &bound, 1e-9),
        Check::measured("closed form matches trapezoid quadrature (relative)", &quad, 1e-6),
    ])
}

fn suite_median(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let m = opts.grid_points;
    let ks: Vec<usize> = match opts.median_k {
        Some(k) => vec![k],
        None => vec![3, 5, 7],
    };
    ks.into_iter()
        .map(|k| {
            let name = format!("vertical and 45-degree medians agree (k = {k})");
            if k % 2 == 0 || k == 0 {
                return Ok(Check::skipped(&name, "k must be odd"));
            }
            let gaps = par_trials(opts, Suite::Median, opts.trials, |rng| {
                let set: Vec<_> = (0..k).map(|_| random_cdf(rng)).collect();
                let v = median_combine(&set, Direction::Vertical, m)?;
                let a = median_combine(&set, Direction::Angular { theta_deg: 45.0 }, m)?;
                Ok(sup_distance(&v, &a))
            })?;
            Ok(Check::measured(&name, &gaps, 2.0 / m as f64))
        })
        .collect()
}

/// Relative gaps between the finite-difference density of the grid route and
/// the closed-form angular density, at interior points of one two-Gaussian
/// fixture.
pub fn density_formula_gaps(means: [f64; 2], sds: [f64; 2], theta_deg: f64, m: usize) -> Result<Vec<f64>> {
    let levels = fine_levels(10_000);
    let set = [gaussian_cdf(means[0], sds[0], &levels)?, gaussian_cdf(means[1], sds[1], &levels)?];
    let normals = [
        Normal::new(means[0], sds[0]).map_err(|e| Error::invalid(e.to_string()))?,
        Normal::new(means[1], sds[1]).map_err(|e| Error::invalid(e.to_string()))?,
    ];
    let grid = angular_combine_grid(&set, theta_deg, &Aggregator::Mean, m)?;
    let frame = ScaledFrame::covering(set.iter())?;
    let scaled: Vec<Vec<(f64, f64)>> = set.iter().map(|c| c.scaled(&frame)).collect();
    let h = 5.0 * frame.width() / m as f64;
    let mut gaps = Vec::new();
    for j in 1..40 {
        let d = j as f64 / 40.0;
        let hits: Vec<(f64, f64)> = scaled.iter().map(|k| intersect_scaled(k, theta_deg, d)).collect();
        let p = 0.5 * (hits[0].1 + hits[1].1);
        // Outside the finest level a member is a linear extension, not the
        // Gaussian whose density the formula uses.
        if !(0.05..=0.95).contains(&p) || hits.iter().any(|h| !(0.001..=0.999).contains(&h.1)) {
            continue;
        }
        let dens: Vec<f64> = hits
            .iter()
            .zip(&normals)
            .map(|(&(u, _), n)| n.pdf(frame.unscale(u)) * frame.width())
            .collect();
        let formula = angular_density(&dens, theta_deg) / frame.width();
        let x = frame.unscale(0.5 * (hits[0].0 + hits[1].0));
        let fd = finite_difference_density(&grid, x, h);
        gaps.push((fd - formula).abs() / formula);
    }
    Ok(gaps)
}

/// The two Gaussians of the running example, finely discretized.
pub fn example_pair() -> Result<Vec<PiecewiseLinearCdf>> {
    let levels = fine_levels(10_000);
    Ok(vec![gaussian_cdf(-0.15, 0.1, &levels)?, gaussian_cdf(0.15, 0.1, &levels)?])
}

/// Density of the exact angular average of the example pair at its mean
/// (zero) relative to the density `offset` away: below 1 means a dip.
pub fn example_center_ratio(theta_deg: f64, offset: f64) -> Result<f64> {
    let pool = CombinationSpec::new(Direction::Angular { theta_deg }, Aggregator::Mean).combine(&example_pair()?)?;
    let h = 0.005;
    let centre = finite_difference_density(&pool, 0.0, h);
    let side = 0.5 * (finite_difference_density(&pool, offset, h) + finite_difference_density(&pool, -offset, h));
    Ok(centre / side)
}

fn suite_pdf(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let n = opts.trials.clamp(1, 20);
    let gaps = par_trials(opts, Suite::Pdf, n, |rng| {
        let means = [rng.random_range(-1.0..0.0), rng.random_range(0.0..1.0)];
        let sds = [rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)];
        let theta = rng.random_range(10.0..80.0);
        density_formula_gaps(means, sds, theta, 10_001)
    })?;
    let dip = example_center_ratio(88.0, 0.05)?;
    let no_dip = example_center_ratio(45.0, 0.05)?;
    Ok(vec![
        Check::measured("grid density matches closed form (relative, m = 10001)", &gaps.concat(), 1e-2),
        // ratio - 1 must be negative at 88 degrees and positive at 45.
        Check { status: if dip < 1.0 { Status::Pass } else { Status::Fail }, ..Check::measured("density dips at the mean at 88 degrees", &[dip - 1.0], 0.0) },
        Check { status: if no_dip > 1.0 { Status::Pass } else { Status::Fail }, ..Check::measured("no dip at the mean at 45 degrees", &[1.0 - no_dip], 0.0) },
    ])
}

/// Gap allowed by the line spacing alone: adjacent lines are
/// `(1 + tan theta) / (m + 1)` apart in probability, and both routes pass
/// through the same points on every line.
pub fn line_spacing_bound(theta_deg: f64, m: usize) -> f64 {
    (1.0 + theta_deg.to_radians().tan()) / (m + 1) as f64
}

fn suite_limits(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let m = opts.grid_points;
    let mean = Aggregator::Mean;
    let gaps = par_trials(opts, Suite::Limits, opts.trials, |rng| {
        let set = random_set(rng, 2, 5);
        let grid_vs_exact = |set: &[PiecewiseLinearCdf], t: f64| -> Result<f64> {
            Ok(sup_distance(&angular_combine_grid(set, t, &mean, m)?, &angular_combine_exact(set, t, None)?))
        };
        let mut out = vec![sup_distance(&angular_combine_grid(&set, 0.0, &mean, m)?, &horizontal_combine(&set, &mean)?)];
        for t in [15.0, 45.0, 75.0] {
            out.push(grid_vs_exact(&set, t)?);
        }
        // Above 45 degrees the spacing bound exceeds 2/m, and at 90 degrees a
        // jump between two anchors is smeared over the cell whatever m is, so
        // these angles are held to 2/m on forecast-shaped members.
        let forecasts = forecast_like_set(rng, 2, 5)?;
        out.push(grid_vs_exact(&forecasts, 75.0)?);
        out.push(sup_distance(&angular_combine_grid(&forecasts, 90.0, &mean, m)?, &vertical_combine(&forecasts, &mean)?));
        Ok(out)
    })?;
    let column = |i: usize| gaps.iter().map(|g| g[i]).collect::<Vec<_>>();
    let tol = 2.0 / m as f64;
    Ok(vec![
        Check::measured("grid at 0 degrees matches horizontal", &column(0), tol),
        Check::measured("grid at 90 degrees matches vertical (hub-shaped members)", &column(5), tol),
        Check::measured("exact and grid routes agree at 15 degrees", &column(1), tol),
        Check::measured("exact and grid routes agree at 45 degrees", &column(2), tol),
        Check::measured("exact and grid routes agree at 75 degrees (hub-shaped members)", &column(4), tol),
        Check::measured(
            "exact and grid routes agree at 75 degrees within the line spacing",
            &column(3),
            line_spacing_bound(75.0, m),
        ),
    ])
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    if opts.grid_points == 0 {
        return Err(Error::invalid("grid_points must be positive"));
    }
    let checks = match suite {
        Suite::Mean => suite_mean(opts)?,
        Suite::Variance => suite_variance(opts)?,
        Suite::Crps => suite_crps(opts)?,
        Suite::Median => suite_median(opts)?,
        Suite::Pdf => suite_pdf(opts)?,
        Suite::Limits => suite_limits(opts)?,
    };
    Ok(SuiteReport { suite, checks })
}
