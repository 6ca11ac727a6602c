use std::collections::BTreeMap;

use angular_pool::scoring::reliability_data;
use angular_pool::{
    cdf_from_quantiles, mqs, skill_score, Aggregator, BoundRule, CombinationSpec, Direction, FlatRule,
    PiecewiseLinearCdf, HUB_LEVELS,
};
use rayon::prelude::*;

use crate::commands::{direction, load_hub, output, read_cdf, read_cdfs};
use crate::{CliError, CliResult, PlotArgs, PlotKind};

pub fn export(a: &PlotArgs) -> CliResult<()> {
    let hub_mode = !a.hub.forecasts.is_empty();
    if hub_mode && !a.inputs.is_empty() {
        return Err(CliError::usage("give CDF files or --forecasts, not both"));
    }
    let rows = match a.what {
        PlotKind::Cdf => cdf_rows(a)?,
        PlotKind::Pdf => pdf_rows(a)?,
        PlotKind::Reliability => reliability_rows(a)?,
        PlotKind::ThetaSweep if hub_mode => sweep_hub_rows(a)?,
        PlotKind::ThetaSweep => sweep_cdf_rows(a)?,
    };
    let mut w = csv::Writer::from_writer(output(a.out.as_deref())?);
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

type Rows = Vec<Vec<String>>;

fn single_cdf(a: &PlotArgs) -> CliResult<PiecewiseLinearCdf> {
    match a.inputs.as_slice() {
        [path] => read_cdf(path),
        _ => Err(CliError::usage("exactly one CDF file is required")),
    }
}

fn grid(a: &PlotArgs, c: &PiecewiseLinearCdf, n: usize) -> CliResult<Vec<f64>> {
    let lo = a.from.unwrap_or(c.lower());
    let hi = a.to.unwrap_or(c.upper());
    if n < 2 || !(hi > lo) {
        return Err(CliError::usage("need at least two points on a nonempty range"));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn cdf_rows(a: &PlotArgs) -> CliResult<Rows> {
    let c = single_cdf(a)?;
    let mut rows = vec![vec!["x".to_string(), "p".to_string()]];
    match a.points {
        None => rows.extend(c.knots().iter().map(|(x, p)| vec![x.to_string(), p.to_string()])),
        Some(n) => rows.extend(
            grid(a, &c, n)?
                .into_iter()
                .map(|x| vec![x.to_string(), c.eval(x, FlatRule::Midpoint).to_string()]),
        ),
    }
    Ok(rows)
}

/// Centered differences; points whose window straddles a jump have no
/// density and say so.
fn pdf_rows(a: &PlotArgs) -> CliResult<Rows> {
    let c = single_cdf(a)?;
    let xs = grid(a, &c, a.points.unwrap_or(201))?;
    let h = a.h.unwrap_or(1e-3 * (c.upper() - c.lower()));
    if !(h > 0.0 && h.is_finite()) {
        return Err(CliError::usage("--h must be positive"));
    }
    let jumps: Vec<f64> = c.knots().windows(2).filter(|w| w[0].0 == w[1].0).map(|w| w[0].0).collect();
    let mut rows = vec![vec!["x".to_string(), "density".to_string(), "status".to_string()]];
    for x in xs {
        match jumps.iter().find(|&&j| (j - x).abs() <= h) {
            Some(j) => rows.push(vec![x.to_string(), String::new(), format!("undefined: jump at {j}")]),
            None => {
                let f = |t: f64| c.eval(t, FlatRule::Midpoint);
                rows.push(vec![x.to_string(), ((f(x + h) - f(x - h)) / (2.0 * h)).to_string(), "ok".into()]);
            }
        }
    }
    Ok(rows)
}

fn reliability_rows(a: &PlotArgs) -> CliResult<Rows> {
    let data = load_hub(&a.hub, true)?;
    let spec = CombinationSpec::new(direction(a.direction, a.theta)?, Aggregator::Mean);
    let mut pairs = Vec::new();
    for (key, cell) in &data.cells {
        let Some(x) = data.truth_at(&key.series, cell.target_date) else { continue };
        let forecast = match &a.team {
            Some(team) => match cell.forecasts.get(team) {
                Some(qf) => cdf_from_quantiles(qf, BoundRule::default())?,
                None => continue,
            },
            None => {
                let members = cell
                    .forecasts
                    .values()
                    .map(|qf| cdf_from_quantiles(qf, BoundRule::default()))
                    .collect::<Result<Vec<_>, _>>()?;
                spec.combine(&members)?
            }
        };
        pairs.push((forecast, x));
    }
    if pairs.is_empty() {
        return Err(CliError::new("invalid-input", "no forecasts with observed truth"));
    }
    let n = pairs.len() as f64;
    let mut rows = vec![["level", "fraction", "n", "lower", "upper"].map(String::from).to_vec()];
    for (level, frac) in reliability_data(&pairs, &HUB_LEVELS)? {
        // Normal approximation to the binomial 95% band around the level.
        let half = 1.96 * (level * (1.0 - level) / n).sqrt();
        rows.push(vec![
            level.to_string(),
            frac.to_string(),
            pairs.len().to_string(),
            (level - half).max(0.0).to_string(),
            (level + half).min(1.0).to_string(),
        ]);
    }
    Ok(rows)
}

fn angular(theta: u32) -> CombinationSpec {
    CombinationSpec::new(Direction::Angular { theta_deg: f64::from(theta) }, Aggregator::Mean)
}

fn sweep_cdf_rows(a: &PlotArgs) -> CliResult<Rows> {
    let members = read_cdfs(&a.inputs)?;
    if members.is_empty() {
        return Err(CliError::usage("no forecasts given"));
    }
    let moments = (0..=90u32)
        .into_par_iter()
        .map(|t| angular(t).combine(&members).map(|c| (t, c.moments())))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = vec![["theta", "mean", "variance"].map(String::from).to_vec()];
    rows.extend(moments.into_iter().map(|(t, m)| vec![t.to_string(), m.mean.to_string(), m.variance.to_string()]));
    Ok(rows)
}

/// Unweighted angular pools of every scored cell: mean MQS over all cells,
/// and skill per series against the horizontal pool (theta = 0).
fn sweep_hub_rows(a: &PlotArgs) -> CliResult<Rows> {
    let data = load_hub(&a.hub, true)?;
    let mut cells = Vec::new();
    for (key, cell) in &data.cells {
        let Some(x) = data.truth_at(&key.series, cell.target_date) else { continue };
        let members = cell
            .forecasts
            .values()
            .map(|qf| cdf_from_quantiles(qf, BoundRule::default()))
            .collect::<Result<Vec<_>, _>>()?;
        cells.push((key.series.clone(), members, x));
    }
    if cells.is_empty() {
        return Err(CliError::new("invalid-input", "no forecasts with observed truth"));
    }
    let per_theta = (0..=90u32)
        .into_par_iter()
        .map(|t| {
            let spec = angular(t);
            let mut by_series: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
            for (series, members, x) in &cells {
                let s = mqs(&spec.combine(members)?, *x, &HUB_LEVELS);
                let e = by_series.entry(series).or_default();
                e.0 += s;
                e.1 += 1;
            }
            Ok(by_series.into_values().map(|(sum, n)| sum / n as f64).collect::<Vec<f64>>())
        })
        .collect::<angular_pool::Result<Vec<_>>>()?;
    let total_cells = cells.len() as f64;
    let mut rows = vec![["theta", "mqs", "skill_mqs"].map(String::from).to_vec()];
    for (t, series_mqs) in per_theta.iter().enumerate() {
        let mean = cells_weighted_mean(&cells, series_mqs, total_cells);
        let skill = skill_score(series_mqs, &per_theta[0])?;
        rows.push(vec![t.to_string(), mean.to_string(), skill.to_string()]);
    }
    Ok(rows)
}

fn cells_weighted_mean(cells: &[(String, Vec<PiecewiseLinearCdf>, f64)], series_mqs: &[f64], total: f64) -> f64 {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (s, _, _) in cells {
        *counts.entry(s).or_default() += 1;
    }
    counts.values().zip(series_mqs).map(|(&n, m)| n as f64 * m).sum::<f64>() / total
}
