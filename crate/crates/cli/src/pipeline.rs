//! Raw files to smoothed curve sets.

use std::collections::{BTreeMap, BTreeSet};

use fdanova_core::basis::{make_basis, CurveSet};
use fdanova_core::ingest::{
    self, daily_average, hourly_profiles, interpolate_values, merge_outcomes, period_split,
    DailyGrid, DateWindow, Period, RawSeries, StationInfo, HOURS_PER_DAY,
};
use fdanova_core::mfpca::MultiCurveSet;
use fdanova_core::PairedSample;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::report::{digest_file, InputDigest};

pub struct Dataset {
    pub series: Vec<RawSeries>,
    pub digests: Vec<InputDigest>,
    pub warnings: Vec<String>,
}

pub fn load_dataset(cfg: &RunConfig) -> CliResult<Dataset> {
    cfg.validate()?;
    let mut parts = Vec::with_capacity(cfg.inputs.len());
    let mut digests = Vec::new();
    for path in &cfg.inputs {
        digests.push(digest_file(path)?);
        parts.push(ingest::parse_csv(path, &cfg.schema)?);
    }
    if let Some(path) = &cfg.stations {
        digests.push(digest_file(path)?);
    }
    let merged = merge_outcomes(parts)?;
    if merged.series.is_empty() {
        return Err(CliError::input("input contains no observations"));
    }
    let mut warnings = merged.warnings;
    if merged.malformed_rows > 0 {
        warnings.push(format!("{} malformed rows skipped", merged.malformed_rows));
    }
    let mut series = merged.series;
    series.sort_by(|a, b| (&a.pollutant, &a.station_id).cmp(&(&b.pollutant, &b.station_id)));
    Ok(Dataset {
        series,
        digests,
        warnings,
    })
}

/// Daily grids of one station/pollutant over both periods.
pub struct StationPeriods {
    pub before: DailyGrid,
    pub during: DailyGrid,
}

/// Sorted by (pollutant, station), as the series are.
pub fn station_periods(ds: &Dataset, cfg: &RunConfig) -> CliResult<Vec<StationPeriods>> {
    let full = DateWindow::new(cfg.before_start, cfg.during_end)?;
    ds.series
        .iter()
        .map(|s| {
            let grid = daily_average(s, cfg.min_coverage, Some(full))?;
            let (before, mut during) = period_split(&grid, cfg.before_end)?;
            let skip = during.dates.partition_point(|d| *d < cfg.during_start);
            during.dates.drain(..skip);
            during.y.drain(..skip);
            Ok(StationPeriods { before, during })
        })
        .collect()
}

/// Smoothed daily-mean curves of one pollutant; stations are the subjects.
pub struct PollutantCurves {
    pub pollutant: String,
    pub before: CurveSet,
    pub during: CurveSet,
}

impl PollutantCurves {
    pub fn period(&self, period: Period) -> &CurveSet {
        match period {
            Period::During => &self.during,
            _ => &self.before,
        }
    }
}

fn smooth_grids(grids: &[&DailyGrid], p: usize) -> CliResult<CurveSet> {
    let len = grids[0].len();
    let basis = make_basis((1.0, len as f64), p)?;
    let t = grids[0].t();
    let ys = grids
        .iter()
        .map(|g| ingest::interpolate_missing(g))
        .collect::<fdanova_core::Result<Vec<_>>>()?;
    let labels = grids.iter().map(|g| g.station_id.clone()).collect();
    Ok(CurveSet::from_observations(basis, &t, &ys, labels)?)
}

/// Stations with no valid day in either period are dropped with a warning.
pub fn daily_curves(
    periods: &[StationPeriods],
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> CliResult<Vec<PollutantCurves>> {
    let mut by_pollutant: BTreeMap<&str, Vec<&StationPeriods>> = BTreeMap::new();
    for sp in periods {
        let empty = [&sp.before, &sp.during]
            .into_iter()
            .find(|g| g.observed().next().is_none());
        if let Some(g) = empty {
            warnings.push(format!(
                "station '{}' dropped for {}: no valid day in period {}",
                g.station_id,
                g.pollutant,
                g.period.as_str()
            ));
            continue;
        }
        by_pollutant
            .entry(&sp.before.pollutant)
            .or_default()
            .push(sp);
    }
    by_pollutant
        .into_iter()
        .map(|(pollutant, sps)| {
            let before: Vec<&DailyGrid> = sps.iter().map(|s| &s.before).collect();
            let during: Vec<&DailyGrid> = sps.iter().map(|s| &s.during).collect();
            Ok(PollutantCurves {
                pollutant: pollutant.to_string(),
                before: smooth_grids(&before, cfg.basis_dim)?,
                during: smooth_grids(&during, cfg.basis_dim)?,
            })
        })
        .collect()
}

fn profile_ok(hours: &[Option<f64>], min_coverage: f64) -> bool {
    let present = hours.iter().filter(|v| v.is_some()).count();
    present as f64 / HOURS_PER_DAY as f64 >= min_coverage - 1e-12
}

/// Station-day subjects: day `k` of the first period of a station is paired
/// with day `k` of the second. Pairs where either day falls short of the
/// coverage rule are skipped.
pub fn station_day_sample(
    ds: &Dataset,
    cfg: &RunConfig,
    pollutant: &str,
) -> CliResult<PairedSample> {
    let basis = make_basis((0.0, (HOURS_PER_DAY - 1) as f64), cfg.basis_dim)?;
    let t: Vec<f64> = (0..HOURS_PER_DAY).map(|h| h as f64).collect();
    let (mut labels, mut ys1, mut ys2) = (Vec::new(), Vec::new(), Vec::new());
    for s in ds.series.iter().filter(|s| s.pollutant == pollutant) {
        let before = hourly_profiles(s, cfg.before());
        let during = hourly_profiles(s, cfg.during());
        for (k, ((_, h1), (_, h2))) in before.iter().zip(&during).enumerate() {
            if !profile_ok(h1, cfg.min_coverage) || !profile_ok(h2, cfg.min_coverage) {
                continue;
            }
            let (Some(y1), Some(y2)) = (interpolate_values(h1), interpolate_values(h2)) else {
                continue;
            };
            labels.push(format!("{}#{:03}", s.station_id, k + 1));
            ys1.push(y1);
            ys2.push(y2);
        }
    }
    if labels.len() < 2 {
        return Err(CliError::input(format!(
            "{pollutant}: fewer than 2 complete station-day pairs"
        )));
    }
    let c1 = CurveSet::from_observations(basis.clone(), &t, &ys1, labels.clone())?;
    let c2 = CurveSet::from_observations(basis, &t, &ys2, labels)?;
    Ok(PairedSample::new(c1, c2)?)
}

/// Station type lookup; every station in the data must be listed.
pub fn station_types(
    stations: &[StationInfo],
    ids: impl IntoIterator<Item = String>,
    source: &str,
) -> CliResult<BTreeMap<String, String>> {
    let known: BTreeMap<&str, &str> = stations
        .iter()
        .map(|s| (s.id.as_str(), s.kind.as_str()))
        .collect();
    ids.into_iter()
        .map(|id| match known.get(id.as_str()) {
            Some(kind) => Ok((id, kind.to_string())),
            None => Err(CliError::input(format!(
                "station '{id}' has no type in {source}"
            ))),
        })
        .collect()
}

/// Stations observed for every pollutant, in sorted order.
pub fn common_stations(curves: &[PollutantCurves], warnings: &mut Vec<String>) -> Vec<String> {
    let all: BTreeSet<&String> = curves.iter().flat_map(|c| c.before.labels()).collect();
    let mut common = Vec::new();
    for id in all {
        if curves.iter().all(|c| c.before.labels().contains(id)) {
            common.push(id.clone());
        } else {
            warnings.push(format!(
                "station '{id}' dropped from the multivariate analysis: not every pollutant is available"
            ));
        }
    }
    common
}

/// Multivariate curve set of one period over `stations`, one variable per
/// pollutant.
pub fn multivariate(
    curves: &[PollutantCurves],
    period: Period,
    stations: &[String],
    groups: Vec<String>,
) -> CliResult<MultiCurveSet> {
    let names: Vec<String> = curves.iter().map(|c| c.pollutant.clone()).collect();
    let sets = curves
        .iter()
        .map(|c| {
            let cs = c.period(period);
            let idx: Vec<usize> = stations
                .iter()
                .map(|id| {
                    cs.labels()
                        .iter()
                        .position(|l| l == id)
                        .expect("common station present")
                })
                .collect();
            cs.select(&idx)
        })
        .collect::<Vec<_>>();
    Ok(MultiCurveSet::from_curvesets(&names, &sets, groups)?)
}
