//! Raw monitoring CSV ingestion and daily aggregation.
//!
//! Input is long-format: one row per (timestamp, station, pollutant) with a
//! concentration value. Timestamps are read on the data's own civil clock;
//! an explicit UTC offset is accepted but the local wall time is kept, so a
//! calendar day is always 00:00–23:59 local time.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_COVERAGE: f64 = 0.75;
pub const HOURS_PER_DAY: usize = 24;
const MISSING_MARKERS: [&str; 3] = ["", "NA", "NaN"];
/// Row-level warnings kept verbatim; the count is always exact.
const MAX_WARNINGS: usize = 50;

/// Column names of the four mandatory fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub station: String,
    pub pollutant: String,
    pub value: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            station: "station".into(),
            pollutant: "pollutant".into(),
            value: "value".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub timestamp: NaiveDateTime,
    pub value: Option<f64>,
}

/// Observations of one pollutant at one station, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSeries {
    pub station_id: String,
    pub pollutant: String,
    pub samples: Vec<Sample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    /// Sorted by (station, pollutant).
    pub series: Vec<RawSeries>,
    pub malformed_rows: usize,
    pub warnings: Vec<String>,
}

pub fn parse_csv(path: &Path, schema: &CsvSchema) -> Result<ParseOutcome> {
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_reader(file, schema, path)
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Some(dt.naive_local());
    }
    const FORMATS: [&str; 4] = [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ];
    FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .or_else(|| {
            NaiveDate::parse_from_str(raw, "%Y-%m-%d")
                .ok()
                .and_then(|d| d.and_hms_opt(0, 0, 0))
        })
}

enum ValueCell {
    Missing,
    Present(f64),
    Invalid,
}

fn parse_value(raw: &str) -> ValueCell {
    let raw = raw.trim();
    if MISSING_MARKERS.contains(&raw) {
        return ValueCell::Missing;
    }
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => ValueCell::Present(v),
        _ => ValueCell::Invalid,
    }
}

/// Parses long-format monitoring data from any reader; `source` names it in
/// errors.
pub fn parse_reader<R: Read>(reader: R, schema: &CsvSchema, source: &Path) -> Result<ParseOutcome> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: source.to_path_buf(),
        source: e,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::Headers)
        .from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let i_ts = column(&schema.timestamp)?;
    let i_st = column(&schema.station)?;
    let i_po = column(&schema.pollutant)?;
    let i_va = column(&schema.value)?;

    let mut groups: BTreeMap<(String, String), Vec<Sample>> = BTreeMap::new();
    let mut malformed = 0usize;
    let mut warnings = Vec::new();
    let mut warn = |line: u64, msg: String, warnings: &mut Vec<String>| {
        malformed += 1;
        if warnings.len() < MAX_WARNINGS {
            warnings.push(format!("{}:{line}: {msg}", source.display()));
        }
    };

    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let (station, pollutant) = (field(i_st), field(i_po));
        if station.is_empty() || pollutant.is_empty() {
            warn(line, "empty station or pollutant".into(), &mut warnings);
            continue;
        }
        let Some(timestamp) = parse_timestamp(field(i_ts)) else {
            warn(
                line,
                format!("unparseable timestamp '{}'", field(i_ts)),
                &mut warnings,
            );
            continue;
        };
        let value = match parse_value(field(i_va)) {
            ValueCell::Missing => None,
            ValueCell::Present(v) => Some(v),
            ValueCell::Invalid => {
                warn(
                    line,
                    format!("invalid concentration '{}'", field(i_va)),
                    &mut warnings,
                );
                continue;
            }
        };
        groups
            .entry((station.to_string(), pollutant.to_string()))
            .or_default()
            .push(Sample { timestamp, value });
    }

    Ok(ParseOutcome {
        series: collect_series(groups)?,
        malformed_rows: malformed,
        warnings,
    })
}

fn collect_series(groups: BTreeMap<(String, String), Vec<Sample>>) -> Result<Vec<RawSeries>> {
    let mut series = Vec::with_capacity(groups.len());
    for ((station_id, pollutant), mut samples) in groups {
        samples.sort_by_key(|s| s.timestamp);
        if let Some(w) = samples
            .windows(2)
            .find(|w| w[0].timestamp == w[1].timestamp)
        {
            return Err(Error::DuplicateTimestamp {
                station: station_id,
                pollutant,
                timestamp: w[0].timestamp.to_string(),
            });
        }
        series.push(RawSeries {
            station_id,
            pollutant,
            samples,
        });
    }
    Ok(series)
}

/// Combines several parsed files; a key observed twice at the same time is
/// still a duplicate.
pub fn merge_outcomes(parts: Vec<ParseOutcome>) -> Result<ParseOutcome> {
    let mut groups: BTreeMap<(String, String), Vec<Sample>> = BTreeMap::new();
    let mut malformed = 0;
    let mut warnings = Vec::new();
    for part in parts {
        malformed += part.malformed_rows;
        warnings.extend(part.warnings);
        for s in part.series {
            groups
                .entry((s.station_id, s.pollutant))
                .or_default()
                .extend(s.samples);
        }
    }
    warnings.truncate(MAX_WARNINGS);
    Ok(ParseOutcome {
        series: collect_series(groups)?,
        malformed_rows: malformed,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Period {
    Full,
    Before,
    During,
}

impl Period {
    pub fn as_str(self) -> &'static str {
        match self {
            Period::Full => "full",
            Period::Before => "before",
            Period::During => "during",
        }
    }
}

/// Inclusive calendar window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::invalid(format!(
                "window end {end} precedes start {start}"
            )));
        }
        Ok(DateWindow { start, end })
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.start.iter_days().take_while(move |d| *d <= self.end)
    }
}

/// Daily means of one station/pollutant; day `i` (0-based) sits at `t = i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyGrid {
    pub station_id: String,
    pub pollutant: String,
    pub period: Period,
    pub dates: Vec<NaiveDate>,
    pub y: Vec<Option<f64>>,
}

impl DailyGrid {
    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Day indices `1..=len` as abscissas.
    pub fn t(&self) -> Vec<f64> {
        (1..=self.len()).map(|i| i as f64).collect()
    }

    pub fn observed(&self) -> impl Iterator<Item = f64> + '_ {
        self.y.iter().flatten().copied()
    }

    pub fn records(&self) -> Vec<DailyRecord> {
        self.y
            .iter()
            .enumerate()
            .map(|(i, y)| DailyRecord {
                station_id: self.station_id.clone(),
                pollutant: self.pollutant.clone(),
                period: self.period,
                t: i + 1,
                y: *y,
            })
            .collect()
    }
}

/// One row of the daily-grid CSV/JSON output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyRecord {
    pub station_id: String,
    pub pollutant: String,
    pub period: Period,
    pub t: usize,
    pub y: Option<f64>,
}

/// Mean of the present values of each calendar day whose coverage
/// (present / 24) reaches `min_coverage`; other days are missing. Without a
/// window the grid spans the first to the last sampled day.
pub fn daily_average(
    s: &RawSeries,
    min_coverage: f64,
    window: Option<DateWindow>,
) -> Result<DailyGrid> {
    if !(min_coverage > 0.0 && min_coverage <= 1.0) {
        return Err(Error::invalid(format!(
            "min_coverage must lie in (0, 1], got {min_coverage}"
        )));
    }
    let stamps = s.samples.iter().map(|x| x.timestamp);
    let (Some(first), Some(last)) = (stamps.clone().min(), stamps.max()) else {
        return Err(Error::EmptySeries {
            station: s.station_id.clone(),
            pollutant: s.pollutant.clone(),
        });
    };
    let window = match window {
        Some(w) => w,
        None => DateWindow::new(first.date(), last.date())?,
    };
    let mut per_day: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for sample in &s.samples {
        if let Some(v) = sample.value {
            let e = per_day.entry(sample.timestamp.date()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    let dates: Vec<NaiveDate> = window.days().collect();
    let y = dates
        .iter()
        .map(|d| match per_day.get(d) {
            Some(&(sum, count)) if count as f64 / HOURS_PER_DAY as f64 >= min_coverage - 1e-12 => {
                Some(sum / count as f64)
            }
            _ => None,
        })
        .collect();
    Ok(DailyGrid {
        station_id: s.station_id.clone(),
        pollutant: s.pollutant.clone(),
        period: Period::Full,
        dates,
        y,
    })
}

/// Splits at `boundary`: days up to and including it are `before`, later
/// days `during`. Both parts must be nonempty.
pub fn period_split(g: &DailyGrid, boundary: NaiveDate) -> Result<(DailyGrid, DailyGrid)> {
    let (Some(&first), Some(&last)) = (g.dates.first(), g.dates.last()) else {
        return Err(Error::invalid("cannot split an empty grid"));
    };
    if boundary < first || boundary >= last {
        return Err(Error::invalid(format!(
            "boundary {boundary} outside the grid range [{first}, {last})"
        )));
    }
    let cut = g.dates.partition_point(|d| *d <= boundary);
    let part = |range: std::ops::Range<usize>, period| DailyGrid {
        station_id: g.station_id.clone(),
        pollutant: g.pollutant.clone(),
        period,
        dates: g.dates[range.clone()].to_vec(),
        y: g.y[range].to_vec(),
    };
    Ok((
        part(0..cut, Period::Before),
        part(cut..g.len(), Period::During),
    ))
}

/// Fills missing days by linear interpolation between observed neighbours;
/// leading and trailing gaps take the nearest observed value.
pub fn interpolate_missing(g: &DailyGrid) -> Result<Vec<f64>> {
    interpolate_values(&g.y).ok_or_else(|| {
        Error::AllMissing(format!(
            "station '{}', pollutant '{}', period {}",
            g.station_id,
            g.pollutant,
            g.period.as_str()
        ))
    })
}

/// Gap filling on an equally spaced sequence; `None` if nothing is observed.
pub fn interpolate_values(y: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = y
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    if known.is_empty() {
        return None;
    }
    let mut out = Vec::with_capacity(y.len());
    let mut next = 0;
    for i in 0..y.len() {
        while next < known.len() && known[next].0 < i {
            next += 1;
        }
        let v = match (next.checked_sub(1).map(|k| known[k]), known.get(next)) {
            (_, Some(&(j, v))) if j == i => v,
            (Some((i0, v0)), Some(&(i1, v1))) => {
                v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
            }
            (Some((_, v0)), None) => v0,
            (None, Some(&(_, v1))) => v1,
            (None, None) => unreachable!("known is nonempty"),
        };
        out.push(v);
    }
    Some(out)
}

/// Hourly profiles (24 civil hours) for every day of `window`; several
/// samples in one hour are averaged.
pub fn hourly_profiles(s: &RawSeries, window: DateWindow) -> Vec<(NaiveDate, Vec<Option<f64>>)> {
    let mut acc: BTreeMap<NaiveDate, [(f64, usize); HOURS_PER_DAY]> = BTreeMap::new();
    for sample in &s.samples {
        let Some(v) = sample.value else { continue };
        let day = sample.timestamp.date();
        if day < window.start || day > window.end {
            continue;
        }
        let slot = &mut acc.entry(day).or_insert([(0.0, 0); HOURS_PER_DAY])
            [sample.timestamp.hour() as usize];
        slot.0 += v;
        slot.1 += 1;
    }
    window
        .days()
        .map(|d| {
            let hours = match acc.get(&d) {
                Some(h) => h
                    .iter()
                    .map(|&(s, c)| (c > 0).then(|| s / c as f64))
                    .collect(),
                None => vec![None; HOURS_PER_DAY],
            };
            (d, hours)
        })
        .collect()
}

/// Net and percentage change of the period means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationRow {
    pub pollutant: String,
    pub station_id: String,
    pub mean_before: f64,
    pub mean_during: f64,
    pub net: f64,
    /// `None` when `mean_before` is zero.
    pub pct: Option<f64>,
}

fn period_mean(g: &DailyGrid) -> Result<f64> {
    let (sum, count) = g.observed().fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if count == 0 {
        return Err(Error::AllMissing(format!(
            "station '{}', pollutant '{}', period {}",
            g.station_id,
            g.pollutant,
            g.period.as_str()
        )));
    }
    Ok(sum / count as f64)
}

pub fn variation_from_means(
    station_id: &str,
    pollutant: &str,
    mean_before: f64,
    mean_during: f64,
) -> VariationRow {
    let net = mean_during - mean_before;
    VariationRow {
        pollutant: pollutant.to_string(),
        station_id: station_id.to_string(),
        mean_before,
        mean_during,
        net,
        pct: (mean_before != 0.0).then(|| 100.0 * net / mean_before),
    }
}

pub fn variation_table(before: &DailyGrid, during: &DailyGrid) -> Result<VariationRow> {
    if before.station_id != during.station_id || before.pollutant != during.pollutant {
        return Err(Error::mismatch(format!(
            "comparing {}/{} with {}/{}",
            before.station_id, before.pollutant, during.station_id, during.pollutant
        )));
    }
    Ok(variation_from_means(
        &before.station_id,
        &before.pollutant,
        period_mean(before)?,
        period_mean(during)?,
    ))
}

/// Station metadata from the sidecar file (`id,type,name`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationInfo {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub name: String,
}

pub fn read_stations(path: &Path) -> Result<Vec<StationInfo>> {
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    for col in ["id", "type"] {
        if !headers.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.to_string()));
        }
    }
    let mut out: Vec<StationInfo> = Vec::new();
    for rec in rdr.deserialize() {
        let info: StationInfo = rec.map_err(csv_err)?;
        if info.id.is_empty() || info.kind.is_empty() {
            return Err(Error::invalid(format!(
                "{}: station entries need both id and type",
                path.display()
            )));
        }
        out.push(info);
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

fn write_csv_rows<W: Write, T: Serialize>(rows: &[T], out: W, what: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Csv {
            path: what.into(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| Error::Io {
        path: what.into(),
        source: e,
    })
}

pub fn write_daily_csv<W: Write>(grids: &[DailyGrid], out: W) -> Result<()> {
    let rows: Vec<DailyRecord> = grids.iter().flat_map(|g| g.records()).collect();
    write_csv_rows(&rows, out, "<daily grid>")
}

pub fn write_variation_csv<W: Write>(rows: &[VariationRow], out: W) -> Result<()> {
    write_csv_rows(rows, out, "<variation table>")
}
