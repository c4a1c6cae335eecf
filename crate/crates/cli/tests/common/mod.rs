#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};

pub const STATIONS: [(&str, &str); 5] = [
    ("st1", "UT"),
    ("st2", "UT"),
    ("st3", "UB"),
    ("st4", "UB"),
    ("st5", "UB"),
];
pub const POLLUTANTS: [(&str, f64); 4] = [
    ("NO2", 35.0),
    ("PM10", 30.0),
    ("PM2.5", 20.0),
    ("benzene", 1.5),
];

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Uniform in [-1, 1), fixed per key.
fn jitter(key: u64) -> f64 {
    (splitmix(key) >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Hourly long-format CSV for 2020-02-01..2020-04-18 with a drop after
/// 2020-03-10; `missing_every` blanks every k-th value.
pub fn hourly_csv(missing_every: Option<usize>) -> String {
    let start = NaiveDate::from_ymd_opt(2020, 2, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let lockdown = NaiveDate::from_ymd_opt(2020, 3, 11).unwrap();
    let mut out = String::from("timestamp,station,pollutant,value\n");
    let mut k = 0usize;
    for (si, (station, kind)) in STATIONS.iter().enumerate() {
        for (pi, (pollutant, base)) in POLLUTANTS.iter().enumerate() {
            for h in 0..78 * 24 {
                let ts = start + Duration::hours(h);
                let day = (h / 24) as f64;
                let traffic = if *kind == "UT" { 1.3 } else { 1.0 };
                let drop = if ts.date() >= lockdown { 0.6 } else { 1.0 };
                let daily = 1.0 + 0.25 * (std::f64::consts::TAU * day / 7.0 + si as f64).sin();
                let hourly = 1.0 + 0.2 * (std::f64::consts::TAU * (h % 24) as f64 / 24.0).cos();
                let noise = 1.0 + 0.15 * jitter((si * 1000 + pi) as u64 * 100_000 + h as u64);
                let v = base * traffic * drop * daily * hourly * noise;
                k += 1;
                let cell = match missing_every {
                    Some(m) if k.is_multiple_of(m) => "NA".to_string(),
                    _ => format!("{v:.3}"),
                };
                writeln!(
                    out,
                    "{},{station},{pollutant},{cell}",
                    ts.format("%Y-%m-%dT%H:%M:%S")
                )
                .unwrap();
            }
        }
    }
    out
}

pub fn stations_csv() -> String {
    let mut out = String::from("id,type,name\n");
    for (id, kind) in STATIONS {
        writeln!(out, "{id},{kind},Station {id}").unwrap();
    }
    out
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: PathBuf,
    pub stations: PathBuf,
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let stations = dir.path().join("stations.csv");
    std::fs::write(&data, hourly_csv(Some(37))).unwrap();
    std::fs::write(&stations, stations_csv()).unwrap();
    Fixture {
        dir,
        data,
        stations,
    }
}

pub fn fdanova(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fdanova"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file of an output directory, sorted by name.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}
