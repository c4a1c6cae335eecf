mod common;

use common::{dir_contents, fdanova, fixture, path_str, POLLUTANTS, STATIONS};

fn read_csv(path: &std::path::Path) -> Vec<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(String::from).collect())
        .collect()
}

fn assert_ok(out: &std::process::Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn descriptives_twenty_rows_sorted() {
    let fx = fixture();
    let out_dir = fx.dir.path().join("desc");
    let out = fdanova(&[
        "descriptives",
        "-i",
        path_str(&fx.data),
        "--out",
        path_str(&out_dir),
    ]);
    assert_ok(&out);
    let rows = read_csv(&out_dir.join("variation.csv"));
    assert_eq!(
        rows[0],
        [
            "pollutant",
            "station_id",
            "mean_before",
            "mean_during",
            "net",
            "pct"
        ]
    );
    assert_eq!(rows.len(), 21);
    let mut expected: Vec<(String, String)> = POLLUTANTS
        .iter()
        .flat_map(|(p, _)| STATIONS.iter().map(|(s, _)| (p.to_string(), s.to_string())))
        .collect();
    expected.sort();
    let got: Vec<(String, String)> = rows[1..]
        .iter()
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect();
    assert_eq!(got, expected);
    for r in &rows[1..] {
        let before: f64 = r[2].parse().unwrap();
        let net: f64 = r[4].parse().unwrap();
        let pct: f64 = r[5].parse().unwrap();
        assert!((pct * before - 100.0 * net).abs() < 1e-9 * before.abs().max(1.0));
        assert!(
            net < 0.0,
            "fixture concentrations drop in the second period"
        );
    }
    let daily = read_csv(&out_dir.join("daily.csv"));
    assert_eq!(daily[0], ["station_id", "pollutant", "period", "t", "y"]);
    assert_eq!(daily.len(), 1 + 20 * 78);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("descriptives.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "descriptives");
    assert_eq!(report["config"]["basis_dim"], 20);
    assert_eq!(report["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn constant_series_have_zero_variation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("const.csv");
    let mut text = String::from("timestamp,station,pollutant,value\n");
    let start = chrono::NaiveDate::from_ymd_opt(2020, 2, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    for h in 0..78 * 24 {
        let ts = start + chrono::Duration::hours(h);
        text.push_str(&format!("{},a,NO2,12.5\n", ts.format("%Y-%m-%d %H:%M")));
    }
    std::fs::write(&data, text).unwrap();
    let out_dir = dir.path().join("o");
    assert_ok(&fdanova(&[
        "descriptives",
        "-i",
        path_str(&data),
        "-o",
        path_str(&out_dir),
    ]));
    let rows = read_csv(&out_dir.join("variation.csv"));
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1][4].parse::<f64>().unwrap(), 0.0);
    assert_eq!(rows[1][5].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn empty_input_exits_with_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("empty.csv");
    std::fs::write(&data, "timestamp,station,pollutant,value\n").unwrap();
    let out = fdanova(&[
        "descriptives",
        "-i",
        path_str(&data),
        "-o",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no observations"));

    let out = fdanova(&["descriptives", "-o", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn duplicate_timestamp_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("dup.csv");
    std::fs::write(
        &data,
        "timestamp,station,pollutant,value\n2020-02-01T00:00:00,a,NO2,1\n2020-02-01T00:00:00,a,NO2,2\n",
    )
    .unwrap();
    let out = fdanova(&[
        "descriptives",
        "-i",
        path_str(&data),
        "-o",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("duplicate"));
}

#[test]
fn rm_fanova_table_layout() {
    let fx = fixture();
    let out_dir = fx.dir.path().join("rm");
    let out = fdanova(&[
        "rm-fanova",
        "-i",
        path_str(&fx.data),
        "--replications",
        "199",
        "--seed",
        "3",
        "--null-csv",
        "-o",
        path_str(&out_dir),
    ]);
    assert_ok(&out);
    let rows = read_csv(&out_dir.join("rm_fanova.csv"));
    assert_eq!(rows[0], ["pollutant", "Dn", "En"]);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["NO2", "PM10", "PM2.5", "benzene"]);
    for r in &rows[1..] {
        for cell in &r[1..] {
            let p: f64 = cell.parse().unwrap();
            assert!(p > 0.0 && p <= 1.0);
        }
    }
    let null = read_csv(&out_dir.join("null_NO2_Dn.csv"));
    assert_eq!(null.len(), 200);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("rm_fanova.json")).unwrap()).unwrap();
    assert_eq!(report["result"][0]["subjects"], 5);
    assert_eq!(report["result"][0]["tests"].as_array().unwrap().len(), 3);
}

#[test]
fn rm_fanova_station_days() {
    let fx = fixture();
    let out_dir = fx.dir.path().join("rmd");
    let out = fdanova(&[
        "rm-fanova",
        "-i",
        path_str(&fx.data),
        "--subject-unit",
        "station-day",
        "-p",
        "8",
        "--replications",
        "99",
        "-o",
        path_str(&out_dir),
    ]);
    assert_ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("rm_fanova.json")).unwrap()).unwrap();
    assert_eq!(report["result"][0]["subject_unit"], "station-day");
    assert_eq!(report["result"][0]["subjects"], 5 * 39);
}

#[test]
fn rm_fanova_needs_two_subjects() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("one.csv");
    let start = chrono::NaiveDate::from_ymd_opt(2020, 2, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    let mut text = String::from("timestamp,station,pollutant,value\n");
    for h in 0..78 * 24 {
        let ts = start + chrono::Duration::hours(h);
        text.push_str(&format!(
            "{},a,NO2,{}\n",
            ts.format("%Y-%m-%dT%H:%M:%S"),
            10 + h % 7
        ));
    }
    std::fs::write(&data, text).unwrap();
    let out = fdanova(&[
        "rm-fanova",
        "-i",
        path_str(&data),
        "-o",
        path_str(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least 2 subjects"));
}

#[test]
fn indep_fanova_table_layout() {
    let fx = fixture();
    let out_dir = fx.dir.path().join("ind");
    let out = fdanova(&[
        "indep-fanova",
        "-i",
        path_str(&fx.data),
        "--stations",
        path_str(&fx.stations),
        "--replications",
        "199",
        "-o",
        path_str(&out_dir),
    ]);
    assert_ok(&out);
    let rows = read_csv(&out_dir.join("indep_fanova.csv"));
    assert_eq!(rows[0], ["variable", "BL", "DL"]);
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["all", "NO2", "PM10", "PM2.5", "benzene"]);
    for r in &rows[1..] {
        for cell in &r[1..] {
            let p: f64 = cell.parse().unwrap();
            assert!(p > 0.0 && p <= 1.0);
        }
    }

    let out = fdanova(&[
        "indep-fanova",
        "-i",
        path_str(&fx.data),
        "--stations",
        path_str(&fx.stations),
        "--method",
        "anova",
        "-o",
        path_str(&out_dir),
    ]);
    assert_ok(&out);
}

#[test]
fn indep_fanova_missing_station_type() {
    let fx = fixture();
    let partial = fx.dir.path().join("partial.csv");
    std::fs::write(&partial, "id,type,name\nst1,UT,a\nst2,UT,b\nst3,UB,c\n").unwrap();
    let out = fdanova(&[
        "indep-fanova",
        "-i",
        path_str(&fx.data),
        "--stations",
        path_str(&partial),
        "-o",
        path_str(fx.dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("st4"));

    let out = fdanova(&[
        "indep-fanova",
        "-i",
        path_str(&fx.data),
        "-o",
        path_str(fx.dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stations file"));
}

#[test]
fn mfpca_and_smooth_outputs() {
    let fx = fixture();
    let out_dir = fx.dir.path().join("m");
    assert_ok(&fdanova(&[
        "mfpca",
        "-i",
        path_str(&fx.data),
        "--stations",
        path_str(&fx.stations),
        "-o",
        path_str(&out_dir),
    ]));
    let scores = read_csv(&out_dir.join("scores_before.csv"));
    assert_eq!(&scores[0][..2], ["subject", "group"]);
    assert_eq!(scores.len(), 6);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("mfpca.json")).unwrap()).unwrap();
    let eig = report["result"][0]["model"]["eigenvalues"]
        .as_array()
        .unwrap();
    assert_eq!(eig.len(), 4);

    assert_ok(&fdanova(&[
        "smooth",
        "-i",
        path_str(&fx.data),
        "-o",
        path_str(&out_dir),
    ]));
    let fitted = read_csv(&out_dir.join("fitted.csv"));
    assert_eq!(fitted[0], ["station_id", "pollutant", "period", "t", "y"]);
    assert_eq!(fitted.len(), 1 + 20 * 78);
}

#[test]
fn config_file_and_flag_override() {
    let fx = fixture();
    let cfg = fx.dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "inputs = [\"{}\"]\nbasis_dim = 12\nseed = 9\n",
            path_str(&fx.data).replace('\\', "/")
        ),
    )
    .unwrap();
    let out_dir = fx.dir.path().join("c");
    assert_ok(&fdanova(&[
        "descriptives",
        "--config",
        path_str(&cfg),
        "--seed",
        "10",
        "-o",
        path_str(&out_dir),
    ]));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("descriptives.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["basis_dim"], 12);
    assert_eq!(report["seed"], 10);
}

#[test]
fn simulate_study_and_draw() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sim.toml");
    std::fs::write(
        &scenario,
        r#"
[study]
repeats = 10
alpha = 0.05
basis_dim = 6
seed = 1

[study.permutation]
replications = 99

[[scenarios]]
name = "null"
interval = [0, 1]
noise_sd = 0.1
kernel = { kind = "exponential", variance = 1.0, range = 0.3 }

[scenarios.design]
design = "repeated_measures"
n = 10
means = [{ kind = "constant", value = 0 }, { kind = "constant", value = 0 }]
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("s");
    assert_ok(&fdanova(&[
        "simulate",
        "--scenario",
        path_str(&scenario),
        "-o",
        path_str(&out_dir),
    ]));
    let rows = read_csv(&out_dir.join("study.csv"));
    assert_eq!(
        rows[0],
        ["statistic", "alpha", "scenario", "rate", "stderr"]
    );
    assert_eq!(rows.len(), 4);

    assert_ok(&fdanova(&[
        "simulate",
        "--scenario",
        path_str(&scenario),
        "--draw-only",
        "-o",
        path_str(&out_dir),
    ]));
    let draw = read_csv(&out_dir.join("sim_null.csv"));
    assert_eq!(draw.len(), 1 + 10 * 2 * 39);
}

#[test]
fn reports_are_reproducible() {
    let fx = fixture();
    let run = |name: &str| {
        let out_dir = fx.dir.path().join(name);
        assert_ok(&fdanova(&[
            "rm-fanova",
            "-i",
            path_str(&fx.data),
            "--replications",
            "99",
            "-o",
            path_str(&out_dir),
        ]));
        dir_contents(&out_dir)
    };
    assert_eq!(run("a"), run("b"));
}
