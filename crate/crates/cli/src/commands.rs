use std::path::Path;

use fdanova_core::basis::{eval_curveset, Basis, CurveSet};
use fdanova_core::homogeneity::{fanova_indep, IndepConfig, IndepReport};
use fdanova_core::ingest::{self, read_stations, variation_table, Period, VariationRow};
use fdanova_core::mfpca::{choose_q, fit_mfpca, ComponentSelection, ModelExport};
use fdanova_core::rmfanova::{permutation_tests, PermutationConfig, Standardization, Statistic};
use fdanova_core::simulate::{
    sample_scenario, size_power_study, write_rates_csv, GpScenario, StudyConfig,
};
use fdanova_core::{Error, PairedSample, TestReport};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SubjectUnit};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, Dataset, PollutantCurves};
use crate::report::{csv_rows, digest_file, OutDir, Report};

const PERIODS: [Period; 2] = [Period::Before, Period::During];

pub fn descriptives(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let ds = pipeline::load_dataset(cfg)?;
    let mut warnings = ds.warnings.clone();
    let periods = pipeline::station_periods(&ds, cfg)?;
    let mut rows: Vec<VariationRow> = Vec::new();
    for sp in &periods {
        match variation_table(&sp.before, &sp.during) {
            Ok(row) => rows.push(row),
            Err(Error::AllMissing(what)) => warnings.push(format!("no valid day: {what}")),
            Err(e) => return Err(e.into()),
        }
    }
    if rows.is_empty() {
        return Err(CliError::input("no station has valid days in both periods"));
    }
    let grids: Vec<_> = periods
        .iter()
        .flat_map(|sp| [sp.before.clone(), sp.during.clone()])
        .collect();
    out.write_with("variation.csv", |buf| {
        Ok(ingest::write_variation_csv(&rows, buf)?)
    })?;
    out.write_with("daily.csv", |buf| Ok(ingest::write_daily_csv(&grids, buf)?))?;
    let report = Report::new("descriptives", cfg, cfg.seed, &ds.digests, &warnings, &rows)?;
    out.write_json("descriptives.json", &report)
}

fn curves(cfg: &RunConfig) -> CliResult<(Dataset, Vec<PollutantCurves>, Vec<String>)> {
    let ds = pipeline::load_dataset(cfg)?;
    let mut warnings = ds.warnings.clone();
    let periods = pipeline::station_periods(&ds, cfg)?;
    let curves = pipeline::daily_curves(&periods, cfg, &mut warnings)?;
    if curves.is_empty() {
        return Err(CliError::input("no pollutant has data in both periods"));
    }
    Ok((ds, curves, warnings))
}

#[derive(Serialize)]
struct SmoothedSet<'a> {
    pollutant: &'a str,
    period: Period,
    curves: &'a CurveSet,
}

#[derive(Serialize)]
struct FittedRow<'a> {
    station_id: &'a str,
    pollutant: &'a str,
    period: Period,
    t: f64,
    y: f64,
}

pub fn smooth(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let (ds, curves, warnings) = curves(cfg)?;
    let mut sets = Vec::new();
    let mut fitted = Vec::new();
    let evals: Vec<_> = curves
        .iter()
        .flat_map(|c| PERIODS.map(|period| (c, period)))
        .map(|(c, period)| {
            let cs = c.period(period);
            let (a, b) = cs.basis().interval();
            let grid: Vec<f64> = (a as usize..=b as usize).map(|t| t as f64).collect();
            Ok((c, period, grid.clone(), eval_curveset(cs, &grid)?))
        })
        .collect::<CliResult<_>>()?;
    for (c, period, grid, values) in &evals {
        let cs = c.period(*period);
        sets.push(SmoothedSet {
            pollutant: &c.pollutant,
            period: *period,
            curves: cs,
        });
        for (j, station) in cs.labels().iter().enumerate() {
            for (k, &t) in grid.iter().enumerate() {
                fitted.push(FittedRow {
                    station_id: station,
                    pollutant: &c.pollutant,
                    period: *period,
                    t,
                    y: values[(j, k)],
                });
            }
        }
    }
    out.write_with("fitted.csv", |buf| csv_rows(&fitted, buf))?;
    let report = Report::new("smooth", cfg, cfg.seed, &ds.digests, &warnings, &sets)?;
    out.write_json("smooth.json", &report)
}

#[derive(Serialize)]
struct RmResult {
    pollutant: String,
    subject_unit: SubjectUnit,
    subjects: usize,
    tests: Vec<TestReport>,
}

#[derive(Serialize)]
struct RmRow<'a> {
    pollutant: &'a str,
    #[serde(rename = "Dn")]
    dn: f64,
    #[serde(rename = "En")]
    en: f64,
}

pub fn rm_fanova(cfg: &RunConfig, out: &mut OutDir, null_csv: bool) -> CliResult<()> {
    let (ds, samples, warnings): (Dataset, Vec<(String, PairedSample)>, Vec<String>) =
        match cfg.subject_unit {
            SubjectUnit::Station => {
                let (ds, curves, warnings) = curves(cfg)?;
                let samples = curves
                    .into_iter()
                    .map(|c| {
                        Ok((
                            c.pollutant,
                            PairedSample::pair_by_label(c.before, c.during)?,
                        ))
                    })
                    .collect::<CliResult<_>>()?;
                (ds, samples, warnings)
            }
            SubjectUnit::StationDay => {
                let ds = pipeline::load_dataset(cfg)?;
                let mut pollutants: Vec<String> =
                    ds.series.iter().map(|s| s.pollutant.clone()).collect();
                pollutants.dedup();
                let samples = pollutants
                    .into_iter()
                    .map(|p| {
                        let ps = pipeline::station_day_sample(&ds, cfg, &p)?;
                        Ok((p, ps))
                    })
                    .collect::<CliResult<_>>()?;
                let warnings = ds.warnings.clone();
                (ds, samples, warnings)
            }
        };
    let perm = PermutationConfig {
        replications: cfg.replications,
        seed: cfg.seed,
        standardization: Standardization {
            grid_size: cfg.grid_size,
            ..Standardization::default()
        },
        keep_null: null_csv,
    };
    let mut results = Vec::new();
    for (pollutant, ps) in samples {
        if ps.len() < 2 {
            return Err(CliError::input(format!(
                "{pollutant}: the repeated-measures test needs at least 2 subjects, found {}",
                ps.len()
            )));
        }
        let mut tests = permutation_tests(&ps, &Statistic::ALL, &perm)?;
        if null_csv {
            for t in &mut tests {
                let name = format!("null_{pollutant}_{}.csv", t.statistic_name);
                out.write_with(&name, |buf| Ok(t.write_null_csv(buf)?))?;
                t.null_samples = None;
            }
        }
        results.push(RmResult {
            pollutant,
            subject_unit: cfg.subject_unit,
            subjects: ps.len(),
            tests,
        });
    }
    let p_of = |r: &RmResult, s: Statistic| {
        r.tests
            .iter()
            .find(|t| t.statistic_name == s)
            .map(|t| t.p_value)
            .expect("all statistics computed")
    };
    let table: Vec<RmRow> = results
        .iter()
        .map(|r| RmRow {
            pollutant: &r.pollutant,
            dn: p_of(r, Statistic::Dn),
            en: p_of(r, Statistic::En),
        })
        .collect();
    out.write_with("rm_fanova.csv", |buf| csv_rows(&table, buf))?;
    let report = Report::new("rm-fanova", cfg, cfg.seed, &ds.digests, &warnings, &results)?;
    out.write_json("rm_fanova.json", &report)
}

/// Group label per common station, from the sidecar file when one is given.
fn groups_for(cfg: &RunConfig, stations: &[String], required: bool) -> CliResult<Vec<String>> {
    let Some(path) = &cfg.stations else {
        if required {
            return Err(CliError::input(
                "station types are required: pass a stations file (id,type,name)",
            ));
        }
        return Ok(vec![String::new(); stations.len()]);
    };
    let info = read_stations(path)?;
    let types =
        pipeline::station_types(&info, stations.iter().cloned(), &path.display().to_string())?;
    Ok(stations.iter().map(|s| types[s].clone()).collect())
}

#[derive(Serialize)]
struct MfpcaPeriod {
    period: Period,
    selection: ComponentSelection,
    model: ModelExport,
}

pub fn mfpca(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let (ds, curves, mut warnings) = curves(cfg)?;
    let stations = pipeline::common_stations(&curves, &mut warnings);
    let groups = groups_for(cfg, &stations, false)?;
    let mut results = Vec::new();
    for period in PERIODS {
        let mcs = pipeline::multivariate(&curves, period, &stations, groups.clone())?;
        let model = fit_mfpca(&mcs)?;
        let selection = choose_q(&model, cfg.threshold)?;
        if model.scale_warning {
            warnings.push(format!(
                "{}: variable variances differ by more than two orders of magnitude",
                period.as_str()
            ));
        }
        let name = format!("scores_{}.csv", period.as_str());
        out.write_with(&name, |buf| Ok(model.write_scores_csv(selection.q, buf)?))?;
        results.push(MfpcaPeriod {
            period,
            model: model.export(Some(selection.q)),
            selection,
        });
    }
    let report = Report::new("mfpca", cfg, cfg.seed, &ds.digests, &warnings, &results)?;
    out.write_json("mfpca.json", &report)
}

#[derive(Serialize)]
struct IndepResult {
    period: Period,
    variable: String,
    report: IndepReport,
}

#[derive(Serialize)]
struct IndepRow {
    variable: String,
    #[serde(rename = "BL")]
    bl: f64,
    #[serde(rename = "DL")]
    dl: f64,
}

pub fn indep_fanova(cfg: &RunConfig, out: &mut OutDir) -> CliResult<()> {
    let (ds, curves, mut warnings) = curves(cfg)?;
    let stations = pipeline::common_stations(&curves, &mut warnings);
    let groups = groups_for(cfg, &stations, true)?;
    let indep = IndepConfig {
        threshold: cfg.threshold,
        method: cfg.method,
        replications: cfg.replications,
        seed: cfg.seed,
        alpha: cfg.alpha,
    };
    let mut results = Vec::new();
    for period in PERIODS {
        let mcs = pipeline::multivariate(&curves, period, &stations, groups.clone())?;
        results.push(IndepResult {
            period,
            variable: "all".into(),
            report: fanova_indep(&mcs, &indep)?,
        });
        for (h, c) in curves.iter().enumerate() {
            results.push(IndepResult {
                period,
                variable: c.pollutant.clone(),
                report: fanova_indep(&mcs.univariate(h)?, &indep)?,
            });
        }
    }
    let mut table = Vec::new();
    for variable in
        std::iter::once("all".to_string()).chain(curves.iter().map(|c| c.pollutant.clone()))
    {
        let p = |period: Period| {
            results
                .iter()
                .find(|r| r.period == period && r.variable == variable)
                .map(|r| r.report.test.global_p)
                .expect("every variable tested in every period")
        };
        table.push(IndepRow {
            bl: p(Period::Before),
            dl: p(Period::During),
            variable,
        });
    }
    out.write_with("indep_fanova.csv", |buf| csv_rows(&table, buf))?;
    let report = Report::new(
        "indep-fanova",
        cfg,
        cfg.seed,
        &ds.digests,
        &warnings,
        &results,
    )?;
    out.write_json("indep_fanova.json", &report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedScenario {
    pub name: String,
    #[serde(flatten)]
    pub scenario: GpScenario,
}

/// Simulation config file: a study setup and the scenarios to run it on.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationFile {
    #[serde(default)]
    pub study: StudyConfig,
    pub scenarios: Vec<NamedScenario>,
}

pub fn simulate(
    path: &Path,
    seed: Option<u64>,
    draw_only: bool,
    out: &mut OutDir,
) -> CliResult<()> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<SimulationFile>(&text).map_err(|e| e.to_string())
    } else {
        toml::from_str::<SimulationFile>(&text).map_err(|e| e.to_string())
    };
    let mut file = parsed.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    if file.scenarios.is_empty() {
        return Err(CliError::input("no scenarios defined"));
    }
    if let Some(seed) = seed {
        file.study.seed = seed;
        for s in &mut file.scenarios {
            s.scenario.seed = seed;
        }
    }
    let digests = [digest_file(path)?];
    if draw_only {
        for s in &file.scenarios {
            let data = sample_scenario(&s.scenario)?;
            out.write_with(&format!("sim_{}.csv", s.name), |buf| {
                Ok(data.write_csv(buf)?)
            })?;
        }
        let report = Report::new("simulate", &file, file.study.seed, &digests, &[], "draw")?;
        return out.write_json("simulate.json", &report);
    }
    let mut rows = Vec::new();
    for s in &file.scenarios {
        rows.extend(size_power_study(&s.name, &s.scenario, &file.study)?);
    }
    out.write_with("study.csv", |buf| Ok(write_rates_csv(&rows, buf)?))?;
    let report = Report::new("simulate", &file, file.study.seed, &digests, &[], &rows)?;
    out.write_json("simulate.json", &report)
}
