use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use fdanova_core::homogeneity::HomogeneityMethod;
use fdanova_core::ingest::{CsvSchema, DateWindow, DEFAULT_MIN_COVERAGE};
use fdanova_core::mfpca::DEFAULT_VARIANCE_THRESHOLD;
use fdanova_core::rmfanova::{DEFAULT_GRID_SIZE, DEFAULT_REPLICATIONS};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// What one repeated-measures subject is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SubjectUnit {
    /// One subject per station; curves are daily means over each period.
    Station,
    /// One subject per (station, k-th day); curves are 24-hour profiles.
    StationDay,
}

/// Everything that determines an analysis result. Execution settings such as
/// the thread count or output directory are deliberately not part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub inputs: Vec<PathBuf>,
    pub schema: CsvSchema,
    pub stations: Option<PathBuf>,
    pub before_start: NaiveDate,
    pub before_end: NaiveDate,
    pub during_start: NaiveDate,
    pub during_end: NaiveDate,
    pub min_coverage: f64,
    pub basis_dim: usize,
    pub threshold: f64,
    pub replications: usize,
    pub alpha: f64,
    pub seed: u64,
    pub grid_size: usize,
    pub subject_unit: SubjectUnit,
    pub method: HomogeneityMethod,
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid default date")
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            inputs: Vec::new(),
            schema: CsvSchema::default(),
            stations: None,
            before_start: date(2020, 2, 1),
            before_end: date(2020, 3, 10),
            during_start: date(2020, 3, 11),
            during_end: date(2020, 4, 18),
            min_coverage: DEFAULT_MIN_COVERAGE,
            basis_dim: 20,
            threshold: DEFAULT_VARIANCE_THRESHOLD,
            replications: DEFAULT_REPLICATIONS,
            alpha: 0.05,
            seed: 0,
            grid_size: DEFAULT_GRID_SIZE,
            subject_unit: SubjectUnit::Station,
            method: HomogeneityMethod::MvRankPermutation,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::input(format!("{}: {e}", path.display())))
    }

    pub fn before(&self) -> DateWindow {
        DateWindow {
            start: self.before_start,
            end: self.before_end,
        }
    }

    pub fn during(&self) -> DateWindow {
        DateWindow {
            start: self.during_start,
            end: self.during_end,
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.inputs.is_empty() {
            return Err(CliError::input("no input files given"));
        }
        if self.before_start > self.before_end || self.during_start > self.during_end {
            return Err(CliError::input("period windows must have start ≤ end"));
        }
        if self.during_start <= self.before_end {
            return Err(CliError::input(
                "the second period must start after the first ends",
            ));
        }
        if !(self.alpha >= 0.0 && self.alpha <= 1.0) {
            return Err(CliError::input(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if self.replications == 0 {
            return Err(CliError::input("replications must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_overrides_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "inputs = [\"a.csv\"]\nseed = 7\nsubject_unit = \"station-day\"\n\
             method = \"anova_bonferroni\"\n[schema]\ntimestamp = \"date\"\n\
             station = \"site\"\npollutant = \"species\"\nvalue = \"conc\"\n",
        )
        .unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.subject_unit, SubjectUnit::StationDay);
        assert_eq!(cfg.method, HomogeneityMethod::AnovaBonferroni);
        assert_eq!(cfg.schema.station, "site");
        assert_eq!(cfg.basis_dim, 20);
        assert_eq!(cfg.replications, 2000);
        assert_eq!(cfg.before().days().count(), 39);
        assert_eq!(cfg.during().days().count(), 39);
    }

    #[test]
    fn unknown_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "sed = 7\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
