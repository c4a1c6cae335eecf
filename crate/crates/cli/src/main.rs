//! `fdanova`: functional ANOVA pipeline for air-quality monitoring data.

mod commands;
mod config;
mod error;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use fdanova_core::homogeneity::HomogeneityMethod;

use crate::config::{RunConfig, SubjectUnit};
use crate::error::{CliError, CliResult};
use crate::report::OutDir;

#[derive(Parser)]
#[command(
    name = "fdanova",
    version,
    about = "Functional ANOVA for repeated and independent measures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Net and percentage variation of the period means per station and pollutant.
    Descriptives(DataArgs),
    /// Smooth daily means into B-spline curves.
    Smooth(DataArgs),
    /// Repeated-measures permutation tests (first vs second period).
    RmFanova(RmArgs),
    /// Multivariate functional PCA of each period.
    Mfpca(MfpcaArgs),
    /// Homogeneity tests between station types on MFPCA scores.
    IndepFanova(IndepArgs),
    /// Synthetic data and size/power studies.
    Simulate(SimArgs),
}

#[derive(Args)]
struct Exec {
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Worker threads for the resampling loops.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// Long-format CSV file(s) with timestamp, station, pollutant and value columns.
    #[arg(long = "input", short)]
    inputs: Vec<PathBuf>,
    /// TOML or JSON run configuration; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Station metadata CSV (id,type,name).
    #[arg(long)]
    stations: Option<PathBuf>,
    #[arg(long)]
    timestamp_col: Option<String>,
    #[arg(long)]
    station_col: Option<String>,
    #[arg(long)]
    pollutant_col: Option<String>,
    #[arg(long)]
    value_col: Option<String>,
    #[arg(long)]
    before_start: Option<NaiveDate>,
    /// Last day of the first period.
    #[arg(long)]
    before_end: Option<NaiveDate>,
    #[arg(long)]
    during_start: Option<NaiveDate>,
    #[arg(long)]
    during_end: Option<NaiveDate>,
    /// Minimum fraction of valid hours for a daily mean.
    #[arg(long)]
    min_coverage: Option<f64>,
    /// B-spline basis dimension.
    #[arg(long, short = 'p')]
    basis_dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    exec: Exec,
}

#[derive(Args)]
struct RmArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Permutation replications.
    #[arg(long)]
    replications: Option<usize>,
    /// Evaluation grid size for the standardized statistics.
    #[arg(long)]
    grid_size: Option<usize>,
    #[arg(long, value_enum)]
    subject_unit: Option<SubjectUnit>,
    /// Also write the permutation null samples as CSV.
    #[arg(long)]
    null_csv: bool,
}

#[derive(Args)]
struct MfpcaArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Cumulative variance share used to choose the number of components.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct IndepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `mv-rank` (permutation) or `anova` (F-tests with Bonferroni).
    #[arg(long)]
    method: Option<HomogeneityMethod>,
    #[arg(long)]
    replications: Option<usize>,
}

#[derive(Args)]
struct SimArgs {
    /// Scenario file (TOML or JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Override every seed in the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Only write one draw per scenario.
    #[arg(long)]
    draw_only: bool,
    #[command(flatten)]
    exec: Exec,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn config(self) -> CliResult<(RunConfig, Exec)> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if !self.inputs.is_empty() {
            cfg.inputs = self.inputs;
        }
        if self.stations.is_some() {
            cfg.stations = self.stations;
        }
        set(&mut cfg.schema.timestamp, self.timestamp_col);
        set(&mut cfg.schema.station, self.station_col);
        set(&mut cfg.schema.pollutant, self.pollutant_col);
        set(&mut cfg.schema.value, self.value_col);
        set(&mut cfg.before_start, self.before_start);
        set(&mut cfg.before_end, self.before_end);
        set(&mut cfg.during_start, self.during_start);
        set(&mut cfg.during_end, self.during_end);
        set(&mut cfg.min_coverage, self.min_coverage);
        set(&mut cfg.basis_dim, self.basis_dim);
        set(&mut cfg.seed, self.seed);
        Ok((cfg, self.exec))
    }
}

fn setup(exec: &Exec) -> CliResult<OutDir> {
    if let Some(n) = exec.threads {
        if n == 0 {
            return Err(CliError::input("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    OutDir::create(&exec.out)
}

fn run(cli: Cli) -> CliResult<OutDir> {
    match cli.command {
        Command::Descriptives(args) => {
            let (cfg, exec) = args.config()?;
            let mut out = setup(&exec)?;
            commands::descriptives(&cfg, &mut out)?;
            Ok(out)
        }
        Command::Smooth(args) => {
            let (cfg, exec) = args.config()?;
            let mut out = setup(&exec)?;
            commands::smooth(&cfg, &mut out)?;
            Ok(out)
        }
        Command::RmFanova(args) => {
            let (mut cfg, exec) = args.data.config()?;
            set(&mut cfg.replications, args.replications);
            set(&mut cfg.grid_size, args.grid_size);
            set(&mut cfg.subject_unit, args.subject_unit);
            let mut out = setup(&exec)?;
            commands::rm_fanova(&cfg, &mut out, args.null_csv)?;
            Ok(out)
        }
        Command::Mfpca(args) => {
            let (mut cfg, exec) = args.data.config()?;
            set(&mut cfg.threshold, args.threshold);
            let mut out = setup(&exec)?;
            commands::mfpca(&cfg, &mut out)?;
            Ok(out)
        }
        Command::IndepFanova(args) => {
            let (mut cfg, exec) = args.data.config()?;
            set(&mut cfg.threshold, args.threshold);
            set(&mut cfg.alpha, args.alpha);
            set(&mut cfg.method, args.method);
            set(&mut cfg.replications, args.replications);
            let mut out = setup(&exec)?;
            commands::indep_fanova(&cfg, &mut out)?;
            Ok(out)
        }
        Command::Simulate(args) => {
            let mut out = setup(&args.exec)?;
            commands::simulate(&args.scenario, args.seed, args.draw_only, &mut out)?;
            Ok(out)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for path in out.written() {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fdanova: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
