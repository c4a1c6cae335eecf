//! Synthetic Gaussian-process data for size and power studies.
//!
//! A repeated-measures scenario draws, for each subject, a shared subject
//! effect plus an independent deviation per condition. An independent-groups
//! scenario draws one curve per subject and variable. Everything derives from
//! the scenario seed, so a study is reproducible regardless of thread count.

use std::io::Write;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{uniform_grid, BasisSystem, CurveSet};
use crate::error::{Error, Result};
use crate::homogeneity::{fanova_indep, IndepConfig};
use crate::mfpca::MultiCurveSet;
use crate::resample::replication_rng;
use crate::rmfanova::{permutation_tests, PairedSample, PermutationConfig, Statistic};

pub const DEFAULT_GRID_POINTS: usize = 39;
const JITTER: f64 = 1e-10;

/// Closed-form mean curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeanSpec {
    Constant {
        value: f64,
    },
    Linear {
        intercept: f64,
        slope: f64,
    },
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        offset: f64,
    },
    /// Gaussian bump on top of `offset`.
    Bump {
        height: f64,
        center: f64,
        width: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl MeanSpec {
    pub fn zero() -> Self {
        MeanSpec::Constant { value: 0.0 }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            MeanSpec::Constant { value } => value,
            MeanSpec::Linear { intercept, slope } => intercept + slope * t,
            MeanSpec::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => offset + amplitude * (std::f64::consts::TAU * frequency * t + phase).sin(),
            MeanSpec::Bump {
                height,
                center,
                width,
                offset,
            } => offset + height * (-0.5 * ((t - center) / width).powi(2)).exp(),
        }
    }

    /// The same curve moved up by `delta`.
    pub fn shifted(&self, delta: f64) -> MeanSpec {
        match self.clone() {
            MeanSpec::Constant { value } => MeanSpec::Constant {
                value: value + delta,
            },
            MeanSpec::Linear { intercept, slope } => MeanSpec::Linear {
                intercept: intercept + delta,
                slope,
            },
            MeanSpec::Sine {
                amplitude,
                frequency,
                phase,
                offset,
            } => MeanSpec::Sine {
                amplitude,
                frequency,
                phase,
                offset: offset + delta,
            },
            MeanSpec::Bump {
                height,
                center,
                width,
                offset,
            } => MeanSpec::Bump {
                height,
                center,
                width,
                offset: offset + delta,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `variance · exp(−|s−t| / range)`.
    Exponential { variance: f64, range: f64 },
    /// `variance · min(s, t)`, measured from the left end of the interval.
    Brownian { variance: f64 },
}

impl Kernel {
    pub fn zero() -> Self {
        Kernel::Brownian { variance: 0.0 }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Exponential { variance, range } => {
                if !(variance >= 0.0 && variance.is_finite()) || !(range > 0.0 && range.is_finite())
                {
                    return Err(Error::invalid(format!(
                        "exponential kernel needs variance ≥ 0 and range > 0, got {variance}, {range}"
                    )));
                }
            }
            Kernel::Brownian { variance } => {
                if !(variance >= 0.0 && variance.is_finite()) {
                    return Err(Error::invalid(format!(
                        "kernel variance {variance} must be ≥ 0"
                    )));
                }
            }
        }
        Ok(())
    }

    fn is_zero(&self) -> bool {
        match *self {
            Kernel::Exponential { variance, .. } | Kernel::Brownian { variance } => variance == 0.0,
        }
    }

    /// Kernel value; `origin` is the left end of the interval.
    pub fn eval(&self, s: f64, t: f64, origin: f64) -> f64 {
        match *self {
            Kernel::Exponential { variance, range } => variance * (-(s - t).abs() / range).exp(),
            Kernel::Brownian { variance } => variance * (s - origin).min(t - origin),
        }
    }

    pub fn matrix(&self, grid: &[f64], origin: f64) -> DMatrix<f64> {
        DMatrix::from_fn(grid.len(), grid.len(), |i, j| {
            self.eval(grid[i], grid[j], origin)
        })
    }
}

/// Lower factor `L` with `L L' = K + jitter·I`, or `None` for a zero kernel.
fn kernel_factor(kernel: &Kernel, grid: &[f64], origin: f64) -> Result<Option<DMatrix<f64>>> {
    kernel.validate()?;
    if kernel.is_zero() {
        return Ok(None);
    }
    let mut k = kernel.matrix(grid, origin);
    let scale = k.diagonal().max().max(1.0);
    for i in 0..k.nrows() {
        k[(i, i)] += JITTER * scale;
    }
    Cholesky::new(k)
        .map(|c| Some(c.l()))
        .ok_or(Error::NotPsd { jitter: JITTER })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "design", rename_all = "snake_case")]
pub enum Design {
    /// `n` subjects observed under two conditions.
    RepeatedMeasures {
        n: usize,
        /// Mean per condition.
        means: [MeanSpec; 2],
        /// Effect shared by both curves of a subject.
        #[serde(default = "Kernel::zero")]
        subject_kernel: Kernel,
    },
    /// Independent subjects in groups, each observed on several variables.
    IndependentGroups {
        group_sizes: Vec<usize>,
        variables: Vec<String>,
        /// `means[group][variable]`.
        means: Vec<Vec<MeanSpec>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpScenario {
    pub interval: [f64; 2],
    /// Observation abscissas; defaults to a uniform grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<f64>>,
    pub design: Design,
    /// Within-curve process.
    pub kernel: Kernel,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GpScenario {
    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| {
            uniform_grid(self.interval[0], self.interval[1], DEFAULT_GRID_POINTS)
        })
    }

    pub fn with_seed(&self, seed: u64) -> GpScenario {
        GpScenario {
            seed,
            ..self.clone()
        }
    }

    fn validate(&self, grid: &[f64]) -> Result<()> {
        let [a, b] = self.interval;
        if a >= b || a.is_nan() || b.is_nan() {
            return Err(Error::invalid(format!("empty interval [{a}, {b}]")));
        }
        if grid.is_empty() || grid.iter().any(|t| !(a..=b).contains(t)) {
            return Err(Error::invalid(
                "grid must be nonempty and inside the interval",
            ));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid(format!(
                "noise_sd {} must be ≥ 0",
                self.noise_sd
            )));
        }
        match &self.design {
            Design::RepeatedMeasures { n, .. } if *n == 0 => {
                Err(Error::invalid("need at least one subject"))
            }
            Design::IndependentGroups {
                group_sizes,
                variables,
                means,
            } => {
                if group_sizes.is_empty() || variables.is_empty() {
                    return Err(Error::invalid("need at least one group and one variable"));
                }
                if means.len() != group_sizes.len()
                    || means.iter().any(|m| m.len() != variables.len())
                {
                    return Err(Error::mismatch(
                        "means must be given per group and variable",
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// One simulated curve on the scenario grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCurve {
    pub subject: String,
    pub group: String,
    /// Condition (1-based) for repeated measures; 0 otherwise.
    pub condition: usize,
    pub variable: String,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimData {
    pub grid: Vec<f64>,
    pub curves: Vec<SimCurve>,
}

fn draw(rng: &mut ChaCha8Rng, factor: Option<&DMatrix<f64>>, size: usize) -> DVector<f64> {
    match factor {
        Some(l) => {
            let z = DVector::from_fn(size, |_, _| rng.sample::<f64, _>(StandardNormal));
            l * z
        }
        None => DVector::zeros(size),
    }
}

fn subject_label(j: usize) -> String {
    format!("s{:03}", j + 1)
}

pub fn sample_scenario(sc: &GpScenario) -> Result<SimData> {
    let grid = sc.grid();
    sc.validate(&grid)?;
    let origin = sc.interval[0];
    let g = grid.len();
    let factor = kernel_factor(&sc.kernel, &grid, origin)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sc.seed);
    let noisy = |rng: &mut ChaCha8Rng, mean: &MeanSpec, shared: &DVector<f64>| {
        let own = draw(rng, factor.as_ref(), g);
        grid.iter()
            .enumerate()
            .map(|(i, &t)| {
                let eps = if sc.noise_sd > 0.0 {
                    sc.noise_sd * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                mean.eval(t) + shared[i] + own[i] + eps
            })
            .collect::<Vec<f64>>()
    };

    let mut curves = Vec::new();
    match &sc.design {
        Design::RepeatedMeasures {
            n,
            means,
            subject_kernel,
        } => {
            let subject_factor = kernel_factor(subject_kernel, &grid, origin)?;
            for j in 0..*n {
                let shared = draw(&mut rng, subject_factor.as_ref(), g);
                for (r, mean) in means.iter().enumerate() {
                    curves.push(SimCurve {
                        subject: subject_label(j),
                        group: String::new(),
                        condition: r + 1,
                        variable: String::new(),
                        y: noisy(&mut rng, mean, &shared),
                    });
                }
            }
        }
        Design::IndependentGroups {
            group_sizes,
            variables,
            means,
        } => {
            let none = DVector::zeros(g);
            let mut j = 0;
            for (k, &size) in group_sizes.iter().enumerate() {
                for _ in 0..size {
                    for (v, name) in variables.iter().enumerate() {
                        curves.push(SimCurve {
                            subject: subject_label(j),
                            group: format!("g{}", k + 1),
                            condition: 0,
                            variable: name.clone(),
                            y: noisy(&mut rng, &means[k][v], &none),
                        });
                    }
                    j += 1;
                }
            }
        }
    }
    Ok(SimData { grid, curves })
}

impl SimData {
    /// Smooths a repeated-measures draw into paired curve sets.
    pub fn paired(&self, basis: &BasisSystem) -> Result<PairedSample> {
        let mut sets = Vec::with_capacity(2);
        for cond in [1, 2] {
            let rows: Vec<&SimCurve> = self.curves.iter().filter(|c| c.condition == cond).collect();
            if rows.is_empty() {
                return Err(Error::invalid("not a repeated-measures draw"));
            }
            let ys: Vec<Vec<f64>> = rows.iter().map(|c| c.y.clone()).collect();
            let labels = rows.iter().map(|c| c.subject.clone()).collect();
            sets.push(CurveSet::from_observations(
                basis.clone(),
                &self.grid,
                &ys,
                labels,
            )?);
        }
        let c2 = sets.pop().expect("two sets");
        let c1 = sets.pop().expect("two sets");
        PairedSample::new(c1, c2)
    }

    /// Smooths an independent-groups draw; every variable uses `basis`.
    pub fn multivariate(&self, basis: &BasisSystem) -> Result<MultiCurveSet> {
        let mut names: Vec<String> = Vec::new();
        for c in &self.curves {
            if !names.contains(&c.variable) {
                names.push(c.variable.clone());
            }
        }
        let first = names
            .first()
            .ok_or_else(|| Error::invalid("empty simulated data"))?
            .clone();
        let groups: Vec<String> = self
            .curves
            .iter()
            .filter(|c| c.variable == first)
            .map(|c| c.group.clone())
            .collect();
        let sets = names
            .iter()
            .map(|name| {
                let rows: Vec<&SimCurve> =
                    self.curves.iter().filter(|c| &c.variable == name).collect();
                let ys: Vec<Vec<f64>> = rows.iter().map(|c| c.y.clone()).collect();
                let labels = rows.iter().map(|c| c.subject.clone()).collect();
                CurveSet::from_observations(basis.clone(), &self.grid, &ys, labels)
            })
            .collect::<Result<Vec<_>>>()?;
        MultiCurveSet::from_curvesets(&names, &sets, groups)
    }

    /// Long CSV: `subject,group,condition,variable,t,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::Csv {
            path: "<simulated data>".into(),
            source: e,
        };
        w.write_record(["subject", "group", "condition", "variable", "t", "y"])
            .map_err(to_err)?;
        for c in &self.curves {
            for (t, y) in self.grid.iter().zip(&c.y) {
                w.write_record([
                    c.subject.clone(),
                    c.group.clone(),
                    c.condition.to_string(),
                    c.variable.clone(),
                    t.to_string(),
                    y.to_string(),
                ])
                .map_err(to_err)?;
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: "<simulated data>".into(),
            source: e,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub repeats: usize,
    pub alpha: f64,
    /// Basis dimension used to smooth each draw.
    pub basis_dim: usize,
    pub seed: u64,
    /// Repeated-measures designs.
    #[serde(default = "default_statistics")]
    pub statistics: Vec<Statistic>,
    #[serde(default)]
    pub permutation: PermutationConfig,
    /// Independent-groups designs.
    #[serde(default)]
    pub indep: IndepConfig,
    /// Also test each variable on its own (independent groups only).
    #[serde(default)]
    pub univariate: bool,
}

fn default_statistics() -> Vec<Statistic> {
    Statistic::ALL.to_vec()
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            repeats: 500,
            alpha: 0.05,
            basis_dim: 8,
            seed: 0,
            statistics: default_statistics(),
            permutation: PermutationConfig::default(),
            indep: IndepConfig::default(),
            univariate: false,
        }
    }
}

/// Empirical rejection rate of one test in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub statistic: String,
    pub alpha: f64,
    pub scenario: String,
    pub rate: f64,
    pub stderr: f64,
}

/// p-values of every test for one repeat, in a fixed order.
fn repeat_p_values(
    sc: &GpScenario,
    basis: &BasisSystem,
    config: &StudyConfig,
    data_seed: u64,
    test_seed: u64,
) -> Result<Vec<(String, f64)>> {
    let data = sample_scenario(&sc.with_seed(data_seed))?;
    match &sc.design {
        Design::RepeatedMeasures { .. } => {
            let ps = data.paired(basis)?;
            let perm = PermutationConfig {
                seed: test_seed,
                keep_null: false,
                ..config.permutation
            };
            Ok(permutation_tests(&ps, &config.statistics, &perm)?
                .into_iter()
                .map(|r| (r.statistic_name.to_string(), r.p_value))
                .collect())
        }
        Design::IndependentGroups { variables, .. } => {
            let mcs = data.multivariate(basis)?;
            let indep = IndepConfig {
                seed: test_seed,
                alpha: config.alpha,
                ..config.indep
            };
            let mut out = vec![(
                "multivariate".to_string(),
                fanova_indep(&mcs, &indep)?.test.global_p,
            )];
            if config.univariate {
                for (h, name) in variables.iter().enumerate() {
                    let p = fanova_indep(&mcs.univariate(h)?, &indep)?.test.global_p;
                    out.push((format!("univariate:{name}"), p));
                }
            }
            Ok(out)
        }
    }
}

/// Rejection rate (`p ≤ α`) of every test over `repeats` fresh draws.
/// Repeat `k` takes its data and resampling seeds from substream `k` of the
/// study seed.
pub fn size_power_study(name: &str, sc: &GpScenario, config: &StudyConfig) -> Result<Vec<RateRow>> {
    if config.repeats == 0 {
        return Err(Error::invalid("need at least one repeat"));
    }
    if !(0.0..=1.0).contains(&config.alpha) {
        return Err(Error::invalid(format!(
            "alpha {} outside [0, 1]",
            config.alpha
        )));
    }
    let basis = crate::basis::make_basis((sc.interval[0], sc.interval[1]), config.basis_dim)?;
    let per_repeat: Vec<Vec<(String, f64)>> = (0..config.repeats)
        .into_par_iter()
        .map(|k| {
            let mut rng = replication_rng(config.seed, k);
            let data_seed = rng.next_u64();
            let test_seed = rng.next_u64();
            repeat_p_values(sc, &basis, config, data_seed, test_seed)
        })
        .collect::<Result<_>>()?;

    let m = config.repeats as f64;
    Ok(per_repeat[0]
        .iter()
        .enumerate()
        .map(|(i, (label, _))| {
            let hits = per_repeat
                .iter()
                .filter(|ps| ps[i].1 <= config.alpha)
                .count() as f64;
            let rate = hits / m;
            RateRow {
                statistic: label.clone(),
                alpha: config.alpha,
                scenario: name.to_string(),
                rate,
                stderr: (rate * (1.0 - rate) / m).sqrt(),
            }
        })
        .collect())
}

pub fn write_rates_csv<W: Write>(rows: &[RateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row).map_err(|e| Error::Csv {
            path: "<study>".into(),
            source: e,
        })?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<study>".into(),
        source: e,
    })
}
