//! Repeated-measures functional ANOVA for two conditions.
//!
//! The three statistics compare the condition mean functions of paired
//! curves:
//!
//! * `Cn = n ∫ (X̄₁ − X̄₂)²`, computed exactly as `n d̄'W d̄`;
//! * `Dn = n ∫ (X̄₁ − X̄₂)² / K̂(t,t)`, composite Simpson on a uniform grid;
//! * `En = sup_t n (X̄₁ − X̄₂)² / K̂(t,t)`, maximum over the same grid.
//!
//! Null distributions come from within-pair swaps: every subject's two
//! curves are exchanged independently with probability 1/2, which flips the
//! sign of its difference curve `δ_j = a_j1 − a_j2`. Since `Σ δ_j δ_j'` is
//! invariant under sign flips, each replication only needs the permuted mean
//! difference `d̄*`, and `K̂*(t,t) = φ(t)'(Σ δ_j δ_j' − n d̄* d̄*')φ(t)/(n − 1)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{gram, uniform_grid, Basis, BasisSystem, CurveSet};
use crate::error::{Error, Result};
use crate::resample::{add_one_p_value, count_exceedances, replication_rng};

pub const DEFAULT_REPLICATIONS: usize = 2000;
pub const DEFAULT_GRID_SIZE: usize = 1001;
/// Denominator floor relative to `max_t K̂(t,t)`.
pub const DEFAULT_REL_FLOOR: f64 = 1e-12;
/// Floor used when `K̂ ≡ 0`.
const ABS_FLOOR: f64 = 1e-300;

/// Curves of the same `n` subjects under two conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    cond1: CurveSet,
    cond2: CurveSet,
}

impl PairedSample {
    /// Both sets must share the basis and list the same subjects in the
    /// same order.
    pub fn new(cond1: CurveSet, cond2: CurveSet) -> Result<Self> {
        if cond1.basis() != cond2.basis() {
            return Err(Error::mismatch("conditions use different bases"));
        }
        if cond1.len() != cond2.len() {
            return Err(Error::mismatch(format!(
                "{} subjects in condition 1, {} in condition 2",
                cond1.len(),
                cond2.len()
            )));
        }
        if cond1.labels() != cond2.labels() {
            return Err(Error::mismatch(
                "subject labels differ between conditions (use pair_by_label)",
            ));
        }
        if cond1.is_empty() {
            return Err(Error::invalid("paired sample has no subjects"));
        }
        Ok(PairedSample { cond1, cond2 })
    }

    /// Reorders `cond2` to follow the subject order of `cond1`.
    pub fn pair_by_label(cond1: CurveSet, cond2: CurveSet) -> Result<Self> {
        let mut idx = Vec::with_capacity(cond1.len());
        for label in cond1.labels() {
            let hits: Vec<usize> = cond2
                .labels()
                .iter()
                .enumerate()
                .filter(|(_, l)| *l == label)
                .map(|(k, _)| k)
                .collect();
            match hits.as_slice() {
                [k] => idx.push(*k),
                [] => {
                    return Err(Error::mismatch(format!(
                        "subject '{label}' missing from condition 2"
                    )))
                }
                _ => {
                    return Err(Error::mismatch(format!(
                        "subject '{label}' appears more than once in condition 2"
                    )))
                }
            }
        }
        if cond2.len() != cond1.len() {
            return Err(Error::mismatch("condition 2 has unpaired subjects"));
        }
        let cond2 = cond2.select(&idx);
        PairedSample::new(cond1, cond2)
    }

    pub fn len(&self) -> usize {
        self.cond1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cond1.is_empty()
    }

    pub fn basis(&self) -> &BasisSystem {
        self.cond1.basis()
    }

    pub fn subjects(&self) -> &[String] {
        self.cond1.labels()
    }

    pub fn cond1(&self) -> &CurveSet {
        &self.cond1
    }

    pub fn cond2(&self) -> &CurveSet {
        &self.cond2
    }

    /// Difference coefficients `a_j1 − a_j2`, one row per subject.
    pub fn differences(&self) -> DMatrix<f64> {
        self.cond1.coefs() - self.cond2.coefs()
    }

    /// Swaps the two conditions for the subjects where `mask` is true.
    pub fn swapped(&self, mask: &[bool]) -> PairedSample {
        let mut a1 = self.cond1.coefs().clone();
        let mut a2 = self.cond2.coefs().clone();
        for (j, &swap) in mask.iter().enumerate() {
            if swap {
                a1.swap_rows_with(&mut a2, j);
            }
        }
        let labels = self.subjects().to_vec();
        PairedSample {
            cond1: CurveSet::new(self.basis().clone(), labels.clone(), a1).expect("same shape"),
            cond2: CurveSet::new(self.basis().clone(), labels, a2).expect("same shape"),
        }
    }
}

trait SwapRows {
    fn swap_rows_with(&mut self, other: &mut Self, j: usize);
}

impl SwapRows for DMatrix<f64> {
    fn swap_rows_with(&mut self, other: &mut Self, j: usize) {
        for k in 0..self.ncols() {
            std::mem::swap(&mut self[(j, k)], &mut other[(j, k)]);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Statistic {
    Cn,
    Dn,
    En,
}

impl Statistic {
    pub const ALL: [Statistic; 3] = [Statistic::Cn, Statistic::Dn, Statistic::En];

    pub fn name(self) -> &'static str {
        match self {
            Statistic::Cn => "Cn",
            Statistic::Dn => "Dn",
            Statistic::En => "En",
        }
    }
}

impl std::fmt::Display for Statistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cn" => Ok(Statistic::Cn),
            "dn" => Ok(Statistic::Dn),
            "en" => Ok(Statistic::En),
            other => Err(Error::invalid(format!("unknown statistic '{other}'"))),
        }
    }
}

/// Evaluation grid and denominator floor for `Dn` and `En`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Standardization {
    pub grid_size: usize,
    pub rel_floor: f64,
}

impl Default for Standardization {
    fn default() -> Self {
        Standardization {
            grid_size: DEFAULT_GRID_SIZE,
            rel_floor: DEFAULT_REL_FLOOR,
        }
    }
}

/// All three statistics for one assignment of conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatValues {
    pub cn: f64,
    pub dn: f64,
    pub en: f64,
    /// Grid points whose `K̂(t,t)` fell below the floor.
    pub floored_points: usize,
    /// `K̂ ≡ 0` while the mean difference is not identically zero.
    pub degenerate: bool,
}

impl StatValues {
    pub fn get(&self, stat: Statistic) -> f64 {
        match stat {
            Statistic::Cn => self.cn,
            Statistic::Dn => self.dn,
            Statistic::En => self.en,
        }
    }
}

/// Precomputed coefficient-space quantities shared by every sign pattern.
#[derive(Debug, Clone)]
pub struct StatEngine {
    n: usize,
    p: usize,
    std: Standardization,
    /// Row-major `n × p` difference coefficients.
    diffs: Vec<f64>,
    /// `δ_j' W δ_k`.
    diff_gram: DMatrix<f64>,
    /// Nonzero basis values at each grid point.
    phi: Vec<(usize, [f64; 4])>,
    /// `φ(t)' (Σ_j δ_j δ_j') φ(t)` at each grid point.
    sumsq: Vec<f64>,
    weights: Vec<f64>,
}

impl StatEngine {
    pub fn new(ps: &PairedSample, std: Standardization) -> Result<Self> {
        if std.grid_size < 2 {
            return Err(Error::invalid("evaluation grid needs at least 2 points"));
        }
        if !(std.rel_floor >= 0.0 && std.rel_floor.is_finite()) {
            return Err(Error::invalid("denominator floor must be finite and ≥ 0"));
        }
        let n = ps.len();
        let basis = ps.basis();
        let p = basis.dim();
        let d = ps.differences();
        let w = gram(basis);
        let diff_gram = &d * w.matrix() * d.transpose();
        let outer = d.transpose() * &d;

        let (a, b) = basis.interval();
        let grid = uniform_grid(a, b, std.grid_size);
        let mut phi = Vec::with_capacity(grid.len());
        let mut sumsq = Vec::with_capacity(grid.len());
        for &t in &grid {
            let (first, v) = basis.nonzero_at(t)?;
            let mut q = 0.0;
            for r in 0..4 {
                for c in 0..4 {
                    q += v[r] * outer[(first + r, first + c)] * v[c];
                }
            }
            phi.push((first, v));
            sumsq.push(q.max(0.0));
        }
        let mut diffs = Vec::with_capacity(n * p);
        for j in 0..n {
            diffs.extend(d.row(j).iter().copied());
        }
        Ok(StatEngine {
            n,
            p,
            std,
            diffs,
            diff_gram,
            phi,
            sumsq,
            weights: quadrature_weights(&grid),
        })
    }

    pub fn grid_size(&self) -> usize {
        self.phi.len()
    }

    /// Statistics when subject `j`'s difference is multiplied by `signs[j]`.
    pub fn evaluate(&self, signs: &[f64]) -> StatValues {
        debug_assert_eq!(signs.len(), self.n);
        let n = self.n as f64;
        let mut dbar = vec![0.0; self.p];
        for (j, &s) in signs.iter().enumerate() {
            let row = &self.diffs[j * self.p..(j + 1) * self.p];
            for (acc, v) in dbar.iter_mut().zip(row) {
                *acc += s * v;
            }
        }
        for v in dbar.iter_mut() {
            *v /= n;
        }

        let mut cn = 0.0;
        for (j, sj) in signs.iter().enumerate() {
            let acc: f64 = signs
                .iter()
                .enumerate()
                .map(|(k, sk)| self.diff_gram[(j, k)] * sk)
                .sum();
            cn += sj * acc;
        }
        let cn = (cn / n).max(0.0);

        if self.n < 2 {
            return StatValues {
                cn,
                dn: f64::NAN,
                en: f64::NAN,
                floored_points: 0,
                degenerate: false,
            };
        }

        let g = self.phi.len();
        let mut num = Vec::with_capacity(g);
        let mut kvals = Vec::with_capacity(g);
        let mut kmax: f64 = 0.0;
        for (i, (first, v)) in self.phi.iter().enumerate() {
            let m: f64 = (0..4).map(|r| v[r] * dbar[first + r]).sum();
            let nm2 = n * m * m;
            // Differences below the rounding level of sumsq are treated as exact zeros.
            let noise = 8.0 * n * f64::EPSILON * self.sumsq[i];
            let raw = self.sumsq[i] - nm2;
            let k = if raw <= noise { 0.0 } else { raw / (n - 1.0) };
            kmax = kmax.max(k);
            num.push(nm2);
            kvals.push(k);
        }
        let floor = if kmax > 0.0 {
            self.std.rel_floor * kmax
        } else {
            ABS_FLOOR
        };
        let degenerate = kmax == 0.0 && num.iter().any(|&x| x > 0.0);
        let mut dn = 0.0;
        let mut en: f64 = 0.0;
        let mut floored = 0;
        for i in 0..g {
            let denom = if kvals[i] < floor {
                floored += 1;
                floor
            } else {
                kvals[i]
            };
            let ratio = if num[i] == 0.0 { 0.0 } else { num[i] / denom };
            dn += self.weights[i] * ratio;
            en = en.max(ratio);
        }
        StatValues {
            cn,
            dn,
            en,
            floored_points: floored,
            degenerate,
        }
    }

    pub fn observed(&self) -> StatValues {
        self.evaluate(&vec![1.0; self.n])
    }
}

/// Composite Simpson weights on a uniform grid (trapezoid on the last
/// interval when the number of intervals is odd).
pub(crate) fn quadrature_weights(grid: &[f64]) -> Vec<f64> {
    let g = grid.len();
    let mut w = vec![0.0; g];
    if g < 2 {
        return w;
    }
    let h = (grid[g - 1] - grid[0]) / (g - 1) as f64;
    let intervals = g - 1;
    let simpson_end = if intervals.is_multiple_of(2) {
        g - 1
    } else {
        g - 2
    };
    let mut i = 0;
    while i + 2 <= simpson_end {
        w[i] += h / 3.0;
        w[i + 1] += 4.0 * h / 3.0;
        w[i + 2] += h / 3.0;
        i += 2;
    }
    if simpson_end < g - 1 {
        w[g - 2] += h / 2.0;
        w[g - 1] += h / 2.0;
    }
    w
}

/// `Cn = n d̄'W d̄`.
pub fn stat_cn(ps: &PairedSample) -> Result<f64> {
    let w = gram(ps.basis());
    let dbar: DVector<f64> = ps.differences().row_mean().transpose();
    Ok((ps.len() as f64 * w.inner(&dbar, &dbar)).max(0.0))
}

fn standardized(ps: &PairedSample, std: Standardization) -> Result<StatValues> {
    if ps.len() < 2 {
        return Err(Error::invalid("Dn and En need at least 2 subjects"));
    }
    let values = StatEngine::new(ps, std)?.observed();
    if values.degenerate {
        return Err(Error::Degenerate(
            "K̂(t,t) ≡ 0 while the mean difference is nonzero (infinite standardized distance)"
                .into(),
        ));
    }
    Ok(values)
}

pub fn stat_dn(ps: &PairedSample, std: Standardization) -> Result<f64> {
    standardized(ps, std).map(|v| v.dn)
}

pub fn stat_en(ps: &PairedSample, std: Standardization) -> Result<f64> {
    standardized(ps, std).map(|v| v.en)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermutationConfig {
    pub replications: usize,
    pub seed: u64,
    pub standardization: Standardization,
    /// Keep every permuted statistic in the report.
    pub keep_null: bool,
}

impl Default for PermutationConfig {
    fn default() -> Self {
        PermutationConfig {
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            standardization: Standardization::default(),
            keep_null: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic_name: Statistic,
    pub observed: f64,
    pub delta: usize,
    /// `(1 + #{T* ≥ T}) / (1 + Δ)`.
    pub p_value: f64,
    /// `#{T* ≥ T} / Δ`, the raw exceedance proportion.
    pub p_value_raw: f64,
    pub exceedances: usize,
    pub seed: u64,
    pub grid_size: usize,
    pub floored_points: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub null_samples: Option<Vec<f64>>,
}

impl TestReport {
    /// Writes the null samples as CSV (`replication,value`).
    pub fn write_null_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::Csv {
            path: "<null samples>".into(),
            source: e,
        };
        w.write_record(["replication", "value"]).map_err(to_err)?;
        for (r, v) in self.null_samples.iter().flatten().enumerate() {
            w.write_record([(r + 1).to_string(), v.to_string()])
                .map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<null samples>".into(),
            source: e,
        })
    }
}

fn sign_pattern(seed: u64, r: usize, n: usize) -> Vec<f64> {
    let mut rng = replication_rng(seed, r);
    (0..n)
        .map(|_| if rng.random::<bool>() { -1.0 } else { 1.0 })
        .collect()
}

/// Permutation tests for several statistics sharing the same sign draws.
pub fn permutation_tests(
    ps: &PairedSample,
    stats: &[Statistic],
    config: &PermutationConfig,
) -> Result<Vec<TestReport>> {
    if config.replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    if ps.len() < 2 {
        return Err(Error::invalid("permutation test needs at least 2 subjects"));
    }
    let engine = StatEngine::new(ps, config.standardization)?;
    let observed = engine.observed();
    let standardized = stats.iter().any(|s| *s != Statistic::Cn);
    if standardized && observed.degenerate {
        return Err(Error::Degenerate(
            "K̂(t,t) ≡ 0 while the mean difference is nonzero".into(),
        ));
    }
    let n = ps.len();
    let null: Vec<StatValues> = (0..config.replications)
        .into_par_iter()
        .map(|r| engine.evaluate(&sign_pattern(config.seed, r, n)))
        .collect();

    Ok(stats
        .iter()
        .map(|&stat| {
            let samples: Vec<f64> = null.iter().map(|v| v.get(stat)).collect();
            let obs = observed.get(stat);
            let exceed = count_exceedances(obs, &samples);
            let delta = config.replications;
            TestReport {
                statistic_name: stat,
                observed: obs,
                delta,
                p_value: add_one_p_value(exceed, delta),
                p_value_raw: exceed as f64 / delta as f64,
                exceedances: exceed,
                seed: config.seed,
                grid_size: engine.grid_size(),
                floored_points: if stat == Statistic::Cn {
                    0
                } else {
                    observed.floored_points
                },
                null_samples: config.keep_null.then_some(samples),
            }
        })
        .collect())
}

pub fn permutation_test(
    ps: &PairedSample,
    stat: Statistic,
    config: &PermutationConfig,
) -> Result<TestReport> {
    let mut reports = permutation_tests(ps, &[stat], config)?;
    Ok(reports.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{eval_curveset, make_basis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|j| format!("s{j}")).collect()
    }

    fn constant_set(basis: &BasisSystem, values: &[f64]) -> CurveSet {
        let p = basis.dim();
        let a = DMatrix::from_fn(values.len(), p, |j, _| values[j]);
        CurveSet::new(basis.clone(), labels(values.len()), a).unwrap()
    }

    fn random_pair(seed: u64, n: usize, basis: &BasisSystem, shift: f64) -> PairedSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = basis.dim();
        let subject = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        let a1 = DMatrix::from_fn(n, p, |j, k| {
            subject[(j, k)] + rng.sample::<f64, _>(StandardNormal)
        });
        let a2 = DMatrix::from_fn(n, p, |j, k| {
            subject[(j, k)] + shift + rng.sample::<f64, _>(StandardNormal)
        });
        PairedSample::new(
            CurveSet::new(basis.clone(), labels(n), a1).unwrap(),
            CurveSet::new(basis.clone(), labels(n), a2).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        let grid = uniform_grid(1.0, 39.0, 1001);
        let w = quadrature_weights(&grid);
        let f = |t: f64| t.powi(3) - 2.0 * t;
        let q: f64 = grid.iter().zip(&w).map(|(t, wt)| f(*t) * wt).sum();
        let exact = (39f64.powi(4) - 1.0) / 4.0 - (39f64.powi(2) - 1.0);
        assert!((q - exact).abs() / exact < 1e-12);
        let w = quadrature_weights(&uniform_grid(0.0, 1.0, 6));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identical_conditions_give_zero() {
        let basis = make_basis((0.0, 1.0), 6).unwrap();
        let ps = random_pair(1, 5, &basis, 0.0);
        let same = PairedSample::new(ps.cond1().clone(), ps.cond1().clone()).unwrap();
        assert_eq!(stat_cn(&same).unwrap(), 0.0);
        // K̂ ≡ 0 and d̄ = 0: the standardized statistics are zero, not degenerate
        assert_eq!(stat_dn(&same, Standardization::default()).unwrap(), 0.0);
        assert_eq!(stat_en(&same, Standardization::default()).unwrap(), 0.0);
    }

    #[test]
    fn constant_shift_closed_form() {
        // δ = 2, n = 5 on [0, 1]: Cn = n δ² (b − a) = 20
        let basis = make_basis((0.0, 1.0), 7).unwrap();
        let base = [1.0, -0.5, 3.0, 0.25, 2.0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 2.0).collect();
        let ps =
            PairedSample::new(constant_set(&basis, &shifted), constant_set(&basis, &base)).unwrap();
        assert!((stat_cn(&ps).unwrap() - 20.0).abs() < 1e-10);
    }

    #[test]
    fn constant_noise_hand_case() {
        // D_j = δ + c_j with δ = 2, c = (−1.5, −0.5, 0.5, 1.5): v = 5/3,
        // Dn = n δ² (b − a) / v = 4·4·1·3/5 = 9.6 and En = Dn / (b − a).
        let basis = make_basis((0.0, 1.0), 5).unwrap();
        let c = [-1.5, -0.5, 0.5, 1.5];
        let cond2 = constant_set(&basis, &[3.0, 1.0, -2.0, 0.5]);
        let cond1_vals: Vec<f64> = [3.0, 1.0, -2.0, 0.5]
            .iter()
            .zip(c)
            .map(|(b, ci)| b + 2.0 + ci)
            .collect();
        let ps = PairedSample::new(constant_set(&basis, &cond1_vals), cond2).unwrap();
        let dn = stat_dn(&ps, Standardization::default()).unwrap();
        let en = stat_en(&ps, Standardization::default()).unwrap();
        assert!((dn - 9.6).abs() < 1e-8, "{dn}");
        assert!((en - 9.6).abs() < 1e-8, "{en}");
    }

    #[test]
    fn degenerate_denominator_is_reported() {
        let basis = make_basis((0.0, 1.0), 5).unwrap();
        let ps = PairedSample::new(
            constant_set(&basis, &[2.0, 3.0, 4.0]),
            constant_set(&basis, &[1.0, 2.0, 3.0]),
        )
        .unwrap();
        assert!(matches!(
            stat_dn(&ps, Standardization::default()),
            Err(Error::Degenerate(_))
        ));
        assert!((stat_cn(&ps).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cn_matches_fine_quadrature() {
        let basis = make_basis((1.0, 39.0), 20).unwrap();
        let ps = random_pair(2, 7, &basis, 0.3);
        let grid = uniform_grid(1.0, 39.0, 10_001);
        let w = quadrature_weights(&grid);
        let v1 = eval_curveset(ps.cond1(), &grid).unwrap();
        let v2 = eval_curveset(ps.cond2(), &grid).unwrap();
        let n = ps.len() as f64;
        let oracle: f64 = (0..grid.len())
            .map(|i| {
                let d = v1.column(i).mean() - v2.column(i).mean();
                w[i] * n * d * d
            })
            .sum();
        let cn = stat_cn(&ps).unwrap();
        assert!((cn - oracle).abs() / oracle < 1e-8);
        // the engine's Gram route agrees with the direct one
        let engine = StatEngine::new(&ps, Standardization::default()).unwrap();
        assert!((engine.observed().cn - cn).abs() / cn < 1e-12);
    }

    #[test]
    fn dn_en_match_pointwise_definition() {
        let basis = make_basis((1.0, 39.0), 20).unwrap();
        let ps = random_pair(3, 6, &basis, 0.4);
        let std = Standardization::default();
        let grid = uniform_grid(1.0, 39.0, std.grid_size);
        let w = quadrature_weights(&grid);
        let v1 = eval_curveset(ps.cond1(), &grid).unwrap();
        let v2 = eval_curveset(ps.cond2(), &grid).unwrap();
        let n = ps.len();
        let mut dn = 0.0;
        let mut en: f64 = 0.0;
        for i in 0..grid.len() {
            let m1 = v1.column(i).mean();
            let m2 = v2.column(i).mean();
            let k: f64 = (0..n)
                .map(|j| ((v1[(j, i)] - m1) - (v2[(j, i)] - m2)).powi(2))
                .sum::<f64>()
                / (n as f64 - 1.0);
            let ratio = n as f64 * (m1 - m2).powi(2) / k;
            dn += w[i] * ratio;
            en = en.max(ratio);
        }
        let got_dn = stat_dn(&ps, std).unwrap();
        let got_en = stat_en(&ps, std).unwrap();
        assert!((got_dn - dn).abs() / dn < 1e-6, "{got_dn} vs {dn}");
        assert!((got_en - en).abs() / en < 1e-6);
        assert!(got_en >= got_dn / 38.0);
    }

    #[test]
    fn swapping_all_pairs_changes_nothing() {
        let basis = make_basis((0.0, 1.0), 8).unwrap();
        let ps = random_pair(4, 9, &basis, 0.2);
        let flipped = ps.swapped(&[true; 9]);
        let std = Standardization::default();
        let a = StatEngine::new(&ps, std).unwrap().observed();
        let b = StatEngine::new(&flipped, std).unwrap().observed();
        assert!((a.cn - b.cn).abs() <= 1e-12 * a.cn);
        assert!((a.dn - b.dn).abs() <= 1e-12 * a.dn);
        assert!((a.en - b.en).abs() <= 1e-12 * a.en);
    }

    #[test]
    fn scale_equivariance() {
        let basis = make_basis((0.0, 1.0), 8).unwrap();
        let ps = random_pair(5, 9, &basis, 0.2);
        let scaled = PairedSample::new(ps.cond1().scaled(3.0), ps.cond2().scaled(3.0)).unwrap();
        let std = Standardization::default();
        let a = StatEngine::new(&ps, std).unwrap().observed();
        let b = StatEngine::new(&scaled, std).unwrap().observed();
        assert!((b.cn - 9.0 * a.cn).abs() < 1e-10 * b.cn);
        assert!((b.dn - a.dn).abs() < 1e-10 * a.dn);
        assert!((b.en - a.en).abs() < 1e-10 * a.en);
    }

    #[test]
    fn engine_sign_flip_matches_swapped_sample() {
        let basis = make_basis((0.0, 1.0), 6).unwrap();
        let ps = random_pair(6, 5, &basis, 0.1);
        let mask = [true, false, true, true, false];
        let signs: Vec<f64> = mask.iter().map(|&m| if m { -1.0 } else { 1.0 }).collect();
        let std = Standardization::default();
        let via_signs = StatEngine::new(&ps, std).unwrap().evaluate(&signs);
        let direct = StatEngine::new(&ps.swapped(&mask), std).unwrap().observed();
        assert!((via_signs.cn - direct.cn).abs() < 1e-10 * direct.cn.max(1.0));
        assert!((via_signs.dn - direct.dn).abs() < 1e-8 * direct.dn.max(1.0));
        assert!((via_signs.en - direct.en).abs() < 1e-8 * direct.en.max(1.0));
    }

    #[test]
    fn null_of_identical_conditions_has_p_one() {
        let basis = make_basis((0.0, 1.0), 6).unwrap();
        let ps = random_pair(7, 6, &basis, 0.0);
        let same = PairedSample::new(ps.cond1().clone(), ps.cond1().clone()).unwrap();
        let config = PermutationConfig {
            replications: 200,
            seed: 9,
            ..Default::default()
        };
        for report in permutation_tests(&same, &Statistic::ALL, &config).unwrap() {
            assert_eq!(report.observed, 0.0);
            assert_eq!(report.p_value, 1.0);
            assert_eq!(report.p_value_raw, 1.0);
        }
    }

    #[test]
    fn separated_conditions_reject() {
        let basis = make_basis((0.0, 1.0), 6).unwrap();
        let ps = random_pair(8, 20, &basis, 5.0);
        let config = PermutationConfig {
            replications: 2000,
            seed: 1,
            ..Default::default()
        };
        for report in permutation_tests(&ps, &Statistic::ALL, &config).unwrap() {
            assert!(report.p_value <= 0.01, "{report:?}");
        }
    }

    #[test]
    fn determinism_and_report_fields() {
        let basis = make_basis((0.0, 1.0), 6).unwrap();
        let ps = random_pair(9, 8, &basis, 0.3);
        let config = PermutationConfig {
            replications: 300,
            seed: 42,
            keep_null: true,
            ..Default::default()
        };
        let a = permutation_test(&ps, Statistic::Dn, &config).unwrap();
        let b = permutation_test(&ps, Statistic::Dn, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.delta, 300);
        assert_eq!(a.grid_size, 1001);
        assert_eq!(a.null_samples.as_ref().unwrap().len(), 300);
        assert!(a.p_value > 0.0 && a.p_value <= 1.0);
        let json = serde_json::to_value(&a).unwrap();
        for key in [
            "statistic_name",
            "observed",
            "delta",
            "p_value",
            "seed",
            "grid_size",
            "floored_points",
        ] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let mut buf = Vec::new();
        a.write_null_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 301);
    }

    #[test]
    fn pair_by_label_reorders() {
        let basis = make_basis((0.0, 1.0), 5).unwrap();
        let c1 = CurveSet::new(
            basis.clone(),
            vec!["a".into(), "b".into()],
            DMatrix::from_fn(2, 5, |j, _| j as f64),
        )
        .unwrap();
        let c2 = CurveSet::new(
            basis.clone(),
            vec!["b".into(), "a".into()],
            DMatrix::from_fn(2, 5, |j, _| 10.0 + j as f64),
        )
        .unwrap();
        assert!(PairedSample::new(c1.clone(), c2.clone()).is_err());
        let ps = PairedSample::pair_by_label(c1.clone(), c2).unwrap();
        assert_eq!(ps.cond2().coefs()[(0, 0)], 11.0);
        let c3 = CurveSet::new(basis, vec!["a".into(), "c".into()], DMatrix::zeros(2, 5)).unwrap();
        assert!(PairedSample::pair_by_label(c1, c3).is_err());
    }

    #[test]
    fn rejects_bad_config() {
        let basis = make_basis((0.0, 1.0), 5).unwrap();
        let ps = random_pair(10, 4, &basis, 0.0);
        let config = PermutationConfig {
            replications: 0,
            ..Default::default()
        };
        assert!(permutation_test(&ps, Statistic::Cn, &config).is_err());
        let one = ps.cond1().select(&[0]);
        let ps1 = PairedSample::new(one.clone(), one).unwrap();
        assert!(permutation_test(&ps1, Statistic::Cn, &PermutationConfig::default()).is_err());
    }
}
