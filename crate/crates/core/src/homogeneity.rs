//! Equality of group mean functions, tested on principal-component scores.
//!
//! Two routes: a one-way F-test per component with a Bonferroni global
//! decision, and a spatial-rank Kruskal–Wallis extension whose null is
//! approximated by permuting group labels.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::mfpca::{choose_q, fit_mfpca, MultiCurveSet, DEFAULT_VARIANCE_THRESHOLD};
use crate::resample::{add_one_p_value, count_exceedances, replication_rng};
use crate::rmfanova::DEFAULT_REPLICATIONS;

/// `n × q` score matrix with a group label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSample {
    scores: DMatrix<f64>,
    group_names: Vec<String>,
    /// Group index per row, into `group_names` (sorted).
    membership: Vec<usize>,
}

impl ScoreSample {
    pub fn new(scores: DMatrix<f64>, groups: &[String]) -> Result<Self> {
        if groups.len() != scores.nrows() {
            return Err(Error::mismatch(format!(
                "{} group labels for {} rows",
                groups.len(),
                scores.nrows()
            )));
        }
        if scores.ncols() == 0 {
            return Err(Error::invalid("score sample needs at least one component"));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("scores must be finite"));
        }
        let index: BTreeMap<&String, usize> = groups
            .iter()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .enumerate()
            .map(|(i, g)| (g, i))
            .collect();
        if index.len() < 2 {
            return Err(Error::invalid("homogeneity tests need at least 2 groups"));
        }
        let group_names = index.keys().map(|g| (*g).clone()).collect();
        let membership = groups.iter().map(|g| index[g]).collect();
        Ok(ScoreSample {
            scores,
            group_names,
            membership,
        })
    }

    pub fn scores(&self) -> &DMatrix<f64> {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.scores.nrows()
    }

    pub fn q(&self) -> usize {
        self.scores.ncols()
    }

    pub fn n_groups(&self) -> usize {
        self.group_names.len()
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups()];
        for &g in &self.membership {
            sizes[g] += 1;
        }
        sizes
    }

    /// Same sample with rows in the order `perm`.
    pub fn permuted_rows(&self, perm: &[usize]) -> ScoreSample {
        ScoreSample {
            scores: self.scores.select_rows(perm),
            group_names: self.group_names.clone(),
            membership: perm.iter().map(|&j| self.membership[j]).collect(),
        }
    }

    /// Same sample with every score row mapped to `rotation * row'`.
    pub fn transformed(&self, rotation: &DMatrix<f64>) -> ScoreSample {
        ScoreSample {
            scores: &self.scores * rotation.transpose(),
            group_names: self.group_names.clone(),
            membership: self.membership.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomogeneityMethod {
    AnovaBonferroni,
    MvRankPermutation,
}

impl std::str::FromStr for HomogeneityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "anova" | "anova_bonferroni" | "anova-bonferroni" => Ok(Self::AnovaBonferroni),
            "mv-rank" | "mv_rank" | "mv_rank_permutation" | "mv-rank-permutation" => {
                Ok(Self::MvRankPermutation)
            }
            other => Err(Error::invalid(format!(
                "unknown homogeneity method '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSize {
    pub group: String,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    pub method: HomogeneityMethod,
    pub q: usize,
    pub groups: Vec<GroupSize>,
    pub global_p: f64,
    /// Parametric route: F statistic and p-value per component.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_component_f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_component_p: Option<Vec<f64>>,
    /// Components with zero within-group variance (1-based).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub no_variance_components: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject: Option<bool>,
    /// Permutation route.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coincident_pairs: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl HomogeneityReport {
    fn base(method: HomogeneityMethod, s: &ScoreSample) -> Self {
        HomogeneityReport {
            method,
            q: s.q(),
            groups: s
                .group_names
                .iter()
                .zip(s.group_sizes())
                .map(|(g, size)| GroupSize {
                    group: g.clone(),
                    size,
                })
                .collect(),
            global_p: 1.0,
            per_component_f: None,
            per_component_p: None,
            no_variance_components: Vec::new(),
            alpha: None,
            reject: None,
            statistic: None,
            p_value_raw: None,
            delta: None,
            seed: None,
            coincident_pairs: None,
            notes: Vec::new(),
        }
    }
}

/// One-way F-test on each score column; Bonferroni global decision.
pub fn anova_scores(s: &ScoreSample, alpha: f64) -> Result<HomogeneityReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "significance level {alpha} outside [0, 1]"
        )));
    }
    let sizes = s.group_sizes();
    if sizes.iter().any(|&m| m < 2) {
        return Err(Error::invalid(
            "every group needs at least 2 members for ANOVA",
        ));
    }
    let n = s.n();
    let g = s.n_groups();
    if n <= g {
        return Err(Error::invalid("ANOVA needs more observations than groups"));
    }
    let dist = FisherSnedecor::new((g - 1) as f64, (n - g) as f64)
        .map_err(|e| Error::invalid(e.to_string()))?;

    let mut fs = Vec::with_capacity(s.q());
    let mut ps = Vec::with_capacity(s.q());
    let mut flat = Vec::new();
    for m in 0..s.q() {
        let col = s.scores.column(m);
        let grand = col.mean();
        let mut sums = vec![0.0; g];
        for (j, &gi) in s.membership.iter().enumerate() {
            sums[gi] += col[j];
        }
        let means: Vec<f64> = sums
            .iter()
            .zip(&sizes)
            .map(|(s, &c)| s / c as f64)
            .collect();
        let ssb: f64 = means
            .iter()
            .zip(&sizes)
            .map(|(mu, &c)| c as f64 * (mu - grand).powi(2))
            .sum();
        let ssw: f64 = s
            .membership
            .iter()
            .enumerate()
            .map(|(j, &gi)| (col[j] - means[gi]).powi(2))
            .sum();
        // zero within-group spread up to rounding of the data scale
        let scale: f64 = col.iter().map(|v| (v - grand).powi(2)).sum::<f64>()
            + col.iter().map(|v| v * v).sum::<f64>() * 1e-24;
        if ssw <= 1e-20 * scale || scale == 0.0 {
            flat.push(m + 1);
            let separated = ssb > 1e-20 * scale && scale > 0.0;
            fs.push(if separated { f64::INFINITY } else { 0.0 });
            ps.push(if separated { 0.0 } else { 1.0 });
            continue;
        }
        let f = (ssb / (g - 1) as f64) / (ssw / (n - g) as f64);
        fs.push(f);
        ps.push(dist.sf(f).clamp(0.0, 1.0));
    }
    let q = s.q() as f64;
    let min_p = ps.iter().copied().fold(1.0, f64::min);
    let mut report = HomogeneityReport::base(HomogeneityMethod::AnovaBonferroni, s);
    report.global_p = (q * min_p).min(1.0);
    report.reject = Some(ps.iter().any(|&p| p < alpha / q));
    report.alpha = Some(alpha);
    if !flat.is_empty() {
        report
            .notes
            .push("components with zero within-group variance; F is not defined there".into());
    }
    // JSON has no infinity; a separated no-variance component reports f64::MAX
    report.per_component_f = Some(
        fs.into_iter()
            .map(|f| if f.is_finite() { f } else { f64::MAX })
            .collect(),
    );
    report.per_component_p = Some(ps);
    report.no_variance_components = flat;
    Ok(report)
}

/// Centered spatial ranks `R(x_j) = n⁻¹ Σ_k u(x_j − x_k)` and the number of
/// coincident pairs (which contribute the zero vector).
pub fn spatial_ranks(x: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let n = x.nrows();
    let q = x.ncols();
    let mut ranks = DMatrix::zeros(n, q);
    let mut coincident = 0;
    for j in 0..n {
        for k in (j + 1)..n {
            let diff = x.row(j) - x.row(k);
            let norm = diff.norm();
            if norm == 0.0 {
                coincident += 1;
                continue;
            }
            let u = diff / norm;
            {
                let mut rj = ranks.row_mut(j);
                rj += &u;
            }
            let mut rk = ranks.row_mut(k);
            rk -= &u;
        }
    }
    (ranks / n as f64, coincident)
}

/// Symmetric (pseudo-)inverse square root and whether `B` was singular.
fn inverse_sqrt(b: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new((b + b.transpose()) * 0.5);
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = max * b.nrows() as f64 * 1e-12;
    let mut singular = false;
    let d = eig.eigenvalues.map(|e| {
        if e > tol && max > 0.0 {
            1.0 / e.sqrt()
        } else {
            singular = true;
            0.0
        }
    });
    let v = &eig.eigenvectors;
    (v * DMatrix::from_diagonal(&d) * v.transpose(), singular)
}

struct RankStatistic {
    /// Standardized ranks `B^{-1/2} R(x_j)`, one row per observation.
    z: DMatrix<f64>,
    n_groups: usize,
}

impl RankStatistic {
    /// `Σ_i n_i R̄_i' B⁻¹ R̄_i` for the given group membership.
    fn value(&self, membership: &[usize]) -> f64 {
        let q = self.z.ncols();
        let mut sums = vec![DVector::<f64>::zeros(q); self.n_groups];
        let mut counts = vec![0usize; self.n_groups];
        for (j, &g) in membership.iter().enumerate() {
            sums[g] += self.z.row(j).transpose();
            counts[g] += 1;
        }
        sums.iter()
            .zip(&counts)
            .filter(|(_, &c)| c > 0)
            .map(|(s, &c)| s.norm_squared() / c as f64)
            .sum()
    }
}

/// Spatial-rank Kruskal–Wallis extension with a label-permutation null.
pub fn mv_rank_test(s: &ScoreSample, replications: usize, seed: u64) -> Result<HomogeneityReport> {
    if replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    if s.n() < s.n_groups() + 1 {
        return Err(Error::invalid(format!(
            "rank test needs n ≥ g + 1 (n = {}, g = {})",
            s.n(),
            s.n_groups()
        )));
    }
    let n = s.n();
    let (ranks, coincident) = spatial_ranks(&s.scores);
    let b = ranks.transpose() * &ranks / n as f64;
    let (b_inv_sqrt, singular) = inverse_sqrt(&b);
    let stat = RankStatistic {
        z: &ranks * &b_inv_sqrt,
        n_groups: s.n_groups(),
    };
    let observed = stat.value(&s.membership);
    let null: Vec<f64> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(seed, r);
            let mut labels = s.membership.clone();
            labels.shuffle(&mut rng);
            stat.value(&labels)
        })
        .collect();
    let exceed = count_exceedances(observed, &null);

    let mut report = HomogeneityReport::base(HomogeneityMethod::MvRankPermutation, s);
    report.global_p = add_one_p_value(exceed, replications);
    report.p_value_raw = Some(exceed as f64 / replications as f64);
    report.statistic = Some(observed);
    report.delta = Some(replications);
    report.seed = Some(seed);
    report.coincident_pairs = Some(coincident);
    if singular {
        report
            .notes
            .push("rank covariance B is singular; pseudo-inverse used".into());
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndepConfig {
    pub threshold: f64,
    pub method: HomogeneityMethod,
    pub replications: usize,
    pub seed: u64,
    pub alpha: f64,
}

impl Default for IndepConfig {
    fn default() -> Self {
        IndepConfig {
            threshold: DEFAULT_VARIANCE_THRESHOLD,
            method: HomogeneityMethod::MvRankPermutation,
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndepReport {
    pub variables: Vec<String>,
    pub q: usize,
    pub cumvar: Vec<f64>,
    pub scale_warning: bool,
    pub test: HomogeneityReport,
}

/// MFPCA, component selection, then the chosen homogeneity test on the
/// retained scores.
pub fn fanova_indep(mcs: &MultiCurveSet, config: &IndepConfig) -> Result<IndepReport> {
    let model = fit_mfpca(mcs)?;
    let selection = choose_q(&model, config.threshold)?;
    let scores = model.scores.columns(0, selection.q).into_owned();
    let sample = ScoreSample::new(scores, mcs.groups())?;
    let test = match config.method {
        HomogeneityMethod::AnovaBonferroni => anova_scores(&sample, config.alpha)?,
        HomogeneityMethod::MvRankPermutation => {
            mv_rank_test(&sample, config.replications, config.seed)?
        }
    };
    Ok(IndepReport {
        variables: mcs.variables().iter().map(|v| v.name.clone()).collect(),
        q: selection.q,
        cumvar: selection.cumvar,
        scale_warning: model.scale_warning,
        test,
    })
}
