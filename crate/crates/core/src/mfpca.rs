//! Multivariate functional PCA through the basis-coefficient reduction.
//!
//! With coefficient rows `a_j` (all variables concatenated) and the block
//! Gram matrix `W`, the covariance operator's eigenproblem reduces to
//! `Σ_A W b' = λ b'`. Substituting `u = b W^{1/2}` turns it into the
//! symmetric problem `W^{1/2} Σ_A W^{1/2} u' = λ u'`, which is what we solve.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::basis::{gram, Basis, BasisSystem, CurveSet, GramMatrix};
use crate::error::{Error, Result};
use crate::fstats::center_rows;

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 0.99;
/// Ratio of per-variable integrated variances above which the model flags
/// unequal scales.
pub const SCALE_WARNING_RATIO: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub basis: BasisSystem,
}

/// `H`-variate curves per subject with concatenated coefficient rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiCurveSet {
    variables: Vec<Variable>,
    subjects: Vec<String>,
    groups: Vec<String>,
    coefs: DMatrix<f64>,
}

impl MultiCurveSet {
    pub fn new(
        variables: Vec<Variable>,
        subjects: Vec<String>,
        groups: Vec<String>,
        coefs: DMatrix<f64>,
    ) -> Result<Self> {
        if variables.is_empty() {
            return Err(Error::invalid(
                "multivariate curve set needs at least one variable",
            ));
        }
        let interval = variables[0].basis.interval();
        if variables.iter().any(|v| v.basis.interval() != interval) {
            return Err(Error::mismatch(
                "all variables must share the same interval",
            ));
        }
        let total: usize = variables.iter().map(|v| v.basis.dim()).sum();
        if coefs.ncols() != total {
            return Err(Error::mismatch(format!(
                "{} coefficient columns for total basis dimension {total}",
                coefs.ncols()
            )));
        }
        if subjects.len() != coefs.nrows() || groups.len() != coefs.nrows() {
            return Err(Error::mismatch(format!(
                "{} rows, {} subject labels, {} group labels",
                coefs.nrows(),
                subjects.len(),
                groups.len()
            )));
        }
        if coefs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(MultiCurveSet {
            variables,
            subjects,
            groups,
            coefs,
        })
    }

    /// Joins per-variable curve sets over the same subjects (same order).
    pub fn from_curvesets(
        names: &[String],
        sets: &[CurveSet],
        groups: Vec<String>,
    ) -> Result<Self> {
        if names.len() != sets.len() || sets.is_empty() {
            return Err(Error::mismatch("one name per curve set required"));
        }
        let subjects = sets[0].labels().to_vec();
        if sets.iter().any(|s| s.labels() != subjects.as_slice()) {
            return Err(Error::mismatch("curve sets list different subjects"));
        }
        let n = subjects.len();
        let total: usize = sets.iter().map(|s| s.basis().dim()).sum();
        let mut coefs = DMatrix::zeros(n, total);
        let mut offset = 0;
        for s in sets {
            let p = s.basis().dim();
            coefs.view_mut((0, offset), (n, p)).copy_from(s.coefs());
            offset += p;
        }
        let variables = names
            .iter()
            .zip(sets)
            .map(|(name, s)| Variable {
                name: name.clone(),
                basis: s.basis().clone(),
            })
            .collect();
        MultiCurveSet::new(variables, subjects, groups, coefs)
    }

    pub fn variables(&self) -> &[Variable] {
        &self.variables
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn groups(&self) -> &[String] {
        &self.groups
    }

    pub fn coefs(&self) -> &DMatrix<f64> {
        &self.coefs
    }

    pub fn len(&self) -> usize {
        self.coefs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coefs.nrows() == 0
    }

    pub fn total_dim(&self) -> usize {
        self.coefs.ncols()
    }

    /// Column offset of each variable's block.
    pub fn offsets(&self) -> Vec<usize> {
        self.variables
            .iter()
            .scan(0, |acc, v| {
                let start = *acc;
                *acc += v.basis.dim();
                Some(start)
            })
            .collect()
    }

    /// The univariate curve set of variable `h`.
    pub fn variable(&self, h: usize) -> Result<CurveSet> {
        let var = self
            .variables
            .get(h)
            .ok_or_else(|| Error::invalid(format!("no variable {h}")))?;
        let offset = self.offsets()[h];
        let p = var.basis.dim();
        let coefs = self.coefs.columns(offset, p).into_owned();
        CurveSet::new(var.basis.clone(), self.subjects.clone(), coefs)
    }

    /// Single-variable view keeping subjects and groups.
    pub fn univariate(&self, h: usize) -> Result<MultiCurveSet> {
        let cs = self.variable(h)?;
        MultiCurveSet::from_curvesets(
            std::slice::from_ref(&self.variables[h].name),
            std::slice::from_ref(&cs),
            self.groups.clone(),
        )
    }

    /// Reorders variables (and their coefficient blocks) as `order`.
    pub fn permute_variables(&self, order: &[usize]) -> Result<MultiCurveSet> {
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        if sorted != (0..self.variables.len()).collect::<Vec<_>>() {
            return Err(Error::invalid("not a permutation of the variables"));
        }
        let sets = order
            .iter()
            .map(|&h| self.variable(h))
            .collect::<Result<Vec<_>>>()?;
        let names: Vec<String> = order
            .iter()
            .map(|&h| self.variables[h].name.clone())
            .collect();
        MultiCurveSet::from_curvesets(&names, &sets, self.groups.clone())
    }

    fn with_coefs(&self, coefs: DMatrix<f64>) -> Result<MultiCurveSet> {
        MultiCurveSet::new(
            self.variables.clone(),
            self.subjects.clone(),
            self.groups.clone(),
            coefs,
        )
    }
}

/// Block-diagonal Gram matrix: block `h` is the Gram matrix of variable `h`.
pub fn block_gram(mcs: &MultiCurveSet) -> GramMatrix {
    let total = mcs.total_dim();
    let mut w = DMatrix::zeros(total, total);
    for (var, offset) in mcs.variables.iter().zip(mcs.offsets()) {
        let block = gram(&var.basis).into_inner();
        let p = block.nrows();
        w.view_mut((offset, offset), (p, p)).copy_from(&block);
    }
    GramMatrix::from_matrix(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfpcaModel {
    pub variables: Vec<Variable>,
    pub subjects: Vec<String>,
    pub groups: Vec<String>,
    pub mean_coef: DVector<f64>,
    /// Nonincreasing, nonnegative; length `M = min(n − 1, P)`.
    pub eigenvalues: Vec<f64>,
    /// Row `m` is `b_m`, the coefficients of eigenfunction `f_m = Φ b_m'`.
    pub eigenfunctions: DMatrix<f64>,
    /// `n × M` centered scores `ξ_jm`.
    pub scores: DMatrix<f64>,
    pub w: GramMatrix,
    pub w_half: DMatrix<f64>,
    /// Integrated variance `tr(W_h Σ_hh)` per variable.
    pub variable_variances: Vec<f64>,
    /// Variable variances differ by more than [`SCALE_WARNING_RATIO`].
    pub scale_warning: bool,
}

impl MfpcaModel {
    pub fn n_components(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn cumvar(&self) -> Vec<f64> {
        cumulative_proportions(&self.eigenvalues)
    }

    pub fn export(&self, q: Option<usize>) -> ModelExport {
        let m = q.unwrap_or(self.n_components()).min(self.n_components());
        ModelExport {
            variables: self.variables.clone(),
            eigenvalues: self.eigenvalues.clone(),
            cumvar: self.cumvar(),
            mean_coef: self.mean_coef.iter().copied().collect(),
            eigenfunctions: rows(&self.eigenfunctions.rows(0, m).into_owned()),
            subjects: self.subjects.clone(),
            groups: self.groups.clone(),
            scores: rows(&self.scores.columns(0, m).into_owned()),
            scale_warning: self.scale_warning,
        }
    }

    /// Scores CSV: `subject,group,pc1..pcq`.
    pub fn write_scores_csv<W: Write>(&self, q: usize, out: W) -> Result<()> {
        let q = q.min(self.n_components());
        let to_err = |e: csv::Error| Error::Csv {
            path: "<scores>".into(),
            source: e,
        };
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["subject".to_string(), "group".to_string()];
        header.extend((1..=q).map(|m| format!("pc{m}")));
        w.write_record(&header).map_err(to_err)?;
        for j in 0..self.scores.nrows() {
            let mut rec = vec![self.subjects[j].clone(), self.groups[j].clone()];
            rec.extend((0..q).map(|m| self.scores[(j, m)].to_string()));
            w.write_record(&rec).map_err(to_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<scores>".into(),
            source: e,
        })
    }
}

/// JSON form of a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelExport {
    pub variables: Vec<Variable>,
    pub eigenvalues: Vec<f64>,
    pub cumvar: Vec<f64>,
    pub mean_coef: Vec<f64>,
    pub eigenfunctions: Vec<Vec<f64>>,
    pub subjects: Vec<String>,
    pub groups: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub scale_warning: bool,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Symmetric square root and inverse square root of a PSD matrix.
fn sqrt_and_inv_sqrt(w: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = SymmetricEigen::new(w.clone());
    let max = eig.eigenvalues.amax();
    let tol = max * (w.nrows() as f64) * f64::EPSILON;
    if eig.eigenvalues.iter().any(|&e| e <= tol) {
        return Err(Error::Singular(
            "Gram matrix W is not positive definite".into(),
        ));
    }
    let sqrt = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
    let inv = sqrt.map(|s| 1.0 / s);
    let v = &eig.eigenvectors;
    let half = v * DMatrix::from_diagonal(&sqrt) * v.transpose();
    let inv_half = v * DMatrix::from_diagonal(&inv) * v.transpose();
    Ok((symmetrize(half), symmetrize(inv_half)))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn fit_mfpca(mcs: &MultiCurveSet) -> Result<MfpcaModel> {
    let n = mcs.len();
    if n < 2 {
        return Err(Error::invalid("MFPCA needs at least 2 subjects"));
    }
    let total = mcs.total_dim();
    let w = block_gram(mcs);
    let (w_half, w_inv_half) = sqrt_and_inv_sqrt(w.matrix())?;

    let mean_coef: DVector<f64> = mcs.coefs.row_mean().transpose();
    let centered = center_rows(&mcs.coefs);
    let sigma = centered.transpose() * &centered / (n as f64 - 1.0);
    let transformed = symmetrize(&w_half * &sigma * &w_half);

    let eig = SymmetricEigen::new(transformed);
    let mut order: Vec<usize> = (0..total).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let m_count = (n - 1).min(total);

    let mut eigenvalues = Vec::with_capacity(m_count);
    let mut u = DMatrix::zeros(total, m_count);
    for (m, &idx) in order.iter().take(m_count).enumerate() {
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
        let mut col = eig.eigenvectors.column(idx).into_owned();
        let lead = col.iamax();
        if col[lead] < 0.0 {
            col.neg_mut();
        }
        u.set_column(m, &col);
    }

    let eigenfunctions = (&w_inv_half * &u).transpose();
    let scores = &centered * &w_half * &u;

    let variable_variances: Vec<f64> = mcs
        .variables
        .iter()
        .zip(mcs.offsets())
        .map(|(v, off)| {
            let p = v.basis.dim();
            let wb = w.matrix().view((off, off), (p, p));
            let sb = sigma.view((off, off), (p, p));
            (wb * sb).trace()
        })
        .collect();
    let vmax = variable_variances.iter().copied().fold(0.0, f64::max);
    let vmin = variable_variances
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let scale_warning = vmax > 0.0 && (vmin <= 0.0 || vmax / vmin > SCALE_WARNING_RATIO);

    Ok(MfpcaModel {
        variables: mcs.variables.clone(),
        subjects: mcs.subjects.clone(),
        groups: mcs.groups.clone(),
        mean_coef,
        eigenvalues,
        eigenfunctions,
        scores,
        w,
        w_half,
        variable_variances,
        scale_warning,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSelection {
    pub q: usize,
    pub threshold: f64,
    pub cumvar: Vec<f64>,
}

pub(crate) fn cumulative_proportions(eigenvalues: &[f64]) -> Vec<f64> {
    let total: f64 = eigenvalues.iter().sum();
    let mut acc = 0.0;
    eigenvalues
        .iter()
        .map(|&l| {
            acc += l;
            if total > 0.0 {
                acc / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Smallest `q` whose cumulative explained proportion reaches `threshold`.
pub fn choose_q_from_eigenvalues(
    eigenvalues: &[f64],
    threshold: f64,
) -> Result<ComponentSelection> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "variance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if eigenvalues.iter().all(|&l| l <= 0.0) {
        return Err(Error::Degenerate("all eigenvalues are zero".into()));
    }
    let cumvar = cumulative_proportions(eigenvalues);
    // tolerance absorbs rounding in the cumulative sums
    let q = cumvar
        .iter()
        .position(|&c| c >= threshold - 1e-12)
        .map(|i| i + 1)
        .unwrap_or(cumvar.len());
    Ok(ComponentSelection {
        q,
        threshold,
        cumvar,
    })
}

pub fn choose_q(model: &MfpcaModel, threshold: f64) -> Result<ComponentSelection> {
    choose_q_from_eigenvalues(&model.eigenvalues, threshold)
}

/// Karhunen-Loève truncation: rows `μ + Σ_{m≤q} ξ_jm b_m`. `q = 0` gives
/// the mean function for every subject.
pub fn reconstruct(model: &MfpcaModel, q: usize) -> Result<MultiCurveSet> {
    let m = model.n_components();
    if q > m {
        return Err(Error::invalid(format!(
            "truncation q = {q} exceeds the {m} available components"
        )));
    }
    let n = model.scores.nrows();
    let mut coefs = model.scores.columns(0, q) * model.eigenfunctions.rows(0, q);
    for j in 0..n {
        let mut row = coefs.row_mut(j);
        row += model.mean_coef.transpose();
    }
    let template = MultiCurveSet {
        variables: model.variables.clone(),
        subjects: model.subjects.clone(),
        groups: model.groups.clone(),
        coefs: DMatrix::zeros(n, model.mean_coef.len()),
    };
    template.with_coefs(coefs)
}

/// `Σ_j (a_j − r_j)' W (a_j − r_j)`.
pub fn w_norm_residual(original: &MultiCurveSet, recon: &MultiCurveSet, w: &GramMatrix) -> f64 {
    let diff = original.coefs() - recon.coefs();
    (&diff * w.matrix()).component_mul(&diff).sum()
}
