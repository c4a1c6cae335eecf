//! Mean functions, covariance surfaces and the paired-difference variance
//! function, all held in coefficient space.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::{Basis, BasisSystem, CurveSet};
use crate::error::{Error, Result};
use crate::rmfanova::PairedSample;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFunction {
    pub basis: BasisSystem,
    pub coef: DVector<f64>,
}

impl MeanFunction {
    pub fn eval(&self, t: f64) -> Result<f64> {
        let phi = self.basis.evaluate(t)?;
        Ok(self.coef.iter().zip(&phi).map(|(a, f)| a * f).sum())
    }

    pub fn eval_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&t| self.eval(t)).collect()
    }
}

/// `Ĉ(s,t) = φ(s)' S φ(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSurface {
    pub basis: BasisSystem,
    pub s: DMatrix<f64>,
}

impl CovarianceSurface {
    pub fn eval(&self, s: f64, t: f64) -> Result<f64> {
        let phi_s = DVector::from_vec(self.basis.evaluate(s)?);
        let phi_t = DVector::from_vec(self.basis.evaluate(t)?);
        Ok(phi_s.dot(&(&self.s * phi_t)))
    }

    /// Writes the surface on `grid × grid` as CSV with header `s,t,value`.
    pub fn write_grid_csv<W: Write>(&self, grid: &[f64], out: W) -> Result<()> {
        write_surface_csv(grid, out, |s, t| self.eval(s, t))
    }
}

/// `K̂(t,t) = φ(t)' M φ(t)` with `M = Σ̂₁ − 2Σ̂₁₂ + Σ̂₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct KHatFunction {
    pub basis: BasisSystem,
    pub m: DMatrix<f64>,
}

impl KHatFunction {
    pub fn eval(&self, t: f64) -> Result<f64> {
        let phi = DVector::from_vec(self.basis.evaluate(t)?);
        Ok(phi.dot(&(&self.m * &phi)))
    }

    pub fn eval_grid(&self, grid: &[f64]) -> Result<Vec<f64>> {
        grid.iter().map(|&t| self.eval(t)).collect()
    }
}

pub fn mean_function(cs: &CurveSet) -> Result<MeanFunction> {
    if cs.is_empty() {
        return Err(Error::invalid("mean of an empty CurveSet"));
    }
    Ok(MeanFunction {
        basis: cs.basis().clone(),
        coef: column_means(cs.coefs()),
    })
}

pub(crate) fn column_means(a: &DMatrix<f64>) -> DVector<f64> {
    a.row_mean().transpose()
}

/// Sample cross-covariance (divisor `n − 1`) of the rows of `a1` against the
/// rows of `a2`.
pub(crate) fn cross_cov(a1: &DMatrix<f64>, a2: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a1.nrows();
    let c1 = center_rows(a1);
    let c2 = center_rows(a2);
    c1.transpose() * c2 / (n as f64 - 1.0)
}

pub(crate) fn center_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mean = a.row_mean();
    let mut c = a.clone();
    for mut row in c.row_iter_mut() {
        row -= &mean;
    }
    c
}

pub fn cov_surface(cs1: &CurveSet, cs2: &CurveSet) -> Result<CovarianceSurface> {
    if cs1.basis() != cs2.basis() {
        return Err(Error::mismatch("curve sets use different bases"));
    }
    if cs1.len() != cs2.len() {
        return Err(Error::mismatch(format!(
            "{} curves against {} curves",
            cs1.len(),
            cs2.len()
        )));
    }
    if cs1.labels() != cs2.labels() {
        return Err(Error::mismatch(
            "subject labels differ or are in a different order",
        ));
    }
    if cs1.len() < 2 {
        return Err(Error::invalid("covariance needs at least 2 curves"));
    }
    Ok(CovarianceSurface {
        basis: cs1.basis().clone(),
        s: cross_cov(cs1.coefs(), cs2.coefs()),
    })
}

pub fn khat(ps: &PairedSample) -> Result<KHatFunction> {
    if ps.len() < 2 {
        return Err(Error::invalid("K̂ needs at least 2 pairs"));
    }
    let s1 = cov_surface(ps.cond1(), ps.cond1())?.s;
    let s2 = cov_surface(ps.cond2(), ps.cond2())?.s;
    let s12 = cov_surface(ps.cond1(), ps.cond2())?.s;
    // Σ̂₁₂ + Σ̂₁₂' keeps M exactly symmetric; φ'Σ̂₁₂φ is unchanged by it.
    let m = s1 + s2 - (&s12 + s12.transpose());
    Ok(KHatFunction {
        basis: ps.basis().clone(),
        m,
    })
}

pub(crate) fn write_surface_csv<W: Write>(
    grid: &[f64],
    out: W,
    f: impl Fn(f64, f64) -> Result<f64>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Csv {
        path: "<surface>".into(),
        source: e,
    };
    w.write_record(["s", "t", "value"]).map_err(csv_err)?;
    for &s in grid {
        for &t in grid {
            let v = f(s, t)?;
            w.write_record([s.to_string(), t.to_string(), v.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| Error::Io {
        path: "<surface>".into(),
        source: e,
    })?;
    Ok(())
}
