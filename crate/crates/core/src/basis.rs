//! Cubic B-spline bases, least-squares smoothing and Gram matrices.
//!
//! A [`BasisSystem`] is a clamped cubic B-spline basis on `[a, b]` with
//! equally spaced interior knots. Curves are stored as coefficient rows in a
//! [`CurveSet`]; all function-space inner products go through the exact
//! [`GramMatrix`] so downstream statistics carry no quadrature error.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEGREE: usize = 3;
const ORDER: usize = DEGREE + 1;

/// Slack allowed when testing `t ∈ [a, b]`, relative to the interval length.
const INTERVAL_SLACK: f64 = 1e-10;

// 4-point Gauss–Legendre rule on [-1, 1]: exact for polynomials of degree ≤ 7.
const GL_NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const GL_WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// A finite function basis on a closed interval whose members are polynomials
/// of degree at most three between consecutive breakpoints.
pub trait Basis {
    fn interval(&self) -> (f64, f64);

    fn dim(&self) -> usize;

    /// Writes `(φ₁(t), …, φ_p(t))` into `out` (length `dim()`).
    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()>;

    /// Sorted breakpoints including both interval ends.
    fn breakpoints(&self) -> Vec<f64>;

    fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }
}

/// Clamped cubic B-spline basis with equally spaced interior knots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BasisSystem {
    a: f64,
    b: f64,
    p: usize,
    interior: Vec<f64>,
    /// Full knot vector: `a` repeated four times, interior knots, `b` four times.
    knots: Vec<f64>,
}

/// Serialized form of a [`BasisSystem`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    pub interval: [f64; 2],
    pub p: usize,
    pub knots: Vec<f64>,
}

impl TryFrom<BasisSpec> for BasisSystem {
    type Error = Error;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        BasisSystem::with_knots((spec.interval[0], spec.interval[1]), spec.knots).and_then(|b| {
            if b.p == spec.p {
                Ok(b)
            } else {
                Err(Error::invalid(format!(
                    "basis dimension {} inconsistent with {} interior knots",
                    spec.p,
                    b.interior.len()
                )))
            }
        })
    }
}

impl From<BasisSystem> for BasisSpec {
    fn from(b: BasisSystem) -> Self {
        BasisSpec {
            interval: [b.a, b.b],
            p: b.p,
            knots: b.interior,
        }
    }
}

/// Cubic B-splines of dimension `p` on `[a, b]` with `p − 4` equally spaced
/// interior knots.
pub fn make_basis(interval: (f64, f64), p: usize) -> Result<BasisSystem> {
    let (a, b) = interval;
    if p < ORDER {
        return Err(Error::invalid(format!(
            "cubic B-spline basis needs dimension ≥ 4, got {p}"
        )));
    }
    if !(a.is_finite() && b.is_finite() && b > a) {
        return Err(Error::invalid(format!("invalid interval [{a}, {b}]")));
    }
    let n_interior = p - ORDER;
    let h = (b - a) / (n_interior + 1) as f64;
    let interior = (1..=n_interior).map(|i| a + i as f64 * h).collect();
    BasisSystem::with_knots(interval, interior)
}

impl BasisSystem {
    /// Builds a clamped cubic basis from an explicit nondecreasing interior
    /// knot vector (each knot strictly inside `(a, b)`).
    pub fn with_knots(interval: (f64, f64), interior: Vec<f64>) -> Result<Self> {
        let (a, b) = interval;
        if !(a.is_finite() && b.is_finite() && b > a) {
            return Err(Error::invalid(format!("invalid interval [{a}, {b}]")));
        }
        if interior.iter().any(|&k| !(k > a && k < b)) {
            return Err(Error::invalid("interior knots must lie in (a, b)"));
        }
        if interior.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("interior knots must be nondecreasing"));
        }
        let mut knots = Vec::with_capacity(interior.len() + 2 * ORDER);
        knots.extend(std::iter::repeat_n(a, ORDER));
        knots.extend_from_slice(&interior);
        knots.extend(std::iter::repeat_n(b, ORDER));
        Ok(BasisSystem {
            a,
            b,
            p: interior.len() + ORDER,
            interior,
            knots,
        })
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior
    }

    /// Clamps `t` into `[a, b]`, rejecting points beyond a tiny slack.
    fn check(&self, t: f64) -> Result<f64> {
        let slack = INTERVAL_SLACK * (self.b - self.a);
        if !t.is_finite() || t < self.a - slack || t > self.b + slack {
            return Err(Error::OutOfRange {
                t,
                a: self.a,
                b: self.b,
            });
        }
        Ok(t.clamp(self.a, self.b))
    }

    /// Knot-span index `i` with `knots[i] ≤ t < knots[i+1]`; the right end
    /// maps to the last nonempty span.
    fn span(&self, t: f64) -> usize {
        let last = self.p - 1;
        if t >= self.knots[last + 1] {
            return last;
        }
        // upper_bound over knots[DEGREE..=last]
        let slice = &self.knots[DEGREE..=last];
        DEGREE + slice.partition_point(|&k| k <= t) - 1
    }

    /// The four possibly nonzero basis values at `t` and the index of the
    /// first of them (`t` must already lie in `[a, b]`).
    pub(crate) fn nonzero(&self, t: f64) -> (usize, [f64; ORDER]) {
        let span = self.span(t);
        let knots = &self.knots;
        let mut n = [0.0; ORDER];
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        n[0] = 1.0;
        for j in 1..=DEGREE {
            left[j] = t - knots[span + 1 - j];
            right[j] = knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (span - DEGREE, n)
    }

    /// Checked variant of [`nonzero`](Self::nonzero).
    pub fn nonzero_at(&self, t: f64) -> Result<(usize, [f64; 4])> {
        let t = self.check(t)?;
        Ok(self.nonzero(t))
    }
}

impl Basis for BasisSystem {
    fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    fn dim(&self) -> usize {
        self.p
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.p {
            return Err(Error::mismatch(format!(
                "output buffer length {} != basis dimension {}",
                out.len(),
                self.p
            )));
        }
        let t = self.check(t)?;
        let (first, vals) = self.nonzero(t);
        out.fill(0.0);
        out[first..first + ORDER].copy_from_slice(&vals);
        Ok(())
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut bp = Vec::with_capacity(self.interior.len() + 2);
        bp.push(self.a);
        bp.extend(self.interior.iter().copied());
        bp.push(self.b);
        bp.dedup();
        bp
    }
}

/// Matrix of inner products `W_kl = ∫ φ_k φ_l` over the basis interval.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(DMatrix<f64>);

impl GramMatrix {
    pub fn from_matrix(w: DMatrix<f64>) -> Self {
        GramMatrix(w)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Sum of all entries; equals `b − a` for a partition-of-unity basis.
    pub fn total(&self) -> f64 {
        self.0.sum()
    }

    /// `x' W y`.
    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * y))
    }
}

/// Exact Gram matrix by 4-point Gauss–Legendre on every breakpoint span.
pub fn gram<B: Basis + ?Sized>(basis: &B) -> GramMatrix {
    let p = basis.dim();
    let mut w = DMatrix::<f64>::zeros(p, p);
    let mut phi = vec![0.0; p];
    for span in basis.breakpoints().windows(2) {
        let (lo, hi) = (span[0], span[1]);
        if hi <= lo {
            continue;
        }
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        for (&x, &wt) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
            let t = mid + half * x;
            basis
                .eval_into(t, &mut phi)
                .expect("quadrature node lies inside the basis interval");
            let scale = wt * half;
            for k in 0..p {
                if phi[k] == 0.0 {
                    continue;
                }
                let fk = scale * phi[k];
                for l in k..p {
                    w[(k, l)] += fk * phi[l];
                }
            }
        }
    }
    w.fill_lower_triangle_with_upper_triangle();
    GramMatrix(w)
}

/// `|grid| × p` matrix of basis values, row `i` = `φ(t_i)'`.
pub fn design_matrix<B: Basis + ?Sized>(basis: &B, grid: &[f64]) -> Result<DMatrix<f64>> {
    let p = basis.dim();
    let mut x = DMatrix::<f64>::zeros(grid.len(), p);
    let mut phi = vec![0.0; p];
    for (i, &t) in grid.iter().enumerate() {
        basis.eval_into(t, &mut phi)?;
        for (k, &v) in phi.iter().enumerate() {
            x[(i, k)] = v;
        }
    }
    Ok(x)
}

/// Least-squares fitter for a fixed set of abscissas.
///
/// The design matrix is factored once with a column-pivoted QR; rank
/// deficiency is reported as an error rather than regularized away.
#[derive(Debug, Clone)]
pub struct Smoother {
    p: usize,
    n: usize,
    design: DMatrix<f64>,
    qr: nalgebra::linalg::ColPivQR<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Smoother {
    pub fn new<B: Basis + ?Sized>(basis: &B, grid_t: &[f64]) -> Result<Self> {
        let p = basis.dim();
        let n = grid_t.len();
        let mut distinct: Vec<f64> = grid_t.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() < p {
            return Err(Error::RankDeficient {
                rank: distinct.len(),
                p,
            });
        }
        let design = design_matrix(basis, grid_t)?;
        let qr = design.clone().col_piv_qr();
        let r = qr.r();
        let r00 = r[(0, 0)].abs();
        let tol = (n.max(p) as f64) * f64::EPSILON * r00;
        let rank = (0..p).filter(|&k| r[(k, k)].abs() > tol).count();
        if rank < p {
            return Err(Error::RankDeficient { rank, p });
        }
        Ok(Smoother { p, n, design, qr })
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    /// Coefficients minimizing `Σ_i (y_i − φ(t_i)'a)²`.
    pub fn fit(&self, y: &[f64]) -> Result<DVector<f64>> {
        if y.len() != self.n {
            return Err(Error::mismatch(format!(
                "{} observations for {} abscissas",
                y.len(),
                self.n
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("observations must be finite"));
        }
        let mut qty = DVector::from_column_slice(y);
        self.qr.q_tr_mul(&mut qty);
        let r = self.qr.r();
        let mut z = qty.rows(0, self.p).into_owned();
        let solved = r
            .view((0, 0), (self.p, self.p))
            .solve_upper_triangular_mut(&mut z);
        if !solved {
            return Err(Error::RankDeficient {
                rank: self.p - 1,
                p: self.p,
            });
        }
        self.qr.p().inv_permute_rows(&mut z);
        Ok(z)
    }

    pub fn residual_ss(&self, y: &[f64], coef: &DVector<f64>) -> f64 {
        let fitted = &self.design * coef;
        y.iter()
            .zip(fitted.iter())
            .map(|(yi, fi)| (yi - fi).powi(2))
            .sum()
    }
}

/// Least-squares basis coefficients for one curve.
pub fn smooth<B: Basis + ?Sized>(
    grid_t: &[f64],
    grid_y: &[f64],
    basis: &B,
) -> Result<DVector<f64>> {
    Smoother::new(basis, grid_t)?.fit(grid_y)
}

/// `n` curves sharing one basis, stored as an `n × p` coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    basis: BasisSystem,
    labels: Vec<String>,
    coefs: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct CurveSetRepr {
    basis: BasisSystem,
    labels: Vec<String>,
    #[serde(rename = "A")]
    rows: Vec<Vec<f64>>,
}

impl Serialize for CurveSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows = (0..self.coefs.nrows())
            .map(|j| self.coefs.row(j).iter().copied().collect())
            .collect();
        CurveSetRepr {
            basis: self.basis.clone(),
            labels: self.labels.clone(),
            rows,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for CurveSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = CurveSetRepr::deserialize(d)?;
        let p = repr.basis.dim();
        let n = repr.rows.len();
        if repr.rows.iter().any(|r| r.len() != p) {
            return Err(serde::de::Error::custom(
                "coefficient row length != basis dimension",
            ));
        }
        let coefs = DMatrix::from_fn(n, p, |j, k| repr.rows[j][k]);
        CurveSet::new(repr.basis, repr.labels, coefs).map_err(serde::de::Error::custom)
    }
}

impl CurveSet {
    pub fn new(basis: BasisSystem, labels: Vec<String>, coefs: DMatrix<f64>) -> Result<Self> {
        if coefs.ncols() != basis.dim() {
            return Err(Error::mismatch(format!(
                "{} coefficient columns for basis dimension {}",
                coefs.ncols(),
                basis.dim()
            )));
        }
        if labels.len() != coefs.nrows() {
            return Err(Error::mismatch(format!(
                "{} labels for {} curves",
                labels.len(),
                coefs.nrows()
            )));
        }
        if coefs.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficients must be finite"));
        }
        Ok(CurveSet {
            basis,
            labels,
            coefs,
        })
    }

    /// Smooths each row of observations `ys` (all on `grid_t`) into one curve.
    pub fn from_observations(
        basis: BasisSystem,
        grid_t: &[f64],
        ys: &[Vec<f64>],
        labels: Vec<String>,
    ) -> Result<Self> {
        let smoother = Smoother::new(&basis, grid_t)?;
        let mut coefs = DMatrix::<f64>::zeros(ys.len(), basis.dim());
        for (j, y) in ys.iter().enumerate() {
            let a = smoother.fit(y)?;
            coefs.set_row(j, &a.transpose());
        }
        CurveSet::new(basis, labels, coefs)
    }

    pub fn basis(&self) -> &BasisSystem {
        &self.basis
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
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

    /// Same curves with every coefficient multiplied by `alpha`.
    pub fn scaled(&self, alpha: f64) -> CurveSet {
        CurveSet {
            basis: self.basis.clone(),
            labels: self.labels.clone(),
            coefs: &self.coefs * alpha,
        }
    }

    /// Keeps the rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> CurveSet {
        let coefs = self.coefs.select_rows(idx);
        let labels = idx.iter().map(|&j| self.labels[j].clone()).collect();
        CurveSet {
            basis: self.basis.clone(),
            labels,
            coefs,
        }
    }
}

/// `n × |grid|` matrix with entry `(j, i) = a_j'φ(t_i)`.
pub fn eval_curveset(cs: &CurveSet, grid: &[f64]) -> Result<DMatrix<f64>> {
    let phi = design_matrix(&cs.basis, grid)?;
    Ok(&cs.coefs * phi.transpose())
}

/// `n` equally spaced points covering `[a, b]` including both ends.
pub fn uniform_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { b } else { a + i as f64 * h })
                .collect()
        }
    }
}
