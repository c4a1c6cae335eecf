//! The generic basis routines accept any piecewise-cubic `Basis`, not just
//! B-splines.

use fdanova_core::basis::{design_matrix, gram, smooth, uniform_grid, Basis};
use fdanova_core::{Error, Result};

/// Orthonormal shifted Legendre polynomials of degree 0..=3 on [0, 1].
struct Legendre;

impl Basis for Legendre {
    fn interval(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn dim(&self) -> usize {
        4
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange { t, a: 0.0, b: 1.0 });
        }
        let x = 2.0 * t - 1.0;
        out[0] = 1.0;
        out[1] = 3f64.sqrt() * x;
        out[2] = 5f64.sqrt() * 0.5 * (3.0 * x * x - 1.0);
        out[3] = 7f64.sqrt() * 0.5 * (5.0 * x.powi(3) - 3.0 * x);
        Ok(())
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![0.0, 1.0]
    }
}

/// Scaled indicators of `m` equal pieces of [0, 1].
struct Haar(usize);

impl Basis for Haar {
    fn interval(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn dim(&self) -> usize {
        self.0
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::OutOfRange { t, a: 0.0, b: 1.0 });
        }
        out.fill(0.0);
        let k = ((t * self.0 as f64) as usize).min(self.0 - 1);
        out[k] = (self.0 as f64).sqrt();
        Ok(())
    }

    fn breakpoints(&self) -> Vec<f64> {
        (0..=self.0).map(|i| i as f64 / self.0 as f64).collect()
    }
}

fn assert_identity(w: &nalgebra::DMatrix<f64>) {
    let p = w.nrows();
    for i in 0..p {
        for j in 0..p {
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!(
                (w[(i, j)] - expected).abs() < 1e-13,
                "W[{i},{j}] = {}",
                w[(i, j)]
            );
        }
    }
}

#[test]
fn orthonormal_bases_have_identity_gram() {
    assert_identity(gram(&Legendre).matrix());
    assert_identity(gram(&Haar(7)).matrix());
}

#[test]
fn cubic_is_recovered_in_polynomial_basis() {
    let t = uniform_grid(0.0, 1.0, 11);
    let y: Vec<f64> = t.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x.powi(3)).collect();
    let coef = smooth(&t, &y, &Legendre).unwrap();
    let fitted = design_matrix(&Legendre, &t).unwrap() * coef;
    for (f, y) in fitted.iter().zip(&y) {
        assert!((f - y).abs() < 1e-12);
    }
    // with W = I the squared L2 norm is the coefficient norm
    let w = gram(&Legendre);
    let direct = w.inner(
        &smooth(&t, &y, &Legendre).unwrap(),
        &smooth(&t, &y, &Legendre).unwrap(),
    );
    let c = smooth(&t, &y, &Legendre).unwrap();
    assert!((direct - c.norm_squared()).abs() < 1e-12);
}

#[test]
fn out_of_range_is_reported() {
    assert!(matches!(
        Legendre.evaluate(1.5),
        Err(Error::OutOfRange { .. })
    ));
}
