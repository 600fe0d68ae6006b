//! Closed-form ridge regression via a Cholesky solve of the normal equations.

use super::Matrix;
use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    pub fn factor(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return Err(Error::Shape(format!(
                "cholesky of a {}x{} matrix",
                n,
                a.cols()
            )));
        }
        let scale = (0..n)
            .map(|i| a.get(i, i).abs())
            .fold(0.0, f64::max)
            .max(1.0);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > 1e-12 * scale) {
                return Err(Error::Singular(format!(
                    "matrix is not positive definite (pivot {j} = {d:e}); use a positive ridge penalty"
                )));
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in j + 1..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(Self { l })
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: &Matrix) -> Matrix {
        let n = self.l.rows();
        assert_eq!(b.rows(), n, "right-hand side row mismatch");
        let mut x = b.clone();
        for c in 0..b.cols() {
            // forward: L y = b
            for i in 0..n {
                let mut s = x.get(i, c);
                for k in 0..i {
                    s -= self.l.get(i, k) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
            // backward: Lᵀ x = y
            for i in (0..n).rev() {
                let mut s = x.get(i, c);
                for k in i + 1..n {
                    s -= self.l.get(k, i) * x.get(k, c);
                }
                x.set(i, c, s / self.l.get(i, i));
            }
        }
        x
    }
}

/// `XᵀX + λI`.
pub fn regularized_gram(x: &Matrix, lambda: f64) -> Matrix {
    let mut g = x.t_matmul(x);
    for i in 0..g.rows() {
        let v = g.get(i, i);
        g.set(i, i, v + lambda);
    }
    g
}

/// Solves `W = (XᵀX + λI)⁻¹ XᵀY`.
pub fn ridge_fit(x: &Matrix, y: &Matrix, lambda: f64) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::InvalidInput(
            "ridge_fit needs at least one row".into(),
        ));
    }
    if x.rows() != y.rows() {
        return Err(Error::Shape(format!(
            "X has {} rows but Y has {}",
            x.rows(),
            y.rows()
        )));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!(
            "ridge penalty must be >= 0, got {lambda}"
        )));
    }
    let chol = Cholesky::factor(&regularized_gram(x, lambda)).map_err(|e| match e {
        Error::Singular(m) if lambda == 0.0 => {
            Error::Singular(format!("XᵀX is singular at lambda = 0: {m}"))
        }
        other => other,
    })?;
    Ok(chol.solve(&x.t_matmul(y)))
}

/// `‖Xᵀ(XW − Y) + λW‖∞`, the stationarity residual of the ridge objective.
pub fn ridge_residual(x: &Matrix, y: &Matrix, w: &Matrix, lambda: f64) -> f64 {
    let mut r = x.matmul(w);
    let mut neg_y = y.clone();
    neg_y.scale(-1.0);
    r.add_assign(&neg_y);
    let mut g = x.t_matmul(&r);
    let mut lw = w.clone();
    lw.scale(lambda);
    g.add_assign(&lw);
    g.max_abs()
}
