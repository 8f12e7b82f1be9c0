//! Dense symmetric positive-definite factorization used by the shadowing
//! sampler and the kriging baseline.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Array2<f64>,
}

impl Cholesky {
    /// Factorizes `a`. Fails when a pivot drops below `rel_tol * max(diag(a))`.
    pub fn new(a: &Array2<f64>, rel_tol: f64) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::Numerical(format!(
                "cholesky needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        let max_diag = (0..n).map(|i| a[[i, i]].abs()).fold(0.0_f64, f64::max);
        let floor = rel_tol * max_diag.max(f64::MIN_POSITIVE);
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            {
                let row_j = l.row(j);
                for k in 0..j {
                    d -= row_j[k] * row_j[k];
                }
            }
            if !(d > floor) {
                return Err(Error::Numerical(format!(
                    "matrix is not positive-definite (pivot {j} = {d:e})"
                )));
            }
            let djj = d.sqrt();
            l[[j, j]] = djj;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / djj;
            }
        }
        Ok(Self { l })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn factor(&self) -> &Array2<f64> {
        &self.l
    }

    /// `L z` for a vector `z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.l.row(i);
            let mut s = 0.0;
            for k in 0..=i {
                s += row[k] * z[k];
            }
            *o = s;
        }
        out
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Array1<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[[i, k]] * y[k];
            }
            y[i] = s / self.l[[i, i]];
        }
        let mut x = Array1::<f64>::zeros(n);
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[[k, i]] * x[k];
            }
            x[i] = s / self.l[[i, i]];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reconstructs_matrix() {
        let a = ndarray::arr2(&[[4.0, 2.0, 0.4], [2.0, 5.0, 1.0], [0.4, 1.0, 3.0]]);
        let c = Cholesky::new(&a, 1e-12).unwrap();
        let l = c.factor();
        let back = l.dot(&l.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        let x = c.solve(&[1.0, 2.0, 3.0]);
        let ax = a.dot(&x);
        for (v, b) in ax.iter().zip([1.0, 2.0, 3.0]) {
            assert!((v - b).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = ndarray::arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(Cholesky::new(&a, 1e-12).is_err());
    }
}
