//! Tridiagonal matrices and the Thomas algorithm.

use crate::error::{Error, Result};

/// Row `i` reads `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1]`;
/// `sub[0]` and `sup[n-1]` are ignored.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub sub: Vec<f64>,
    pub diag: Vec<f64>,
    pub sup: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal { sub: vec![0.0; n], diag: vec![0.0; n], sup: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    /// Solves `A x = rhs` without pivoting. Stable for the diagonally
    /// dominant M-matrices this crate assembles.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.len();
        assert_eq!(rhs.len(), n);
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut denom = self.diag[0];
        if denom == 0.0 || !denom.is_finite() {
            return Err(Error::SingularPivot { row: 0 });
        }
        c[0] = if n > 1 { self.sup[0] / denom } else { 0.0 };
        d[0] = rhs[0] / denom;
        for i in 1..n {
            denom = self.diag[i] - self.sub[i] * c[i - 1];
            if denom == 0.0 || !denom.is_finite() {
                return Err(Error::SingularPivot { row: i });
            }
            c[i] = if i + 1 < n { self.sup[i] / denom } else { 0.0 };
            d[i] = (rhs[i] - self.sub[i] * d[i - 1]) / denom;
        }
        let mut x = d;
        for i in (0..n - 1).rev() {
            x[i] -= c[i] * x[i + 1];
        }
        Ok(x)
    }

    /// Thomas solve followed by one step of iterative refinement.
    pub fn solve_refined(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.solve(rhs)?;
        let ax = self.mul(&x);
        let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = self.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(dx) {
            *xi += di;
        }
        Ok(x)
    }
}
