//! Dense symmetric positive-definite solves with jitter escalation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const JITTER_START: f64 = 1e-12;
const JITTER_STOP: f64 = 1e-6;

/// Cholesky factor of a symmetric positive-definite matrix.
///
/// When the plain factorization fails, a diagonal jitter of
/// `1e-12 * trace / n` is added and escalated by factors of ten up to
/// `1e-6 * trace / n` before giving up.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    jitter: f64,
}

impl SpdFactor {
    pub fn new(matrix: &DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || n != matrix.ncols() {
            return Err(Error::InvalidParameter("factorization needs a square, nonempty matrix".into()));
        }
        if let Some(chol) = matrix.clone().cholesky() {
            return Ok(Self { chol, jitter: 0.0 });
        }
        let scale = (matrix.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
        let mut rel = JITTER_START;
        while rel <= JITTER_STOP * (1.0 + 1e-9) {
            let jitter = rel * scale;
            let mut shifted = matrix.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            if let Some(chol) = shifted.cholesky() {
                return Ok(Self { chol, jitter });
            }
            rel *= 10.0;
        }
        Err(Error::SolveFailed(format!(
            "cholesky failed for a {n}x{n} system after jitter up to {JITTER_STOP:e}*trace/n"
        )))
    }

    /// Diagonal jitter that had to be added, zero when none was needed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }

    /// Explicit inverse, formed as `L^{-T} L^{-1}`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let l = self.chol.l();
        let n = l.nrows();
        // Column-oriented forward substitution on the identity; each update is
        // a contiguous axpy in column-major storage.
        let mut linv = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut col = linv.column_mut(j);
            col[j] = 1.0;
            for k in j..n {
                let xk = col[k] / l[(k, k)];
                col[k] = xk;
                if xk != 0.0 {
                    let lcol = l.column(k);
                    for i in (k + 1)..n {
                        col[i] -= xk * lcol[i];
                    }
                }
            }
        }
        linv.tr_mul(&linv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_matches_solve() {
        let n = 6;
        let a = DMatrix::from_fn(n, n, |i, j| {
            let d = i as f64 - j as f64;
            (-d * d / 4.0).exp() + if i == j { 0.5 } else { 0.0 }
        });
        let f = SpdFactor::new(&a).unwrap();
        let inv = f.inverse();
        let id = &a * &inv;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((id[(i, j)] - want).abs() < 1e-12);
            }
        }
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn singular_psd_gets_jitter() {
        let a = DMatrix::from_element(3, 3, 1.0);
        let f = SpdFactor::new(&a).unwrap();
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn indefinite_fails() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(SpdFactor::new(&a), Err(Error::SolveFailed(_))));
    }
}
