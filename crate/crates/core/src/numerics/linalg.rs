//! Dense symmetric positive-definite factorization.

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix,
/// stored row-major as a full `n × n` array.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    /// Factor the row-major `n × n` matrix `a`. Only the lower triangle is read.
    ///
    /// Fails with [`Error::Factorization`] naming the first pivot that is not
    /// strictly positive relative to the diagonal scale.
    pub fn factor(a: &[f64], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n, "matrix must be n x n");
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut diag = a[j * n + j];
            for k in 0..j {
                diag -= l[j * n + k] * l[j * n + k];
            }
            let scale = a[j * n + j].abs().max(f64::MIN_POSITIVE);
            if !(diag > 64.0 * f64::EPSILON * scale) {
                return Err(Error::Factorization { index: j });
            }
            let ljj = diag.sqrt();
            l[j * n + j] = ljj;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / ljj;
            }
        }
        Ok(Self { n, lower: l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    /// log det A = 2 Σ log L_ii.
    pub fn log_det(&self) -> f64 {
        (0..self.n).map(|i| self.lower[i * self.n + i].ln()).sum::<f64>() * 2.0
    }

    /// y = L z.
    pub fn mul_lower(&self, z: &[f64], y: &mut [f64]) {
        let n = self.n;
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i + 1];
            y[i] = row.iter().zip(z).map(|(l, z)| l * z).sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factors_known_matrix() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let c = Cholesky::factor(&a, 2).unwrap();
        assert!((c.lower()[0] - 2.0).abs() < 1e-15);
        assert!((c.lower()[2] - 1.0).abs() < 1e-15);
        assert!((c.lower()[3] - 2f64.sqrt()).abs() < 1e-15);
        assert!((c.log_det() - 8f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn rejects_singular_with_index() {
        let a = [1.0, 1.0, 1.0, 1.0];
        match Cholesky::factor(&a, 2) {
            Err(Error::Factorization { index }) => assert_eq!(index, 1),
            other => panic!("expected factorization error, got {other:?}"),
        }
    }

    #[test]
    fn reconstructs_product() {
        let a = [2.0, 0.5, 0.1, 0.5, 1.5, 0.3, 0.1, 0.3, 1.0];
        let c = Cholesky::factor(&a, 3).unwrap();
        let l = c.lower();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| l[i * 3 + k] * l[j * 3 + k]).sum();
                assert!((s - a[i * 3 + j]).abs() < 1e-14);
            }
        }
    }
}
