//! Minimal dense symmetric linear algebra: cyclic Jacobi eigendecomposition
//! and the symmetric PSD matrix square root built on it. Matrices here are
//! small (classifier embedding widths), so Jacobi's robustness beats speed.

use crate::error::{Error, Result};

/// Dense symmetric matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        SymMatrix {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(Error::shape("SymMatrix::from_rows", dim, row.len()));
            }
            data.extend_from_slice(row);
        }
        let m = SymMatrix { dim, data };
        m.check_symmetry()?;
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = SymMatrix::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    fn check_symmetry(&self) -> Result<()> {
        for i in 0..self.dim {
            for j in (i + 1)..self.dim {
                let (a, b) = (self.at(i, j), self.at(j, i));
                if (a - b).abs() > 1e-9 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::Numeric(format!(
                        "matrix not symmetric at ({i},{j}): {a} vs {b}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// C = A * B (general product of symmetric operands, result not
    /// necessarily symmetric, returned as raw row-major data).
    pub fn mul_raw(&self, other: &SymMatrix) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += a * other.at(k, j);
                }
            }
        }
        out
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns `(eigenvalues, eigenvectors)` with eigenvectors as columns of the
/// returned row-major matrix, so `A = V diag(l) V^T`.
pub fn sym_eig(a: &SymMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    a.check_symmetry()?;
    let n = a.dim;
    let mut m = a.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let off = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += m[i * n + j] * m[i * n + j];
                }
            }
        }
        s.sqrt()
    };
    let scale: f64 = m
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        if off(&m) <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/cols p and q of m
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| m[i * n + i]).collect();
    Ok((eigenvalues, v))
}

/// Symmetric PSD square root via eigendecomposition; eigenvalues below zero
/// (numerical noise) are clamped to zero.
pub fn sqrtm_psd(a: &SymMatrix) -> Result<SymMatrix> {
    let n = a.dim;
    let (vals, vecs) = sym_eig(a)?;
    let roots: Vec<f64> = vals.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let mut out = SymMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += vecs[i * n + k] * roots[k] * vecs[j * n + k];
            }
            out.set(i, j, acc);
            out.set(j, i, acc);
        }
    }
    Ok(out)
}

/// Eigenvalues of the (symmetric) product `S B S` where `S = sqrtm(A)`; the
/// route by which `tr((A B)^{1/2})` is computed for PSD `A`, `B`.
pub fn eigvals_of_sandwich(a: &SymMatrix, b: &SymMatrix) -> Result<Vec<f64>> {
    if a.dim != b.dim {
        return Err(Error::shape("eigvals_of_sandwich", a.dim, b.dim));
    }
    let s = sqrtm_psd(a)?;
    let sb = s.mul_raw(b);
    let n = a.dim;
    // (S B) S, then symmetrize against round-off before the eigensolve
    let mut sbs = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let x = sb[i * n + k];
            if x == 0.0 {
                continue;
            }
            for j in 0..n {
                sbs[i * n + j] += x * s.at(k, j);
            }
        }
    }
    let mut sym = SymMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            sym.set(i, j, 0.5 * (sbs[i * n + j] + sbs[j * n + i]));
        }
    }
    let (vals, _) = sym_eig(&sym)?;
    Ok(vals)
}
