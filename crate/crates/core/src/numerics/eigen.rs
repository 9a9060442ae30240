//! Cyclic Jacobi eigensolvers. Sizes here never exceed a few dozen rows, where
//! Jacobi is both accurate and simple.

use alloc::vec::Vec;

use super::{Complex, ComplexVector, HermitianMatrix, NumericsError, RealMatrix};
use crate::math;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition with eigenvalues in ascending order.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    /// Unit-norm eigenvectors, matching `values`.
    pub vectors: Vec<ComplexVector>,
}

pub fn hermitian_eigen(a: &HermitianMatrix) -> Result<HermitianEigen, NumericsError> {
    let n = a.dim();
    let mut m = a.to_dense();
    let mut v: Vec<Complex> = (0..n * n)
        .map(|k| {
            if k / n == k % n {
                Complex::new(1.0, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        })
        .collect();
    let total: f64 = m.iter().map(|z| z.norm_sqr()).sum();
    let target = (f64::EPSILON * f64::EPSILON) * total;

    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| m[p * n + q].norm_sqr())
            .sum();
        if off <= target || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut m, &mut v, n, p, q);
            }
        }
    }
    if !converged {
        return Err(NumericsError::NoConvergence { sweeps: MAX_SWEEPS });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].re.total_cmp(&m[j * n + j].re));
    let values = order.iter().map(|&i| m[i * n + i].re).collect();
    let vectors = order
        .iter()
        .map(|&j| ComplexVector::from_fn(n, |i| v[i * n + j]))
        .collect();
    Ok(HermitianEigen { values, vectors })
}

/// One complex Jacobi rotation zeroing entry `(p, q)`.
fn rotate(m: &mut [Complex], v: &mut [Complex], n: usize, p: usize, q: usize) {
    let g = m[p * n + q];
    let mag = g.norm();
    if mag == 0.0 {
        return;
    }
    let alpha = m[p * n + p].re;
    let beta = m[q * n + q].re;
    // Phase that makes the (p, q) entry real, then a real rotation.
    let phase = g / mag;
    let tau = (beta - alpha) / (2.0 * mag);
    let t = if tau >= 0.0 {
        1.0 / (tau + math::sqrt(1.0 + tau * tau))
    } else {
        -1.0 / (-tau + math::sqrt(1.0 + tau * tau))
    };
    let c = 1.0 / math::sqrt(1.0 + t * t);
    let s = t * c;
    // U restricted to (p, q): col p = (c, -s e^{-i phi}), col q = (s, c e^{-i phi}).
    let e = phase.conj();
    let upq = -e * s;
    let uqq = e * c;

    // M <- M U
    for k in 0..n {
        let mkp = m[k * n + p];
        let mkq = m[k * n + q];
        m[k * n + p] = mkp * c + mkq * upq;
        m[k * n + q] = mkp * s + mkq * uqq;
    }
    // M <- U^H M
    for k in 0..n {
        let mpk = m[p * n + k];
        let mqk = m[q * n + k];
        m[p * n + k] = mpk * c + mqk * upq.conj();
        m[q * n + k] = mpk * s + mqk * uqq.conj();
    }
    m[p * n + q] = Complex::new(0.0, 0.0);
    m[q * n + p] = Complex::new(0.0, 0.0);
    m[p * n + p].im = 0.0;
    m[q * n + q].im = 0.0;
    // V <- V U
    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = vkp * c + vkq * upq;
        v[k * n + q] = vkp * s + vkq * uqq;
    }
}

/// Eigenvalues (ascending) of a real symmetric matrix.
pub fn symmetric_eigenvalues(a: &RealMatrix) -> Result<Vec<f64>, NumericsError> {
    let n = a.rows();
    assert_eq!(n, a.cols());
    let mut m: Vec<f64> = a.as_slice().to_vec();
    let total: f64 = m.iter().map(|x| x * x).sum();
    let target = (f64::EPSILON * f64::EPSILON) * total;
    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += m[p * n + q] * m[p * n + q];
                }
            }
        }
        if off <= target || off == 0.0 {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + math::sqrt(1.0 + tau * tau))
                } else {
                    -1.0 / (-tau + math::sqrt(1.0 + tau * tau))
                };
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = t * c;
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
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
            }
        }
    }
    if !converged {
        return Err(NumericsError::NoConvergence { sweeps: MAX_SWEEPS });
    }
    let mut values: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}
