use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use super::{Complex, HermitianMatrix};
use crate::math;

/// Row-major dense real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("matrix is numerically singular (pivot {pivot:e} at column {column})")]
pub struct LuError {
    pub column: usize,
    pub pivot: f64,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| {
                (0..i).all(|j| (self[(i, j)] - self[(j, i)]).abs() <= tol)
            })
    }

    /// Solves `self * x = b` by LU with partial pivoting. `self` is consumed
    /// as workspace.
    pub fn solve_in_place(mut self, b: &mut [f64]) -> Result<(), LuError> {
        let n = self.rows;
        assert_eq!(n, self.cols);
        assert_eq!(b.len(), n);
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
        for k in 0..n {
            let mut piv = k;
            let mut best = self.data[k * n + k].abs();
            for i in k + 1..n {
                let v = self.data[i * n + k].abs();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if !(best > 1e-14 * scale) {
                return Err(LuError {
                    column: k,
                    pivot: best,
                });
            }
            if piv != k {
                for j in 0..n {
                    self.data.swap(k * n + j, piv * n + j);
                }
                b.swap(k, piv);
            }
            let pivot = self.data[k * n + k];
            for i in k + 1..n {
                let f = self.data[i * n + k] / pivot;
                if f == 0.0 {
                    continue;
                }
                self.data[i * n + k] = 0.0;
                for j in k + 1..n {
                    self.data[i * n + j] -= f * self.data[k * n + j];
                }
                b[i] -= f * b[k];
            }
        }
        for k in (0..n).rev() {
            let mut acc = b[k];
            for j in k + 1..n {
                acc -= self.data[k * n + j] * b[j];
            }
            b[k] = acc / self.data[k * n + k];
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for RealMatrix {
    type Output = f64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for RealMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Row-major dense square complex matrix used as solver workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    n: usize,
    data: Vec<Complex>,
}

const CZERO: Complex = Complex::new(0.0, 0.0);

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![CZERO; n * n],
        }
    }

    pub fn from_hermitian(h: &HermitianMatrix) -> Self {
        Self {
            n: h.dim(),
            data: h.to_dense(),
        }
    }

    /// Hermitian part `(A + A^H) / 2` as packed storage.
    pub fn to_hermitian(&self) -> HermitianMatrix {
        let n = self.n;
        HermitianMatrix::from_upper_fn(n, |p, q| {
            if p == q {
                self.data[p * n + p]
            } else {
                (self.data[p * n + q] + self.data[q * n + p].conj()) * 0.5
            }
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut Complex {
        &mut self.data[i * self.n + j]
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == CZERO {
                    continue;
                }
                let row = &other.data[k * n..(k + 1) * n];
                let dst = &mut out.data[i * n..(i + 1) * n];
                for (d, b) in dst.iter_mut().zip(row) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[Complex]) -> Vec<Complex> {
        let n = self.n;
        (0..n)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// `X A X` for Hermitian `X = self` and `A`.
    pub fn sandwich(&self, a: &CMat) -> CMat {
        self.matmul(a).matmul(self)
    }

    /// Lower Cholesky factor `L` with `self = L L^H`, or `None` if the matrix
    /// is not numerically positive definite.
    pub fn cholesky(&self) -> Option<CMat> {
        let n = self.n;
        let mut l = CMat::zeros(n);
        for j in 0..n {
            let mut d = self.data[j * n + j].re;
            for k in 0..j {
                d -= l.data[j * n + k].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            let djj = math::sqrt(d);
            l.data[j * n + j] = Complex::new(djj, 0.0);
            for i in j + 1..n {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= l.data[i * n + k] * l.data[j * n + k].conj();
                }
                l.data[i * n + j] = s / djj;
            }
        }
        Some(l)
    }

    /// `ln det(self)` from its Cholesky factor.
    pub fn log_det_from_cholesky(l: &CMat) -> f64 {
        (0..l.n).map(|i| 2.0 * math::ln(l.data[i * l.n + i].re)).sum()
    }

    /// Inverse of `L L^H` given the lower Cholesky factor.
    pub fn inverse_from_cholesky(l: &CMat) -> CMat {
        let n = l.n;
        // L^{-1} by forward substitution, column by column.
        let mut linv = CMat::zeros(n);
        for j in 0..n {
            linv.data[j * n + j] = Complex::new(1.0 / l.data[j * n + j].re, 0.0);
            for i in j + 1..n {
                let mut s = CZERO;
                for k in j..i {
                    s -= l.data[i * n + k] * linv.data[k * n + j];
                }
                linv.data[i * n + j] = s / l.data[i * n + i].re;
            }
        }
        // A^{-1} = L^{-H} L^{-1}
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = CZERO;
                for k in i..n {
                    s += linv.data[k * n + i].conj() * linv.data[k * n + j];
                }
                out.data[i * n + j] = s;
                out.data[j * n + i] = s.conj();
            }
        }
        out
    }

    /// `tr(self * other)` (real part) for Hermitian operands.
    pub fn trace_product_re(&self, other: &CMat) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            for k in 0..n {
                acc += (self.data[i * n + k] * other.data[k * n + i]).re;
            }
        }
        acc
    }

    /// `v^H self w`
    pub fn bilinear(&self, v: &[Complex], w: &[Complex]) -> Complex {
        let aw = self.mul_vec(w);
        v.iter().zip(&aw).map(|(a, b)| a.conj() * b).sum()
    }

    pub fn add_scaled_outer(&mut self, s: f64, v: &[Complex]) {
        let n = self.n;
        for i in 0..n {
            let vi = v[i] * s;
            for j in 0..n {
                self.data[i * n + j] += vi * v[j].conj();
            }
        }
    }

    pub fn add_scaled(&mut self, s: f64, other: &CMat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    /// Replaces `self` with `(self + self^H) / 2`.
    pub fn hermitize(&mut self) {
        let n = self.n;
        for i in 0..n {
            self.data[i * n + i].im = 0.0;
            for j in 0..i {
                let m = (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5;
                self.data[i * n + j] = m;
                self.data[j * n + i] = m.conj();
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.data.iter_mut() {
            *a *= s;
        }
    }

    pub fn add_scaled_identity(&mut self, s: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += s;
        }
    }

    pub fn add_scaled_hermitian(&mut self, s: f64, h: &HermitianMatrix) {
        let n = self.n;
        for p in 0..n {
            self.data[p * n + p] += h.diagonal()[p] * s;
            for q in p + 1..n {
                let z = h.get(p, q) * s;
                self.data[p * n + q] += z;
                self.data[q * n + p] += z.conj();
            }
        }
    }

    /// `Re(v^H self v)`
    pub fn quad_re(&self, v: &[Complex]) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for i in 0..n {
            let row = &self.data[i * n..(i + 1) * n];
            let av: Complex = row.iter().zip(v).map(|(a, b)| a * b).sum();
            acc += (v[i].conj() * av).re;
        }
        acc
    }

    /// `Re tr(h * self)` for a packed Hermitian `h`.
    pub fn inner_hermitian(&self, h: &HermitianMatrix) -> f64 {
        let n = self.n;
        let mut acc = 0.0;
        for p in 0..n {
            acc += h.diagonal()[p] * self.data[p * n + p].re;
            for q in p + 1..n {
                // h_pq a_qp + h_qp a_pq = 2 Re(h_pq a_qp) for Hermitian a
                let hz = h.get(p, q);
                acc += (hz * self.data[q * n + p]).re + (hz.conj() * self.data[p * n + q]).re;
            }
        }
        acc
    }

    pub fn as_slice(&self) -> &[Complex] {
        &self.data
    }

    pub fn trace_re(&self) -> f64 {
        (0..self.n).map(|i| self.data[i * self.n + i].re).sum()
    }

    pub fn frobenius_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}
