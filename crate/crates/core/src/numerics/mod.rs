//! Complex Hermitian linear algebra.
//!
//! Matrices here are small (at most a few dozen rows), so everything is dense
//! and row-major. [`HermitianMatrix`] stores only its upper triangle, which
//! makes conjugate symmetry a property of the representation rather than
//! something that has to be checked.

mod dense;
mod eigen;

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign, Deref, Index, Mul, Sub};

pub use num_complex::Complex64 as Complex;

pub use dense::{CMat, LuError, RealMatrix};
pub use eigen::{hermitian_eigen, symmetric_eigenvalues, HermitianEigen};

use crate::math;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("quadratic form has a non-negligible imaginary part ({im:e} vs real {re:e})")]
    NotReal { re: f64, im: f64 },
    #[error("eigenvalue iteration did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// A dense complex column vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ComplexVector(Vec<Complex>);

impl ComplexVector {
    pub fn new(entries: Vec<Complex>) -> Self {
        Self(entries)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![Complex::new(0.0, 0.0); len])
    }

    pub fn from_fn(len: usize, f: impl FnMut(usize) -> Complex) -> Self {
        Self((0..len).map(f).collect())
    }

    pub fn as_slice(&self) -> &[Complex] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<Complex> {
        self.0
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.norm_sqr())
    }

    /// `self^H other`
    pub fn dot(&self, other: &ComplexVector) -> Complex {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn scaled(&self, s: f64) -> ComplexVector {
        Self(self.0.iter().map(|z| z * s).collect())
    }

    pub fn scaled_complex(&self, s: Complex) -> ComplexVector {
        Self(self.0.iter().map(|z| z * s).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

impl Deref for ComplexVector {
    type Target = [Complex];
    fn deref(&self) -> &[Complex] {
        &self.0
    }
}

impl From<Vec<Complex>> for ComplexVector {
    fn from(v: Vec<Complex>) -> Self {
        Self(v)
    }
}

/// Complex Hermitian matrix with packed upper-triangle storage.
///
/// The diagonal is stored as real numbers and each strictly-upper entry once;
/// `get(q, p)` returns the conjugate of `get(p, q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    dim: usize,
    diag: Vec<f64>,
    upper: Vec<Complex>,
}

#[inline]
fn packed_index(dim: usize, p: usize, q: usize) -> usize {
    debug_assert!(p < q && q < dim);
    p * (2 * dim - p - 1) / 2 + (q - p - 1)
}

impl HermitianMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            diag: vec![0.0; dim],
            upper: vec![Complex::new(0.0, 0.0); dim * dim.saturating_sub(1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        m.diag.iter_mut().for_each(|d| *d = s);
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        m.diag.copy_from_slice(diag);
        m
    }

    /// Builds a matrix from its upper triangle; `f(p, p)` contributes only its
    /// real part.
    pub fn from_upper_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex) -> Self {
        let mut m = Self::zeros(dim);
        for p in 0..dim {
            m.diag[p] = f(p, p).re;
            for q in p + 1..dim {
                m.upper[packed_index(dim, p, q)] = f(p, q);
            }
        }
        m
    }

    /// Takes the upper triangle of a row-major dense matrix.
    pub fn from_dense_upper(dim: usize, dense: &[Complex]) -> Self {
        assert_eq!(dense.len(), dim * dim);
        Self::from_upper_fn(dim, |p, q| dense[p * dim + q])
    }

    /// `v v^H`
    pub fn outer(v: &[Complex]) -> Self {
        Self::from_upper_fn(v.len(), |p, q| v[p] * v[q].conj())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> Complex {
        match p.cmp(&q) {
            core::cmp::Ordering::Equal => Complex::new(self.diag[p], 0.0),
            core::cmp::Ordering::Less => self.upper[packed_index(self.dim, p, q)],
            core::cmp::Ordering::Greater => self.upper[packed_index(self.dim, q, p)].conj(),
        }
    }

    /// Sets entry `(p, q)` and implicitly its mirror. On the diagonal only the
    /// real part is kept.
    pub fn set(&mut self, p: usize, q: usize, value: Complex) {
        match p.cmp(&q) {
            core::cmp::Ordering::Equal => self.diag[p] = value.re,
            core::cmp::Ordering::Less => self.upper[packed_index(self.dim, p, q)] = value,
            core::cmp::Ordering::Greater => {
                self.upper[packed_index(self.dim, q, p)] = value.conj()
            }
        }
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    pub fn trace(&self) -> f64 {
        self.diag.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let d: f64 = self.diag.iter().map(|x| x * x).sum();
        let u: f64 = self.upper.iter().map(|z| z.norm_sqr()).sum();
        math::sqrt(d + 2.0 * u)
    }

    pub fn max_abs(&self) -> f64 {
        let d = self.diag.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        self.upper.iter().fold(d, |m, z| m.max(z.norm()))
    }

    pub fn is_finite(&self) -> bool {
        self.diag.iter().all(|x| x.is_finite())
            && self.upper.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            diag: self.diag.iter().map(|x| x * s).collect(),
            upper: self.upper.iter().map(|z| z * s).collect(),
        }
    }

    /// `self += s * v v^H`
    pub fn add_outer(&mut self, s: f64, v: &[Complex]) {
        assert_eq!(v.len(), self.dim);
        let n = self.dim;
        for p in 0..n {
            self.diag[p] += s * v[p].norm_sqr();
            let vp = v[p] * s;
            for q in p + 1..n {
                self.upper[packed_index(n, p, q)] += vp * v[q].conj();
            }
        }
    }

    /// Row-major dense copy.
    pub fn to_dense(&self) -> Vec<Complex> {
        let n = self.dim;
        let mut out = vec![Complex::new(0.0, 0.0); n * n];
        for p in 0..n {
            out[p * n + p] = Complex::new(self.diag[p], 0.0);
            for q in p + 1..n {
                let z = self.upper[packed_index(n, p, q)];
                out[p * n + q] = z;
                out[q * n + p] = z.conj();
            }
        }
        out
    }

    /// `self * v`
    pub fn apply(&self, v: &[Complex]) -> Result<ComplexVector, NumericsError> {
        self.check_dim(v.len())?;
        let n = self.dim;
        let mut out = vec![Complex::new(0.0, 0.0); n];
        for p in 0..n {
            out[p] += v[p] * self.diag[p];
            for q in p + 1..n {
                let z = self.upper[packed_index(n, p, q)];
                out[p] += z * v[q];
                out[q] += z.conj() * v[p];
            }
        }
        Ok(ComplexVector(out))
    }

    /// `v^H A v`, which is real for Hermitian `A`.
    pub fn quadratic_form(&self, v: &[Complex]) -> Result<f64, NumericsError> {
        self.check_dim(v.len())?;
        Ok(self.quadratic_form_unchecked(v))
    }

    pub(crate) fn quadratic_form_unchecked(&self, v: &[Complex]) -> f64 {
        // The packed form sums each conjugate pair once, so the result is
        // real by construction.
        let n = self.dim;
        let mut acc = 0.0;
        for p in 0..n {
            acc += self.diag[p] * v[p].norm_sqr();
            let cp = v[p].conj();
            let mut row = Complex::new(0.0, 0.0);
            for q in p + 1..n {
                row += self.upper[packed_index(n, p, q)] * v[q];
            }
            acc += 2.0 * (cp * row).re;
        }
        acc
    }

    /// `v^H A v` computed from the full double sum, keeping the imaginary part
    /// as a consistency check.
    pub fn quadratic_form_checked(&self, v: &[Complex]) -> Result<f64, NumericsError> {
        self.check_dim(v.len())?;
        let n = self.dim;
        let mut acc = Complex::new(0.0, 0.0);
        for p in 0..n {
            let cp = v[p].conj();
            for q in 0..n {
                acc += cp * self.get(p, q) * v[q];
            }
        }
        if acc.im.abs() > 1e-9 * acc.re.abs() + 1e-30 {
            return Err(NumericsError::NotReal {
                re: acc.re,
                im: acc.im,
            });
        }
        Ok(acc.re)
    }

    /// `tr(self * other)`, real for two Hermitian matrices.
    pub fn inner(&self, other: &HermitianMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let d: f64 = self.diag.iter().zip(&other.diag).map(|(a, b)| a * b).sum();
        let u: f64 = self
            .upper
            .iter()
            .zip(&other.upper)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum();
        d + 2.0 * u
    }

    pub fn min_eigenvalue(&self) -> Result<f64, NumericsError> {
        min_eigenvalue(self)
    }

    fn check_dim(&self, got: usize) -> Result<(), NumericsError> {
        if got != self.dim {
            return Err(NumericsError::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = f64;
    /// Diagonal access only; off-diagonal entries are complex, use `get`.
    fn index(&self, (p, q): (usize, usize)) -> &f64 {
        assert_eq!(p, q, "HermitianMatrix indexing is diagonal-only");
        &self.diag[p]
    }
}

impl Add for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn add(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn sub(self, rhs: &HermitianMatrix) -> HermitianMatrix {
        assert_eq!(self.dim, rhs.dim);
        HermitianMatrix {
            dim: self.dim,
            diag: self.diag.iter().zip(&rhs.diag).map(|(a, b)| a - b).collect(),
            upper: self.upper.iter().zip(&rhs.upper).map(|(a, b)| a - b).collect(),
        }
    }
}

impl AddAssign<&HermitianMatrix> for HermitianMatrix {
    fn add_assign(&mut self, rhs: &HermitianMatrix) {
        assert_eq!(self.dim, rhs.dim);
        self.diag.iter_mut().zip(&rhs.diag).for_each(|(a, b)| *a += b);
        self.upper.iter_mut().zip(&rhs.upper).for_each(|(a, b)| *a += b);
    }
}

impl Mul<f64> for &HermitianMatrix {
    type Output = HermitianMatrix;
    fn mul(self, s: f64) -> HermitianMatrix {
        self.scaled(s)
    }
}

/// `v^H A v`.
pub fn quadratic_form(a: &HermitianMatrix, v: &ComplexVector) -> Result<f64, NumericsError> {
    a.quadratic_form(v)
}

pub fn min_eigenvalue(a: &HermitianMatrix) -> Result<f64, NumericsError> {
    let eig = hermitian_eigen(a)?;
    Ok(eig.values.first().copied().unwrap_or(0.0))
}

/// Tolerance below which a negative eigenvalue still counts as PSD.
pub fn psd_tolerance(a: &HermitianMatrix) -> f64 {
    1e-8 * a.trace().abs().max(1.0)
}

pub fn is_psd(a: &HermitianMatrix) -> Result<bool, NumericsError> {
    Ok(min_eigenvalue(a)? >= -psd_tolerance(a))
}

/// Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped to 0).
pub fn project_psd(a: &HermitianMatrix) -> Result<HermitianMatrix, NumericsError> {
    let eig = hermitian_eigen(a)?;
    let mut out = HermitianMatrix::zeros(a.dim());
    for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
        if *lambda > 0.0 {
            out.add_outer(*lambda, v);
        }
    }
    Ok(out)
}

/// `[[Re A, -Im A], [Im A, Re A]]`, the real symmetric matrix acting on
/// `[Re v; Im v]` the way `A` acts on `v`.
pub fn real_embedding(a: &HermitianMatrix) -> RealMatrix {
    let n = a.dim();
    let mut out = RealMatrix::zeros(2 * n, 2 * n);
    for p in 0..n {
        for q in 0..n {
            let z = a.get(p, q);
            out[(p, q)] = z.re;
            out[(p + n, q + n)] = z.re;
            out[(p, q + n)] = -z.im;
            out[(p + n, q)] = z.im;
        }
    }
    out
}
