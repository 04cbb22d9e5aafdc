//! Small dense linear algebra, elementwise nonlinearities and a seeded
//! generator. Everything here is generic over [`Scalar`] so the predictor
//! can run in `f32` or `f64`; the acceptance numbers are all produced in `f64`.
//!
//! Shape mismatches in arithmetic are programming errors and panic.
//! Constructors that take user-supplied sizes return [`Result`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Floating point element type used throughout the crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal or measurement into this scalar type.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Vector<T> {
    data: Vec<T>,
}

impl<T: Scalar> Vector<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![T::zero(); dim],
        }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn from_f64(data: &[f64]) -> Self {
        Self {
            data: data.iter().map(|&x| T::lit(x)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.to_f64_lossy()).collect()
    }

    pub fn cast<U: Scalar>(&self) -> Vector<U> {
        Vector {
            data: self.data.iter().map(|x| U::lit(x.to_f64_lossy())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(
            self.dim(),
            other.dim(),
            "{op}: dimension mismatch ({} vs {})",
            self.dim(),
            other.dim()
        );
        Self {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Self {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: T, other: &Self) {
        assert_eq!(self.dim(), other.dim(), "axpy: dimension mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn dot(&self, other: &Self) -> T {
        assert_eq!(self.dim(), other.dim(), "dot: dimension mismatch");
        self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> T {
        self.dot(self)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid_scalar)
    }

    pub fn tanh(&self) -> Self {
        self.map(|x| x.tanh())
    }
}

impl<T> std::ops::Index<usize> for Vector<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> std::ops::IndexMut<usize> for Vector<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

impl<T: Scalar> From<Vec<T>> for Vector<T> {
    fn from(data: Vec<T>) -> Self {
        Self { data }
    }
}

/// Logistic function, evaluated without overflow for large |x|.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(v: &Vector<T>) -> Vector<T> {
    v.sigmoid()
}

pub fn tanh<T: Scalar>(v: &Vector<T>) -> Vector<T> {
    v.tanh()
}

pub fn hadamard<T: Scalar>(a: &Vector<T>, b: &Vector<T>) -> Vector<T> {
    a.hadamard(b)
}

pub fn add<T: Scalar>(a: &Vector<T>, b: &Vector<T>) -> Vector<T> {
    a.add(b)
}

pub fn matvec<T: Scalar>(m: &Matrix<T>, v: &Vector<T>) -> Vector<T> {
    m.matvec(v)
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Usage(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        Ok(Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut m = Self::zeros(n, n)?;
        for i in 0..n {
            m.set(i, i, T::one());
        }
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err(Error::Usage("matrix must have at least one row and column".into()));
        }
        if let Some(bad) = rows.iter().position(|row| row.len() != c) {
            return Err(Error::Usage(format!(
                "row {bad} has {} entries, expected {c}",
                rows[bad].len()
            )));
        }
        Ok(Self {
            rows: r,
            cols: c,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::Usage(format!(
                "row-major buffer of length {} does not describe a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: T) {
        self.data[r * self.cols + c] = value;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn matvec(&self, v: &Vector<T>) -> Vector<T> {
        assert_eq!(
            self.cols,
            v.dim(),
            "matvec: matrix has {} columns but vector has dim {}",
            self.cols,
            v.dim()
        );
        let x = v.as_slice();
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(&a, &b)| a * b).sum())
            .collect::<Vec<T>>()
            .into()
    }

    /// `selfᵀ · v`
    pub fn matvec_transposed(&self, v: &Vector<T>) -> Vector<T> {
        assert_eq!(
            self.rows,
            v.dim(),
            "matvec_transposed: matrix has {} rows but vector has dim {}",
            self.rows,
            v.dim()
        );
        let mut out = vec![T::zero(); self.cols];
        for (r, &vr) in v.iter().enumerate() {
            if vr == T::zero() {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(r)) {
                *o += a * vr;
            }
        }
        out.into()
    }

    /// `self += k · a bᵀ`
    pub fn add_outer(&mut self, k: T, a: &Vector<T>, b: &Vector<T>) {
        assert_eq!(self.rows, a.dim(), "add_outer: row dimension mismatch");
        assert_eq!(self.cols, b.dim(), "add_outer: column dimension mismatch");
        let cols = self.cols;
        for (r, &ar) in a.iter().enumerate() {
            let s = k * ar;
            if s == T::zero() {
                continue;
            }
            for (d, &bc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(b.iter()) {
                *d += s * bc;
            }
        }
    }
}

/// Deterministic generator on top of ChaCha8 (a counter-mode stream cipher),
/// so that the same seed yields the same draws on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn uniform_int(&mut self, lo: usize, hi: usize) -> usize {
        assert!(lo <= hi, "uniform_int: empty range {lo}..={hi}");
        let span = (hi - lo) as u64 + 1;
        // rejection sampling keeps the draw unbiased
        let zone = u64::MAX - (u64::MAX % span);
        loop {
            let x = self.next_u64();
            if x < zone {
                return lo + (x % span) as usize;
            }
        }
    }

    /// Standard normal draw (Box-Muller, both outputs used).
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_vector<T: Scalar>(&mut self, dim: usize, stddev: f64) -> Vector<T> {
        (0..dim)
            .map(|_| T::lit(self.normal() * stddev))
            .collect::<Vec<T>>()
            .into()
    }
}

/// Matrix with i.i.d. `N(0, stddev²)` entries drawn in row-major order.
pub fn gaussian_init<T: Scalar>(
    rng: &mut Rng,
    rows: usize,
    cols: usize,
    stddev: f64,
) -> Result<Matrix<T>> {
    if !(stddev > 0.0 && stddev.is_finite()) {
        return Err(Error::Usage(format!(
            "initialisation stddev must be positive and finite, got {stddev}"
        )));
    }
    let mut m = Matrix::zeros(rows, cols)?;
    for x in m.as_mut_slice() {
        *x = T::lit(rng.normal() * stddev);
    }
    Ok(m)
}
