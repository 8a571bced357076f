//! Scalars, small dense matrices and the spectral routines built on them.
//!
//! Two scalar kinds are supported: [`Rational`] (arbitrary precision, used by
//! every workflow that must certify inequalities exactly) and `f64`.
//! Approximate singular values come from a one-sided cyclic Jacobi iteration,
//! which rotates the columns of `A` and is therefore Jacobi on `AᵀA` without
//! forming the product.

use std::fmt::Debug;

use num::{BigInt, BigRational, Num, One, Signed, ToPrimitive, Zero};
use rand::Rng;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tolerances::{JACOBI_MAX_SWEEPS, JACOBI_OFFDIAG, ROTATION_ABS, SYMMETRY_REL};

/// Arbitrary-precision rational; always normalised (`gcd = 1`, positive denominator).
pub type Rational = BigRational;

/// `p / q` as a rational.
pub fn rat(p: i64, q: i64) -> Rational {
    Rational::new(BigInt::from(p), BigInt::from(q))
}

/// Exact binary value of a finite float.
pub fn rat_from_f64(v: f64) -> Result<Rational> {
    Rational::from_float(v).ok_or_else(|| Error::InvalidInput(format!("non-finite value {v}")))
}

/// `2^e` for any integer exponent.
pub fn pow2(e: i64) -> Rational {
    let base = BigInt::from(2u32).pow(e.unsigned_abs() as u32);
    if e >= 0 {
        Rational::from_integer(base)
    } else {
        Rational::new(BigInt::one(), base)
    }
}

/// Integer power of a rational (negative exponents invert).
pub fn rpow(x: &Rational, e: i64) -> Rational {
    let mut acc = Rational::one();
    for _ in 0..e.unsigned_abs() {
        acc *= x;
    }
    if e < 0 {
        acc.recip()
    } else {
        acc
    }
}

/// Formats a rational as `"p/q"` (or `"p"` for integers).
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Parses `"p/q"`, `"p"` or a JSON integer into a rational.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let bad = || Error::Serialization(format!("not a rational: {s:?}"));
    match s.split_once('/') {
        Some((p, q)) => {
            let p = BigInt::from_str_radix(p.trim(), 10).map_err(|_| bad())?;
            let q = BigInt::from_str_radix(q.trim(), 10).map_err(|_| bad())?;
            if q.is_zero() {
                return Err(bad());
            }
            Ok(Rational::new(p, q))
        }
        None => Ok(Rational::from_integer(BigInt::from_str_radix(s, 10).map_err(|_| bad())?)),
    }
}

/// Scalar field used by matrices and measures.
pub trait Scalar:
    Clone + Debug + PartialEq + PartialOrd + Num + Signed + Send + Sync + 'static
{
    /// True for exact arithmetic.
    const EXACT: bool;
    /// Mode tag used in serialized measures.
    const MODE: &'static str;

    fn from_i64(v: i64) -> Self;
    fn ratio(p: i64, q: i64) -> Self;
    fn to_float(&self) -> f64;
    /// Converts a float; exact mode keeps its exact binary value.
    fn from_f64(v: f64) -> Result<Self>;
    /// Converts an exact rational (rounding in approx mode).
    fn from_rational(r: &Rational) -> Self;
    /// Exact rational value (floats are finite binary fractions).
    fn to_rational(&self) -> Result<Rational>;
    fn to_json(&self) -> Value;
    fn from_json(v: &Value) -> Result<Self>;
    /// Equality up to the mode's tolerance, relative to `scale`.
    fn close(&self, other: &Self, scale: f64, rel: f64) -> bool;
    /// Whether `d` has rank at most one (exactly, or to tolerance).
    fn rank_at_most_one(d: &SquareMatrix<Self>) -> bool;
    /// Whether the operator norm of `a` exceeds `t`.
    fn norm_exceeds(a: &SquareMatrix<Self>, t: &Self) -> bool;
    /// Eigen-decomposition of a non-diagonal symmetric matrix.
    fn spectral_dense(a: &SquareMatrix<Self>) -> Result<Spectral<Self>>;
    /// `Q · diag(values) · Qᵀ`.
    fn conjugate_dense(values: &[Self], q: &Rotation) -> Result<SquareMatrix<Self>>;
}

impl Scalar for f64 {
    const EXACT: bool = false;
    const MODE: &'static str = "float64";

    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn ratio(p: i64, q: i64) -> Self {
        p as f64 / q as f64
    }
    fn to_float(&self) -> f64 {
        *self
    }
    fn from_f64(v: f64) -> Result<Self> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::InvalidInput(format!("non-finite value {v}")))
        }
    }
    fn from_rational(r: &Rational) -> Self {
        ToPrimitive::to_f64(r).unwrap_or(f64::NAN)
    }
    fn to_rational(&self) -> Result<Rational> {
        rat_from_f64(*self)
    }
    fn to_json(&self) -> Value {
        serde_json::Number::from_f64(*self).map(Value::Number).unwrap_or(Value::Null)
    }
    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::Number(x) => x
                .as_f64()
                .ok_or_else(|| Error::Serialization(format!("bad number {x}"))),
            Value::String(s) => parse_rational(s).map(|r| Scalar::to_float(&r)),
            other => Err(Error::Serialization(format!("expected number, got {other}"))),
        }
    }
    fn close(&self, other: &Self, scale: f64, rel: f64) -> bool {
        (self - other).abs() <= rel * scale.max(1.0)
    }
    fn rank_at_most_one(d: &SquareMatrix<Self>) -> bool {
        let s = sorted_singular_values(d).unwrap_or_default();
        let n = s.len();
        n < 2 || s[n - 2] <= crate::tolerances::RANK_ONE_REL * s[n - 1].max(1.0)
    }
    fn norm_exceeds(a: &SquareMatrix<Self>, t: &Self) -> bool {
        op_norm(a) > *t
    }
    fn spectral_dense(a: &SquareMatrix<Self>) -> Result<Spectral<Self>> {
        if !a.is_symmetric() {
            return Err(Error::InvalidInput("matrix is not symmetric".into()));
        }
        let (values, q) = sym_eigen(a)?;
        Ok(Spectral { values, basis: Basis::Rotation(Rotation::from_matrix(q)?) })
    }
    fn conjugate_dense(values: &[Self], q: &Rotation) -> Result<SquareMatrix<Self>> {
        conjugate_diag(q, values)
    }
}

impl Scalar for Rational {
    const EXACT: bool = true;
    const MODE: &'static str = "rational";

    fn from_i64(v: i64) -> Self {
        Rational::from_integer(BigInt::from(v))
    }
    fn ratio(p: i64, q: i64) -> Self {
        rat(p, q)
    }
    fn to_float(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn from_f64(v: f64) -> Result<Self> {
        rat_from_f64(v)
    }
    fn from_rational(r: &Rational) -> Self {
        r.clone()
    }
    fn to_rational(&self) -> Result<Rational> {
        Ok(self.clone())
    }
    fn to_json(&self) -> Value {
        Value::String(format_rational(self))
    }
    fn from_json(v: &Value) -> Result<Self> {
        match v {
            Value::String(s) => parse_rational(s),
            Value::Number(x) if x.is_i64() => Ok(Self::from_i64(x.as_i64().unwrap_or(0))),
            other => Err(Error::Serialization(format!("expected \"p/q\", got {other}"))),
        }
    }
    fn close(&self, other: &Self, _scale: f64, _rel: f64) -> bool {
        self == other
    }
    fn rank_at_most_one(d: &SquareMatrix<Self>) -> bool {
        all_minors2_vanish(d)
    }
    fn norm_exceeds(a: &SquareMatrix<Self>, t: &Self) -> bool {
        if a.is_diagonal() {
            return a.diag().iter().any(|d| d.abs() > *t);
        }
        // |A| > t  iff  t²I − AᵀA is not positive semidefinite.
        let ata = a.transpose().matmul(a);
        let gram = SquareMatrix::identity(a.n()).scale(&(t * t)).sub(&ata);
        !is_psd_exact(&gram)
    }
    fn spectral_dense(_a: &SquareMatrix<Self>) -> Result<Spectral<Self>> {
        Err(Error::Unsupported("exact spectrum of a non-diagonal matrix".into()))
    }
    fn conjugate_dense(_values: &[Self], _q: &Rotation) -> Result<SquareMatrix<Self>> {
        Err(Error::Unsupported("exact conjugation by a general rotation".into()))
    }
}

/// Orthonormal eigenbasis: a coordinate permutation (diagonal inputs) or a rotation.
#[derive(Clone, Debug, PartialEq)]
pub enum Basis {
    /// `values[i]` sits at diagonal position `perm[i]`.
    Permutation(Vec<usize>),
    Rotation(Rotation),
}

/// Eigenvalues in ascending order with the basis that diagonalizes them.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectral<T> {
    pub values: Vec<T>,
    pub basis: Basis,
}

/// Ascending spectrum of a symmetric matrix. Diagonal inputs are handled
/// exactly in both modes (ties keep index order).
pub fn spectral<T: Scalar>(a: &SquareMatrix<T>) -> Result<Spectral<T>> {
    if a.is_diagonal() {
        let d = a.diag();
        let mut perm: Vec<usize> = (0..d.len()).collect();
        perm.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap_or(std::cmp::Ordering::Equal));
        let values = perm.iter().map(|&i| d[i].clone()).collect();
        return Ok(Spectral { values, basis: Basis::Permutation(perm) });
    }
    T::spectral_dense(a)
}

/// Rebuilds a matrix from values in a basis returned by [`spectral`].
pub fn from_spectral<T: Scalar>(values: &[T], basis: &Basis) -> Result<SquareMatrix<T>> {
    match basis {
        Basis::Permutation(perm) => {
            if perm.len() != values.len() {
                return Err(Error::DimensionMismatch { expected: perm.len(), got: values.len() });
            }
            let mut d = vec![T::zero(); values.len()];
            for (v, &p) in values.iter().zip(perm) {
                d[p] = v.clone();
            }
            Ok(SquareMatrix::from_diag(&d))
        }
        Basis::Rotation(q) => T::conjugate_dense(values, q),
    }
}

/// Dense `n × n` matrix, row-major, `2 ≤ n ≤ 6` for every public constructor
/// that validates dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

pub type Matrix = SquareMatrix<f64>;
pub type ExactMatrix = SquareMatrix<Rational>;

/// Smallest supported dimension.
pub const MIN_DIM: usize = 2;
/// Largest supported dimension.
pub const MAX_DIM: usize = 6;

/// Validates `2 ≤ n ≤ 6`.
pub fn check_dim(n: usize) -> Result<()> {
    if (MIN_DIM..=MAX_DIM).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("dimension {n} outside {MIN_DIM}..={MAX_DIM}")))
    }
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn new(n: usize, data: Vec<T>) -> Result<Self> {
        check_dim(n)?;
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: data.len() });
        }
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        check_dim(n)?;
        let mut data = Vec::with_capacity(n * n);
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: r.len() });
            }
            data.extend(r);
        }
        Ok(Self { n, data })
    }

    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_diag(d: &[T]) -> Self {
        let n = d.len();
        let mut m = Self::zeros(n);
        for (i, v) in d.iter().enumerate() {
            m.data[i * n + i] = v.clone();
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn entries(&self) -> &[T] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<T>> {
        self.data.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn diag(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i).clone()).collect()
    }

    pub fn add(&self, o: &Self) -> Self {
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a.clone() + b.clone()).collect();
        Self { n: self.n, data }
    }

    pub fn sub(&self, o: &Self) -> Self {
        let data = self.data.iter().zip(&o.data).map(|(a, b)| a.clone() - b.clone()).collect();
        Self { n: self.n, data }
    }

    pub fn scale(&self, s: &T) -> Self {
        let data = self.data.iter().map(|a| a.clone() * s.clone()).collect();
        Self { n: self.n, data }
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a.is_zero() {
                    continue;
                }
                for j in 0..n {
                    let v = out.data[i * n + j].clone() + a.clone() * o.get(k, j).clone();
                    out.data[i * n + j] = v;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.get(i, j).clone();
            }
        }
        out
    }

    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j).is_zero()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.to_float().abs()).fold(0.0, f64::max)
    }

    /// Largest entrywise distance, as a float.
    pub fn max_abs_diff(&self, o: &Self) -> f64 {
        self.data
            .iter()
            .zip(&o.data)
            .map(|(a, b)| (a.clone() - b.clone()).to_float().abs())
            .fold(0.0, f64::max)
    }

    /// Exact symmetry (exact mode) or relative `1e-12` symmetry (approx mode).
    pub fn is_symmetric(&self) -> bool {
        let scale = self.max_abs();
        (0..self.n).all(|i| {
            (i + 1..self.n).all(|j| self.get(i, j).close(self.get(j, i), scale, SYMMETRY_REL))
        })
    }

    /// Entrywise equality to the mode's merge tolerance.
    pub fn same_as(&self, o: &Self, abs: f64) -> bool {
        self.n == o.n
            && self.data.iter().zip(&o.data).all(|(a, b)| a.close(b, 1.0, abs))
    }

    pub fn to_f64(&self) -> Matrix {
        Matrix { n: self.n, data: self.data.iter().map(Scalar::to_float).collect() }
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(&T) -> U) -> SquareMatrix<U> {
        SquareMatrix { n: self.n, data: self.data.iter().map(f).collect() }
    }

    /// Number of nonzero diagonal entries (the rank, for diagonal matrices).
    pub fn diag_rank(&self) -> usize {
        self.diag().iter().filter(|d| !d.is_zero()).count()
    }

    pub fn to_json(&self) -> Value {
        Value::Array(
            self.data
                .chunks(self.n)
                .map(|r| Value::Array(r.iter().map(Scalar::to_json).collect()))
                .collect(),
        )
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let rows = v
            .as_array()
            .ok_or_else(|| Error::Serialization("matrix must be an array of rows".into()))?;
        let parsed = rows
            .iter()
            .map(|r| {
                r.as_array()
                    .ok_or_else(|| Error::Serialization("matrix row must be an array".into()))?
                    .iter()
                    .map(T::from_json)
                    .collect::<Result<Vec<T>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(parsed)
    }
}

impl ExactMatrix {
    /// Converts a float matrix to its exact binary rational value.
    pub fn from_f64_matrix(m: &Matrix) -> Result<Self> {
        let data = m.data.iter().map(|v| rat_from_f64(*v)).collect::<Result<Vec<_>>>()?;
        Ok(Self { n: m.n, data })
    }
}

impl Matrix {
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns `(Mx)` for a vector `x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j) * x[j]).sum()).collect()
    }

    /// Symmetric part `(M + Mᵀ)/2`.
    pub fn symmetrized(&self) -> Matrix {
        let t = self.transpose();
        let mut out = self.add(&t);
        for v in &mut out.data {
            *v *= 0.5;
        }
        out
    }
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn det(a: &Matrix) -> f64 {
    let n = a.n();
    let mut m = a.data.clone();
    let mut d = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| m[i * n + col].abs().total_cmp(&m[j * n + col].abs()))
            .unwrap_or(col);
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            d = -d;
        }
        let p = m[col * n + col];
        d *= p;
        for r in col + 1..n {
            let f = m[r * n + col] / p;
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    d
}

/// Exact determinant by rational Gaussian elimination.
pub fn det_exact(a: &ExactMatrix) -> Rational {
    let n = a.n();
    let mut m = a.data.clone();
    let mut d = Rational::one();
    for col in 0..n {
        let Some(piv) = (col..n).find(|&r| !m[r * n + col].is_zero()) else {
            return Rational::zero();
        };
        if piv != col {
            for k in 0..n {
                m.swap(piv * n + k, col * n + k);
            }
            d = -d;
        }
        let p = m[col * n + col].clone();
        d *= &p;
        for r in col + 1..n {
            if m[r * n + col].is_zero() {
                continue;
            }
            let f = &m[r * n + col] / &p;
            for k in col..n {
                let v = &m[col * n + k] * &f;
                m[r * n + k] -= v;
            }
        }
    }
    d
}

/// Exact rank by rational Gaussian elimination.
pub fn rank_exact(a: &ExactMatrix) -> usize {
    let n = a.n();
    let mut m = a.data.clone();
    let mut rank = 0;
    for col in 0..n {
        let Some(piv) = (rank..n).find(|&r| !m[r * n + col].is_zero()) else {
            continue;
        };
        for k in 0..n {
            m.swap(piv * n + k, rank * n + k);
        }
        let p = m[rank * n + col].clone();
        for r in rank + 1..n {
            if m[r * n + col].is_zero() {
                continue;
            }
            let f = &m[r * n + col] / &p;
            for k in col..n {
                let v = &m[rank * n + k] * &f;
                m[r * n + k] -= v;
            }
        }
        rank += 1;
    }
    rank
}

/// True iff every 2×2 minor of `d` vanishes exactly (rank ≤ 1).
pub fn all_minors2_vanish(d: &ExactMatrix) -> bool {
    let n = d.n();
    for i in 0..n {
        for k in i + 1..n {
            for j in 0..n {
                for l in j + 1..n {
                    let minor = d.get(i, j) * d.get(k, l) - d.get(i, l) * d.get(k, j);
                    if !minor.is_zero() {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Exact PSD test: symmetric and every principal minor nonnegative.
pub fn is_psd_exact(a: &ExactMatrix) -> bool {
    if !a.is_symmetric() {
        return false;
    }
    let n = a.n();
    if a.is_diagonal() {
        return a.diag().iter().all(|d| !d.is_negative());
    }
    for mask in 1u32..(1 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = idx.len();
        if k == 1 {
            if a.get(idx[0], idx[0]).is_negative() {
                return false;
            }
            continue;
        }
        let mut sub = Vec::with_capacity(k * k);
        for &r in &idx {
            for &c in &idx {
                sub.push(a.get(r, c).clone());
            }
        }
        let minor = det_exact(&SquareMatrix { n: k, data: sub });
        if minor.is_negative() {
            return false;
        }
    }
    true
}

/// Symmetric eigen-decomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order (ties keep their original index
/// order) and the matrix whose columns are the matching unit eigenvectors,
/// with determinant `+1`.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entries".into()));
    }
    let n = a.n();
    let mut m = a.symmetrized().data;
    let mut v = Matrix::identity(n).data;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let total: f64 = m.iter().map(|x| x * x).sum();
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        if off <= JACOBI_OFFDIAG * JACOBI_OFFDIAG * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
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
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let vals = order.iter().map(|&i| m[i * n + i]).collect();
    let mut q = Matrix::zeros(n);
    for (col, &src) in order.iter().enumerate() {
        for r in 0..n {
            q.set(r, col, v[r * n + src]);
        }
    }
    if det(&q) < 0.0 {
        for r in 0..n {
            let x = -*q.get(r, 0);
            q.set(r, 0, x);
        }
    }
    Ok((vals, q))
}

/// Singular values `σ₁ ≤ … ≤ σ_n`.
pub fn sorted_singular_values(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_finite() {
        return Err(Error::InvalidInput("non-finite matrix entries".into()));
    }
    let n = a.n();
    // Column-major working copy; columns are rotated until mutually orthogonal.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| *a.get(i, j)).collect()).collect();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha: f64 = cols[p].iter().map(|x| x * x).sum();
                let beta: f64 = cols[q].iter().map(|x| x * x).sum();
                let gamma: f64 = cols[p].iter().zip(&cols[q]).map(|(x, y)| x * y).sum();
                if gamma == 0.0 || gamma.abs() <= JACOBI_OFFDIAG * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let x = cols[p][k];
                    let y = cols[q][k];
                    cols[p][k] = c * x - s * y;
                    cols[q][k] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = cols.iter().map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt()).collect();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Operator norm `σ_n`.
pub fn op_norm(a: &Matrix) -> f64 {
    sorted_singular_values(a).map(|s| *s.last().unwrap_or(&0.0)).unwrap_or(f64::NAN)
}

/// `σ_{n−1}(B − C)`: zero exactly when `B − C` has rank at most one.
pub fn rank_one_defect(b: &Matrix, c: &Matrix) -> Result<f64> {
    if b.n() != c.n() {
        return Err(Error::DimensionMismatch { expected: b.n(), got: c.n() });
    }
    let s = sorted_singular_values(&b.sub(c))?;
    Ok(s[s.len() - 2])
}

/// Exact-mode rank-one defect.
///
/// Zero iff all 2×2 minors of `B − C` vanish. A nonzero value is only
/// available when `B − C` is diagonal (its singular values are then the
/// absolute diagonal entries).
pub fn rank_one_defect_exact(b: &ExactMatrix, c: &ExactMatrix) -> Result<Rational> {
    if b.n() != c.n() {
        return Err(Error::DimensionMismatch { expected: b.n(), got: c.n() });
    }
    let d = b.sub(c);
    if all_minors2_vanish(&d) {
        return Ok(Rational::zero());
    }
    if !d.is_diagonal() {
        return Err(Error::Unsupported("exact singular values of a non-diagonal matrix".into()));
    }
    let mut s: Vec<Rational> = d.diag().iter().map(|x| x.abs()).collect();
    s.sort();
    Ok(s[s.len() - 2].clone())
}

/// Approx-mode PSD test with relative tolerance.
pub fn is_psd(a: &Matrix) -> bool {
    if !a.is_symmetric() {
        return false;
    }
    match sym_eigen(a) {
        Ok((vals, _)) => vals[0] >= -SYMMETRY_REL * a.max_abs().max(1.0),
        Err(_) => false,
    }
}

/// An element of `SO(n)` stored as an explicit orthogonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Rotation {
    q: Matrix,
}

impl Rotation {
    pub fn identity(n: usize) -> Result<Self> {
        check_dim(n)?;
        Ok(Self { q: Matrix::identity(n) })
    }

    /// Validates `QᵀQ = I` and `det Q = 1` to `1e-12`.
    pub fn from_matrix(q: Matrix) -> Result<Self> {
        check_dim(q.n())?;
        let qtq = q.transpose().matmul(&q);
        let err = qtq.max_abs_diff(&Matrix::identity(q.n()));
        if err > ROTATION_ABS {
            return Err(Error::InvalidInput(format!("matrix is not orthogonal (error {err:e})")));
        }
        let d = det(&q);
        if (d - 1.0).abs() > ROTATION_ABS {
            return Err(Error::InvalidInput(format!("determinant {d} is not 1")));
        }
        Ok(Self { q })
    }

    /// Rotation by `theta` in the `(i, j)` coordinate plane.
    pub fn planar(n: usize, i: usize, j: usize, theta: f64) -> Result<Self> {
        Self::from_givens(n, &[(i, j, theta)])
    }

    /// Product of planar rotations, applied left to right.
    pub fn from_givens(n: usize, planes: &[(usize, usize, f64)]) -> Result<Self> {
        check_dim(n)?;
        let mut q = Matrix::identity(n);
        for &(i, j, theta) in planes {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidInput(format!("bad rotation plane ({i}, {j})")));
            }
            let mut g = Matrix::identity(n);
            let (s, c) = theta.sin_cos();
            g.set(i, i, c);
            g.set(j, j, c);
            g.set(i, j, -s);
            g.set(j, i, s);
            q = q.matmul(&g);
        }
        Ok(Self { q })
    }

    /// Random rotation: one Givens factor per coordinate plane with uniform angle.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut planes = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                planes.push((i, j, rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI)));
            }
        }
        Self::from_givens(n, &planes)
    }

    pub fn n(&self) -> usize {
        self.q.n()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.q
    }
}

/// `Q · diag(d) · Qᵀ`, symmetrized so the result is exactly symmetric.
pub fn conjugate_diag(q: &Rotation, d: &[f64]) -> Result<Matrix> {
    if d.len() != q.n() {
        return Err(Error::DimensionMismatch { expected: q.n(), got: d.len() });
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite diagonal".into()));
    }
    let qm = q.matrix();
    let dm = Matrix::from_diag(d);
    Ok(qm.matmul(&dm).matmul(&qm.transpose()).symmetrized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singular_values_of_diagonal_and_identity() {
        let a = Matrix::from_diag(&[2.0, 0.0]);
        assert_eq!(sorted_singular_values(&a).unwrap(), vec![0.0, 2.0]);
        let i3 = Matrix::identity(3);
        assert_eq!(sorted_singular_values(&i3).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let a = Matrix::from_diag(&[f64::NAN, 1.0]);
        assert!(sorted_singular_values(&a).is_err());
    }

    #[test]
    fn rank_one_defect_examples() {
        let b = Matrix::from_diag(&[0.0, 1.0]);
        let c = Matrix::from_diag(&[2.0, 1.0]);
        assert_eq!(rank_one_defect(&b, &c).unwrap(), 0.0);
        let i2 = Matrix::identity(2);
        let d = rank_one_defect(&i2, &i2.scale(&2.0)).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_defect_and_minors() {
        let b = ExactMatrix::from_diag(&[rat(0, 1), rat(1, 1)]);
        let c = ExactMatrix::from_diag(&[rat(2, 1), rat(1, 1)]);
        assert!(rank_one_defect_exact(&b, &c).unwrap().is_zero());
        let i2 = ExactMatrix::identity(2);
        assert_eq!(rank_one_defect_exact(&i2, &i2.scale(&rat(2, 1))).unwrap(), rat(1, 1));
    }

    #[test]
    fn conjugate_by_quarter_turn_swaps_axes() {
        let q = Rotation::planar(2, 0, 1, std::f64::consts::FRAC_PI_2).unwrap();
        let m = conjugate_diag(&q, &[1.0, 2.0]).unwrap();
        assert!(m.max_abs_diff(&Matrix::from_diag(&[2.0, 1.0])) < 1e-15);
        let id = Rotation::identity(2).unwrap();
        assert_eq!(conjugate_diag(&id, &[1.0, 2.0]).unwrap(), Matrix::from_diag(&[1.0, 2.0]));
    }

    #[test]
    fn rotation_validation() {
        let mut bad = Matrix::identity(2);
        bad.set(0, 0, -1.0);
        assert!(Rotation::from_matrix(bad).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Rotation::random(4, &mut rng).unwrap();
        assert!(Rotation::from_matrix(q.matrix().clone()).is_ok());
    }

    #[test]
    fn eigen_decomposition_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = Rotation::random(5, &mut rng).unwrap();
        let d = [0.1, 0.5, 0.5, 2.0, 7.0];
        let a = conjugate_diag(&q, &d).unwrap();
        let (vals, v) = sym_eigen(&a).unwrap();
        for (x, y) in vals.iter().zip(d) {
            assert!((x - y).abs() < 1e-12);
        }
        let back = conjugate_diag(&Rotation::from_matrix(v).unwrap(), &vals).unwrap();
        assert!(back.max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn exact_psd_and_rank() {
        let a = ExactMatrix::from_rows(vec![
            vec![rat(2, 1), rat(1, 1)],
            vec![rat(1, 1), rat(1, 2)],
        ])
        .unwrap();
        assert!(is_psd_exact(&a));
        assert_eq!(rank_exact(&a), 1);
        let b = ExactMatrix::from_diag(&[rat(1, 1), rat(-1, 3)]);
        assert!(!is_psd_exact(&b));
        assert_eq!(det_exact(&b), rat(-1, 3));
    }

    #[test]
    fn rational_text_round_trip() {
        for s in ["3/128", "-7/2", "5", "0"] {
            assert_eq!(format_rational(&parse_rational(s).unwrap()), s);
        }
        assert!(parse_rational("1/0").is_err());
        assert_eq!(pow2(-3), rat(1, 8));
        assert_eq!(rpow(&rat(2, 3), -2), rat(9, 4));
    }

    #[test]
    fn exact_norm_comparison_off_diagonal() {
        // [[1,1],[1,1]] has norm 2.
        let a = ExactMatrix::from_rows(vec![vec![rat(1, 1), rat(1, 1)], vec![rat(1, 1), rat(1, 1)]])
            .unwrap();
        assert!(Rational::norm_exceeds(&a, &rat(19, 10)));
        assert!(!Rational::norm_exceeds(&a, &rat(2, 1)));
    }
}
