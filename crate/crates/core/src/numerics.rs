//! Dense vectors and matrices, softmax, a seeded generator and a
//! finite-difference gradient checker.
//!
//! Every reduction sums strictly left to right so results are bit-identical
//! across runs. Row-blocked kernels interleave several independent row sums,
//! which changes scheduling but never the order of additions within a row.

use std::ops::{Deref, DerefMut};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Vector(values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &[f64]) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "dot of length {} with length {}",
                self.len(),
                other.len()
            )));
        }
        Ok(dot(&self.0, other))
    }

    pub fn add(&self, other: &[f64]) -> Result<Vector> {
        if self.len() != other.len() {
            return Err(Error::shape(format!(
                "add of length {} with length {}",
                self.len(),
                other.len()
            )));
        }
        Ok(Vector(self.0.iter().zip(other).map(|(a, b)| a + b).collect()))
    }

    pub fn scale(&self, factor: f64) -> Vector {
        Vector(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn l2_norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// `(len, 1)`: a vector is stored as a column.
    pub fn shape(&self) -> (usize, usize) {
        (self.0.len(), 1)
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(values: Vec<f64>) -> Self {
        Vector(values)
    }
}

/// Row-major dense matrix with a fixed shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Appends rows below the existing ones; the column count must match.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::shape(format!(
                "row of length {} pushed onto {} columns",
                row.len(),
                self.cols
            )));
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vector> {
        if v.len() != self.cols {
            return Err(Error::shape(format!(
                "{}x{} matrix times vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        matvec_into(self, v, &mut out);
        Ok(Vector(out))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `out = m · v`, caller guarantees shapes.
pub(crate) fn matvec_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.cols, v.len());
    debug_assert_eq!(m.rows, out.len());
    let cols = m.cols;
    let mut i = 0;
    while i + 4 <= m.rows {
        let r0 = &m.data[i * cols..(i + 1) * cols];
        let r1 = &m.data[(i + 1) * cols..(i + 2) * cols];
        let r2 = &m.data[(i + 2) * cols..(i + 3) * cols];
        let r3 = &m.data[(i + 3) * cols..(i + 4) * cols];
        let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..cols {
            let x = v[j];
            a0 += r0[j] * x;
            a1 += r1[j] * x;
            a2 += r2[j] * x;
            a3 += r3[j] * x;
        }
        out[i] = a0;
        out[i + 1] = a1;
        out[i + 2] = a2;
        out[i + 3] = a3;
        i += 4;
    }
    while i < m.rows {
        out[i] = dot(m.row(i), v);
        i += 1;
    }
}

/// `out += m · v`.
pub(crate) fn matvec_add_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    let cols = m.cols;
    let mut i = 0;
    while i + 4 <= m.rows {
        let r0 = &m.data[i * cols..(i + 1) * cols];
        let r1 = &m.data[(i + 1) * cols..(i + 2) * cols];
        let r2 = &m.data[(i + 2) * cols..(i + 3) * cols];
        let r3 = &m.data[(i + 3) * cols..(i + 4) * cols];
        let (mut a0, mut a1, mut a2, mut a3) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..cols {
            let x = v[j];
            a0 += r0[j] * x;
            a1 += r1[j] * x;
            a2 += r2[j] * x;
            a3 += r3[j] * x;
        }
        out[i] += a0;
        out[i + 1] += a1;
        out[i + 2] += a2;
        out[i + 3] += a3;
        i += 4;
    }
    while i < m.rows {
        out[i] += dot(m.row(i), v);
        i += 1;
    }
}

/// `out += mᵀ · d`, summing over rows in increasing order.
pub(crate) fn matvec_transpose_add_into(m: &Matrix, d: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.rows, d.len());
    debug_assert_eq!(m.cols, out.len());
    for (i, &di) in d.iter().enumerate() {
        if di == 0.0 {
            continue;
        }
        let row = m.row(i);
        for (o, r) in out.iter_mut().zip(row) {
            *o += r * di;
        }
    }
}

/// `m += a ⊗ b`.
pub(crate) fn outer_add_into(m: &mut Matrix, a: &[f64], b: &[f64]) {
    debug_assert_eq!(m.rows, a.len());
    debug_assert_eq!(m.cols, b.len());
    let cols = m.cols;
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = &mut m.data[i * cols..(i + 1) * cols];
        for (r, bj) in row.iter_mut().zip(b) {
            *r += ai * bj;
        }
    }
}

pub fn matvec(m: &Matrix, v: &[f64]) -> Result<Vector> {
    m.matvec(v)
}

fn check_logits(logits: &[f64]) -> Result<f64> {
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        if l.is_nan() || l == f64::INFINITY {
            return Err(Error::non_finite(format!("logit {l}")));
        }
        if l > max {
            max = l;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::non_finite("every logit is -inf"));
    }
    Ok(max)
}

/// Max-subtracted softmax. Entries equal to −∞ map to exactly zero.
pub fn softmax(logits: &[f64]) -> Result<Vector> {
    let max = check_logits(logits)?;
    let mut out: Vec<f64> = logits
        .iter()
        .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - max).exp() })
        .collect();
    let total: f64 = out.iter().sum();
    for p in &mut out {
        *p /= total;
    }
    Ok(Vector(out))
}

/// Log-sum-exp over the finite entries; −∞ entries contribute nothing.
pub fn log_sum_exp(logits: &[f64]) -> Result<f64> {
    let max = check_logits(logits)?;
    let total: f64 = logits
        .iter()
        .filter(|l| **l != f64::NEG_INFINITY)
        .map(|&l| (l - max).exp())
        .sum();
    Ok(max + total.ln())
}

pub fn log_softmax(logits: &[f64]) -> Result<Vector> {
    let lse = log_sum_exp(logits)?;
    Ok(Vector(logits.iter().map(|&l| l - lse).collect()))
}

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vector>
where
    F: FnMut(&[f64]) -> f64,
{
    if h.is_nan() || h <= 0.0 {
        return Err(Error::config(format!("finite-difference step {h} must be positive")));
    }
    let mut probe = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::non_finite(format!(
                "function value not finite around coordinate {i}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(Vector(grad))
}

/// Deterministic generator: ChaCha with 8 rounds, keyed by `seed_from_u64`.
///
/// Derived quantities use fixed recipes so the stream is portable:
/// `uniform` takes the top 53 bits of one word, `normal` is Box–Muller over
/// two uniforms (cosine branch only), `below` uses rejection sampling.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent generator for a named sub-stream of the same seed. The
    /// child's own sub-streams are keyed by (seed, stream), so nested calls
    /// never collide with siblings.
    pub fn substream(&self, stream: u64) -> SeededRng {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(stream.wrapping_add(1));
        SeededRng {
            seed: splitmix64(self.seed ^ splitmix64(stream)),
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher–Yates, from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> &'a T {
        &items[self.below(items.len())]
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
