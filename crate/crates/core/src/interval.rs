//! Scalar and tensor interval arithmetic.
//!
//! Every bound in the engine is carried as a closed interval `[lo, hi]` of
//! `f64`. No outward rounding is performed; callers that assert soundness
//! compare with a small slack.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed real interval with `lo <= hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    /// Builds `[lo, hi]`, rejecting inverted or NaN endpoints.
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo <= hi {
            Ok(Self { lo, hi })
        } else {
            Err(Error::InvalidInterval { lo, hi })
        }
    }

    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    /// Smallest interval containing both values, in either order.
    pub fn hull(a: f64, b: f64) -> Self {
        Self {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    /// `true` when `other` lies entirely inside `self`.
    pub fn encloses(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    /// Intersection, or `None` when the intervals are disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn scale(&self, c: f64) -> Interval {
        Interval::hull(c * self.lo, c * self.hi)
    }
}

impl TryFrom<[f64; 2]> for Interval {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Interval::new(v[0], v[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(iv: Interval) -> Self {
        [iv.lo, iv.hi]
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

pub fn iv_add(a: Interval, b: Interval) -> Interval {
    Interval {
        lo: a.lo + b.lo,
        hi: a.hi + b.hi,
    }
}

pub fn iv_mul(a: Interval, b: Interval) -> Interval {
    let p = [a.lo * b.lo, a.lo * b.hi, a.hi * b.lo, a.hi * b.hi];
    Interval {
        lo: p.iter().copied().fold(f64::INFINITY, f64::min),
        hi: p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Direction in which a scalar map is monotone over the argument interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

/// Image of `x` under a map that is monotone on `x` in the given direction.
pub fn iv_monotone<F: Fn(f64) -> f64>(f: F, direction: Monotonicity, x: Interval) -> Interval {
    let (a, b) = (f(x.lo), f(x.hi));
    match direction {
        Monotonicity::Increasing => Interval { lo: a, hi: b },
        Monotonicity::Decreasing => Interval { lo: b, hi: a },
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(x).map(|(w, v)| w * v).sum())
            .collect()
    }

    /// `self * other`, skipping zero entries of `self`.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }
}

/// Shaped array of intervals stored as two flat row-major arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct IntervalTensor {
    shape: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl IntervalTensor {
    pub fn new(shape: Vec<usize>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::shape("positive dimensions", format!("{shape:?}")));
        }
        if lo.len() != n || hi.len() != n {
            return Err(Error::shape(
                format!("{n} elements for shape {shape:?}"),
                format!("lo {} / hi {}", lo.len(), hi.len()),
            ));
        }
        if let Some((&l, &h)) = lo.iter().zip(&hi).find(|(l, h)| l > h || l.is_nan() || h.is_nan()) {
            return Err(Error::InvalidInterval { lo: l, hi: h });
        }
        Ok(Self { shape, lo, hi })
    }

    /// Degenerate tensor `[x, x]` elementwise.
    pub fn point(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Self::new(shape, values.clone(), values)
    }

    pub fn from_intervals(shape: Vec<usize>, items: &[Interval]) -> Result<Self> {
        let lo = items.iter().map(|i| i.lo).collect();
        let hi = items.iter().map(|i| i.hi).collect();
        Self::new(shape, lo, hi)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn get(&self, i: usize) -> Interval {
        Interval {
            lo: self.lo[i],
            hi: self.hi[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Interval> + '_ {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&lo, &hi)| Interval { lo, hi })
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.len() {
            return Err(Error::shape(
                format!("{} elements", self.len()),
                format!("{shape:?}"),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn encloses(&self, other: &IntervalTensor) -> bool {
        self.len() == other.len() && self.iter().zip(other.iter()).all(|(a, b)| a.encloses(&b))
    }

    /// Elementwise intersection. Disjoint pairs (possible only through
    /// rounding) collapse to the hull of the two inner endpoints.
    pub fn intersect(&self, other: &IntervalTensor) -> Result<IntervalTensor> {
        if self.len() != other.len() {
            return Err(Error::shape(self.len(), other.len()));
        }
        let items: Vec<Interval> = self
            .iter()
            .zip(other.iter())
            .map(|(a, b)| a.intersect(&b).unwrap_or_else(|| Interval::hull(a.lo.max(b.lo), a.hi.min(b.hi))))
            .collect();
        Self::from_intervals(self.shape.clone(), &items)
    }

    pub fn map_monotone<F: Fn(f64) -> f64>(&self, f: F, direction: Monotonicity) -> IntervalTensor {
        let (lo, hi) = self
            .iter()
            .map(|x| iv_monotone(&f, direction, x))
            .map(|iv| (iv.lo, iv.hi))
            .unzip();
        IntervalTensor {
            shape: self.shape.clone(),
            lo,
            hi,
        }
    }
}

/// Sound image of an interval vector under `W x + b`.
///
/// Each row uses the sign of the weight to pick the endpoint:
/// positive weights pair with `[lo, hi]`, negative weights with `[hi, lo]`.
pub fn iv_affine(weights: &Matrix, bias: &[f64], x: &IntervalTensor) -> Result<IntervalTensor> {
    if weights.cols() != x.len() {
        return Err(Error::shape(
            format!("{} input elements", weights.cols()),
            format!("{} input elements", x.len()),
        ));
    }
    if bias.len() != weights.rows() {
        return Err(Error::shape(
            format!("bias of length {}", weights.rows()),
            format!("bias of length {}", bias.len()),
        ));
    }
    let mut lo = Vec::with_capacity(weights.rows());
    let mut hi = Vec::with_capacity(weights.rows());
    for (r, &b) in bias.iter().enumerate() {
        let (mut l, mut h) = (b, b);
        for ((&w, &xl), &xh) in weights.row(r).iter().zip(&x.lo).zip(&x.hi) {
            if w >= 0.0 {
                l += w * xl;
                h += w * xh;
            } else {
                l += w * xh;
                h += w * xl;
            }
        }
        lo.push(l);
        hi.push(h);
    }
    IntervalTensor::new(vec![weights.rows()], lo, hi)
}
