//! Kronecker-structured linear operators with one factor per attribute.
//!
//! Vectors are laid out row-major over the attribute axes in ascending
//! attribute order, so the last attribute varies fastest. An operator is
//! applied one axis at a time (the shuffle algorithm); the differencing
//! factor and its pseudoinverse use O(n) recurrences instead of dense
//! multiplication.

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default cap on `out_len * in_len` for [`KronOperator::dense_materialize`].
pub const DEFAULT_DENSE_GUARD: usize = 1_000_000;

/// A single per-attribute factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FactorKind<T> {
    /// `n x n` identity.
    Identity(usize),
    /// `1 x n` row of ones (sums the axis out).
    OnesRow(usize),
    /// `n x 1` column with every entry equal to the scalar.
    ScaledOnesCol(usize, T),
    /// `(n-1) x n` successive differences, `(Dv)_i = v_i - v_{i+1}`.
    Diff(usize),
    /// `n x (n-1)` Moore-Penrose pseudoinverse of `Diff(n)`.
    DiffPinv(usize),
    /// `1 x 1` identity, used for attributes the operator ignores.
    ScalarOne,
}

impl<T: Scalar> FactorKind<T> {
    pub fn in_len(&self) -> usize {
        match *self {
            FactorKind::Identity(n) | FactorKind::OnesRow(n) | FactorKind::Diff(n) => n,
            FactorKind::ScaledOnesCol(..) | FactorKind::ScalarOne => 1,
            FactorKind::DiffPinv(n) => n - 1,
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            FactorKind::Identity(n) | FactorKind::ScaledOnesCol(n, _) | FactorKind::DiffPinv(n) => {
                n
            }
            FactorKind::OnesRow(_) | FactorKind::ScalarOne => 1,
            FactorKind::Diff(n) => n - 1,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            FactorKind::Identity(0)
            | FactorKind::Diff(0)
            | FactorKind::DiffPinv(0)
            | FactorKind::OnesRow(0)
            | FactorKind::ScaledOnesCol(0, _) => {
                Err(Error::InvalidDomain("factor of size zero".into()))
            }
            _ => Ok(()),
        }
    }

    fn is_identity(&self) -> bool {
        matches!(self, FactorKind::Identity(_) | FactorKind::ScalarOne)
    }

    /// Explicit dense matrix of the factor, built entry by entry.
    pub fn dense(&self) -> DenseMatrix<T> {
        let mut m = DenseMatrix::zeros(self.out_len(), self.in_len());
        match *self {
            FactorKind::Identity(n) => m = DenseMatrix::identity(n),
            FactorKind::ScalarOne => m = DenseMatrix::identity(1),
            FactorKind::OnesRow(n) => {
                for j in 0..n {
                    m[(0, j)] = T::one();
                }
            }
            FactorKind::ScaledOnesCol(n, c) => {
                for i in 0..n {
                    m[(i, 0)] = c;
                }
            }
            FactorKind::Diff(n) => {
                for i in 0..n - 1 {
                    m[(i, i)] = T::one();
                    m[(i, i + 1)] = -T::one();
                }
            }
            FactorKind::DiffPinv(n) => {
                // (1/n)(1 u^T - n C), u_j = n-1-j, C_ij = 1 for i > j.
                let nf = T::of_usize(n);
                for i in 0..n {
                    for j in 0..n - 1 {
                        let u = T::of_usize(n - 1 - j);
                        let c = if i > j { nf } else { T::zero() };
                        m[(i, j)] = (u - c) / nf;
                    }
                }
            }
        }
        m
    }

    /// Applies the factor (or its transpose) along one axis of a row-major
    /// block. `src` holds `in` rows of `post` contiguous entries and `dst`
    /// receives `out` rows of the same width.
    fn apply_axis(&self, transpose: bool, src: &[T], dst: &mut [T], post: usize) {
        let row = |k: usize| &src[k * post..(k + 1) * post];
        match (*self, transpose) {
            (FactorKind::Identity(_), _) | (FactorKind::ScalarOne, _) => dst.copy_from_slice(src),
            (FactorKind::OnesRow(n), false) | (FactorKind::ScaledOnesCol(n, _), true) => {
                let scale = match *self {
                    FactorKind::ScaledOnesCol(_, c) => c,
                    _ => T::one(),
                };
                let out = &mut dst[..post];
                out.copy_from_slice(row(0));
                for k in 1..n {
                    for (o, &v) in out.iter_mut().zip(row(k)) {
                        *o = *o + v;
                    }
                }
                if scale != T::one() {
                    out.iter_mut().for_each(|o| *o = *o * scale);
                }
            }
            (FactorKind::OnesRow(n), true) | (FactorKind::ScaledOnesCol(n, _), false) => {
                let scale = match *self {
                    FactorKind::ScaledOnesCol(_, c) => c,
                    _ => T::one(),
                };
                let first = row(0);
                for k in 0..n {
                    for (o, &v) in dst[k * post..(k + 1) * post].iter_mut().zip(first) {
                        *o = v * scale;
                    }
                }
            }
            (FactorKind::Diff(n), false) => {
                for i in 0..n - 1 {
                    let (a, b) = (row(i), row(i + 1));
                    for ((o, &x), &y) in dst[i * post..(i + 1) * post].iter_mut().zip(a).zip(b) {
                        *o = x - y;
                    }
                }
            }
            (FactorKind::Diff(n), true) => {
                // (D^T y)_j = y_j [j < n-1] - y_{j-1} [j > 0]
                dst[..post].copy_from_slice(row(0));
                for j in 1..n - 1 {
                    let (a, b) = (row(j), row(j - 1));
                    for ((o, &x), &y) in dst[j * post..(j + 1) * post].iter_mut().zip(a).zip(b) {
                        *o = x - y;
                    }
                }
                for (o, &y) in dst[(n - 1) * post..].iter_mut().zip(row(n - 2)) {
                    *o = -y;
                }
            }
            (FactorKind::DiffPinv(n), false) => {
                // (D+ v)_0 = (u.v)/n, (D+ v)_i = (D+ v)_{i-1} - v_{i-1}
                let nf = T::of_usize(n);
                let (head, _) = dst.split_at_mut(post);
                head.iter_mut().for_each(|o| *o = T::zero());
                for j in 0..n - 1 {
                    let u = T::of_usize(n - 1 - j);
                    for (o, &v) in head.iter_mut().zip(row(j)) {
                        *o = *o + u * v;
                    }
                }
                head.iter_mut().for_each(|o| *o = *o / nf);
                for i in 1..n {
                    let (prev, rest) = dst.split_at_mut(i * post);
                    let prev = &prev[(i - 1) * post..];
                    for ((o, &p), &v) in rest[..post].iter_mut().zip(prev).zip(row(i - 1)) {
                        *o = p - v;
                    }
                }
            }
            (FactorKind::DiffPinv(n), true) => {
                // (D+^T v)_j = u_j (sum v)/n - sum_{i>j} v_i
                // Suffix sums are built in place in dst, then finished per column.
                let nf = T::of_usize(n);
                if post == 1 {
                    let total = src.iter().fold(T::zero(), |a, &v| a + v);
                    let mean = total / nf;
                    let mut suffix = total;
                    for j in 0..n - 1 {
                        suffix = suffix - src[j];
                        dst[j] = T::of_usize(n - 1 - j) * mean - suffix;
                    }
                    return;
                }
                dst[(n - 2) * post..(n - 1) * post].copy_from_slice(row(n - 1));
                for j in (0..n - 2).rev() {
                    let (lo, hi) = dst.split_at_mut((j + 1) * post);
                    for ((o, &s), &v) in lo[j * post..].iter_mut().zip(&hi[..post]).zip(row(j + 1))
                    {
                        *o = s + v;
                    }
                }
                let mean: Vec<T> = dst[..post]
                    .iter()
                    .zip(row(0))
                    .map(|(&s, &v)| (s + v) / nf)
                    .collect();
                for j in 0..n - 1 {
                    let u = T::of_usize(n - 1 - j);
                    for (o, &m) in dst[j * post..(j + 1) * post].iter_mut().zip(&mean) {
                        *o = u * m - *o;
                    }
                }
            }
        }
    }
}

/// Applies one factor (or its transpose) along `axis` of a row-major
/// tensor with shape `dims`, leaving the other axes untouched.
pub fn apply_on_axis<T: Scalar>(
    factor: &FactorKind<T>,
    transpose: bool,
    x: &[T],
    dims: &[usize],
    axis: usize,
) -> Result<Vec<T>> {
    let (b, a) = if transpose {
        (factor.out_len(), factor.in_len())
    } else {
        (factor.in_len(), factor.out_len())
    };
    if dims.get(axis) != Some(&b) {
        return Err(Error::Shape {
            expected: b,
            got: dims.get(axis).copied().unwrap_or(0),
        });
    }
    let len: usize = dims.iter().product();
    if x.len() != len {
        return Err(Error::Shape {
            expected: len,
            got: x.len(),
        });
    }
    let post: usize = dims[axis + 1..].iter().product();
    let pre: usize = dims[..axis].iter().product();
    if factor.is_identity() {
        return Ok(x.to_vec());
    }
    let mut out = vec![T::zero(); pre * a * post];
    // An empty input or output needs no arithmetic, and factors over a
    // single category have an empty side.
    if len > 0 && !out.is_empty() {
        for (src, dst) in x.chunks_exact(b * post).zip(out.chunks_exact_mut(a * post)) {
            factor.apply_axis(transpose, src, dst, post);
        }
    }
    Ok(out)
}

/// Kronecker product of per-attribute factors.
#[derive(Debug, Clone, PartialEq)]
pub struct KronOperator<T> {
    factors: Vec<FactorKind<T>>,
    in_len: usize,
    out_len: usize,
}

impl<T: Scalar> KronOperator<T> {
    pub fn new(factors: Vec<FactorKind<T>>) -> Result<Self> {
        for f in &factors {
            f.validate()?;
        }
        let in_len = factors.iter().map(FactorKind::in_len).product();
        let out_len = factors.iter().map(FactorKind::out_len).product();
        Ok(Self {
            factors,
            in_len,
            out_len,
        })
    }

    pub fn factors(&self) -> &[FactorKind<T>] {
        &self.factors
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    /// `op * x`.
    pub fn apply(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.in_len {
            return Err(Error::Shape {
                expected: self.in_len,
                got: x.len(),
            });
        }
        Ok(self.run(x, false))
    }

    /// `op^T * y`.
    pub fn apply_transpose(&self, y: &[T]) -> Result<Vec<T>> {
        if y.len() != self.out_len {
            return Err(Error::Shape {
                expected: self.out_len,
                got: y.len(),
            });
        }
        Ok(self.run(y, true))
    }

    fn run(&self, x: &[T], transpose: bool) -> Vec<T> {
        let mut dims: Vec<usize> = self
            .factors
            .iter()
            .map(|f| if transpose { f.out_len() } else { f.in_len() })
            .collect();
        let mut cur = x.to_vec();
        for (axis, factor) in self.factors.iter().enumerate() {
            if factor.is_identity() {
                continue;
            }
            let (b, a) = if transpose {
                (factor.out_len(), factor.in_len())
            } else {
                (factor.in_len(), factor.out_len())
            };
            let pre: usize = dims[..axis].iter().product();
            let post: usize = dims[axis + 1..].iter().product();
            let mut next = vec![T::zero(); pre * a * post];
            if !cur.is_empty() && !next.is_empty() {
                for (src, dst) in cur
                    .chunks_exact(b * post)
                    .zip(next.chunks_exact_mut(a * post))
                {
                    factor.apply_axis(transpose, src, dst, post);
                }
            }
            dims[axis] = a;
            cur = next;
        }
        cur
    }

    pub fn dense_materialize(&self) -> Result<DenseMatrix<T>> {
        self.dense_materialize_with_guard(DEFAULT_DENSE_GUARD)
    }

    /// Explicit dense matrix, formed as the Kronecker product of the dense
    /// factors. Refuses when the result would exceed `guard` entries.
    pub fn dense_materialize_with_guard(&self, guard: usize) -> Result<DenseMatrix<T>> {
        let entries = self.out_len.saturating_mul(self.in_len);
        if entries > guard {
            return Err(Error::DenseGuard { entries, guard });
        }
        Ok(self
            .factors
            .iter()
            .fold(DenseMatrix::identity(1), |acc, f| acc.kron(&f.dense())))
    }
}
