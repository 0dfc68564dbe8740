//! Dense kernels: row-major matrices, LU with partial pivoting and the
//! incremental inverse of the truncated generator `-T(i)`.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Pivots smaller than this in magnitude are treated as exact zeros.
pub const SINGULAR_PIVOT: f64 = 1e-300;

/// Dense real matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {:?}", self.row(r))?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries supplied for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite entry at ({}, {})",
                pos / cols.max(1),
                pos % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (k, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {k} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn column_vector(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy of the sub-block starting at `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            out.row_mut(r)
                .copy_from_slice(&self.row(r0 + r)[c0..c0 + cols]);
        }
        out
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &DenseMatrix) {
        assert!(r0 + src.rows <= self.rows && c0 + src.cols <= self.cols);
        for r in 0..src.rows {
            self.row_mut(r0 + r)[c0..c0 + src.cols].copy_from_slice(src.row(r));
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn add(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in sub");
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn add_diagonal(&mut self, alpha: f64) {
        for k in 0..self.rows.min(self.cols) {
            self[(k, k)] += alpha;
        }
    }

    pub fn matmul(&self, other: &DenseMatrix) -> Self {
        assert_eq!(self.cols, other.rows, "inner dimension mismatch in matmul");
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            1.0,
            View::of(self),
            View::of(other),
            0.0,
            ViewMut::of(&mut out),
        );
        out
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "dimension mismatch in matvec");
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Row vector times matrix.
    pub fn vecmat(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.rows, v.len(), "dimension mismatch in vecmat");
        let mut out = vec![0.0; self.cols];
        for (r, &w) in v.iter().enumerate() {
            if w != 0.0 {
                for (o, a) in out.iter_mut().zip(self.row(r)) {
                    *o += w * a;
                }
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).iter().sum()).collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|r| self.row(r).iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

impl Index<(usize, usize)> for DenseMatrix {
    type Output = f64;
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for DenseMatrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Strided read-only window into a row-major buffer.
#[derive(Clone, Copy)]
struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    stride: usize,
}

impl<'a> View<'a> {
    fn of(m: &'a DenseMatrix) -> Self {
        Self {
            data: &m.data,
            rows: m.rows,
            cols: m.cols,
            stride: m.cols,
        }
    }

    fn sub(m: &'a DenseMatrix, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= m.rows && c0 + cols <= m.cols);
        let start = r0 * m.cols + c0;
        Self {
            data: &m.data[start.min(m.data.len())..],
            rows,
            cols,
            stride: m.cols,
        }
    }
}

struct ViewMut<'a> {
    data: &'a mut [f64],
    rows: usize,
    cols: usize,
    stride: usize,
}

impl<'a> ViewMut<'a> {
    fn of(m: &'a mut DenseMatrix) -> Self {
        let (rows, cols) = m.shape();
        Self {
            data: &mut m.data,
            rows,
            cols,
            stride: cols,
        }
    }

    fn sub(m: &'a mut DenseMatrix, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= m.rows && c0 + cols <= m.cols);
        let stride = m.cols;
        let start = r0 * stride + c0;
        let len = m.data.len();
        Self {
            data: &mut m.data[start.min(len)..],
            rows,
            cols,
            stride,
        }
    }
}

/// `c := alpha * a * b + beta * c`
fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows);
    assert_eq!(a.rows, c.rows);
    assert_eq!(b.cols, c.cols);
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    if a.cols == 0 {
        for r in 0..c.rows {
            for x in &mut c.data[r * c.stride..r * c.stride + c.cols] {
                *x *= beta;
            }
        }
        return;
    }
    // Every touched offset lies inside the borrowed slices.
    assert!((a.rows - 1) * a.stride + a.cols <= a.data.len());
    assert!((b.rows - 1) * b.stride + b.cols <= b.data.len());
    assert!((c.rows - 1) * c.stride + c.cols <= c.data.len());
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr(),
            a.stride as isize,
            1,
            b.data.as_ptr(),
            b.stride as isize,
            1,
            beta,
            c.data.as_mut_ptr(),
            c.stride as isize,
            1,
        );
    }
}

/// LU factorization `PA = LU` with partial (row) pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    factors: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, magnitude) = (k..n)
                .map(|r| (r, lu[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if !(magnitude >= SINGULAR_PIVOT) {
                return Err(Error::Singular {
                    index: k,
                    magnitude: magnitude.max(0.0),
                });
            }
            if p != k {
                for c in 0..n {
                    lu.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let pivot_row = &head[k * n..k * n + n];
            for r in 0..n - k - 1 {
                let row = &mut tail[r * n..r * n + n];
                let factor = row[k] / pivot;
                row[k] = factor;
                if factor != 0.0 {
                    for c in k + 1..n {
                        row[c] -= factor * pivot_row[c];
                    }
                }
            }
        }
        Ok(Self {
            n,
            factors: lu,
            perm,
        })
    }

    pub fn order(&self) -> usize {
        self.n
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n, "right-hand side length mismatch");
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let row = &self.factors[r * n..r * n + r];
            let s: f64 = row.iter().zip(&x[..r]).map(|(l, v)| l * v).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let row = &self.factors[r * n..(r + 1) * n];
            let s: f64 = row[r + 1..].iter().zip(&x[r + 1..]).map(|(u, v)| u * v).sum();
            x[r] = (x[r] - s) / row[r];
        }
        x
    }

    pub fn solve(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows, self.n, "right-hand side rows mismatch");
        let n = self.n;
        let m = b.cols;
        let mut x = DenseMatrix::zeros(n, m);
        for r in 0..n {
            x.row_mut(r).copy_from_slice(b.row(self.perm[r]));
        }
        // Forward substitution on all columns at once.
        for r in 0..n {
            let (done, rest) = x.data.split_at_mut(r * m);
            let target = &mut rest[..m];
            for k in 0..r {
                let l = self.factors[r * n + k];
                if l != 0.0 {
                    for (t, v) in target.iter_mut().zip(&done[k * m..(k + 1) * m]) {
                        *t -= l * v;
                    }
                }
            }
        }
        for r in (0..n).rev() {
            let (head, tail) = x.data.split_at_mut((r + 1) * m);
            let target = &mut head[r * m..];
            for k in r + 1..n {
                let u = self.factors[r * n + k];
                if u != 0.0 {
                    let src = &tail[(k - r - 1) * m..(k - r) * m];
                    for (t, v) in target.iter_mut().zip(src) {
                        *t -= u * v;
                    }
                }
            }
            let d = self.factors[r * n + r];
            for t in target.iter_mut() {
                *t /= d;
            }
        }
        x
    }

    pub fn inverse(&self) -> DenseMatrix {
        self.solve(&DenseMatrix::identity(self.n))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveOptions {
    /// Apply one step of iterative refinement after the direct solve.
    pub refine: bool,
}

/// Solves `A X = B` by LU with partial pivoting.
pub fn solve_linear(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    solve_linear_with(a, b, SolveOptions::default())
}

pub fn solve_linear_with(a: &DenseMatrix, b: &DenseMatrix, opts: SolveOptions) -> Result<DenseMatrix> {
    if b.rows != a.rows {
        return Err(Error::Dimension(format!(
            "right-hand side has {} rows, matrix has {}",
            b.rows, a.rows
        )));
    }
    let lu = Lu::factor(a)?;
    let mut x = lu.solve(b);
    if opts.refine {
        let residual = b.sub(&a.matmul(&x));
        x = x.add(&lu.solve(&residual));
    }
    Ok(x)
}

/// The matrix `-T^{-1}(i)` of expected total sojourn times in levels `1..=i`
/// before leaving them, kept together with its level layout.
#[derive(Debug, Clone)]
pub struct TruncatedGeneratorInverse {
    top_level: usize,
    inverse: DenseMatrix,
    /// `offsets[k]` is `c(k)`, the number of states in levels `1..=k`.
    offsets: Vec<usize>,
}

impl TruncatedGeneratorInverse {
    /// `-T^{-1}(1) = (-Q_{1,1})^{-1}`.
    pub fn first_level(q11: &DenseMatrix) -> Result<Self> {
        let lu = Lu::factor(&q11.scaled(-1.0))?;
        Ok(Self {
            top_level: 1,
            inverse: lu.inverse(),
            offsets: vec![0, q11.rows()],
        })
    }

    pub fn top_level(&self) -> usize {
        self.top_level
    }

    pub fn inverse(&self) -> &DenseMatrix {
        &self.inverse
    }

    /// `c(i)` for the current top level.
    pub fn cardinality(&self) -> usize {
        self.inverse.rows()
    }

    /// Position of state `(level, phase)` in the level-major ordering.
    pub fn index_of(&self, level: usize, phase: usize) -> Option<usize> {
        if level == 0 || level > self.top_level {
            return None;
        }
        let start = self.offsets[level - 1];
        (phase < self.offsets[level] - start).then_some(start + phase)
    }

    /// Rows of `-T^{-1}(i)` multiplied by `t_0(i)`, where `t_0` is non-zero
    /// only on level 1 and equals `exit` there.
    pub fn absorption_probabilities(&self, exit: &[f64]) -> Vec<f64> {
        assert_eq!(exit.len(), self.offsets[1], "exit vector must cover level 1");
        (0..self.inverse.rows())
            .map(|r| self.inverse.row(r)[..exit.len()].iter().zip(exit).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Grows `-T^{-1}(i-1)` to `-T^{-1}(i)` by the block Schur-complement update.
///
/// `upper` is `Q_{i-1,i}`, `lower` is `Q_{i,i-1}` and `diag` is `Q_{i,i}`; the
/// zero-padded blocks `A_{1,2}` and `A_{2,1}` are never materialized.
pub fn extend_inverse(
    prev: &TruncatedGeneratorInverse,
    upper: &DenseMatrix,
    lower: &DenseMatrix,
    diag: &DenseMatrix,
) -> Result<TruncatedGeneratorInverse> {
    let c = prev.cardinality();
    let top = prev.top_level;
    let prev_width = prev.offsets[top] - prev.offsets[top - 1];
    let width = diag.rows();
    if diag.cols() != width
        || upper.shape() != (prev_width, width)
        || lower.shape() != (width, prev_width)
    {
        return Err(Error::Dimension(format!(
            "extend_inverse at level {}: Q_{{i-1,i}} {:?}, Q_{{i,i-1}} {:?}, Q_{{i,i}} {:?} \
             with previous level width {prev_width}",
            top + 1,
            upper.shape(),
            lower.shape(),
            diag.shape()
        )));
    }
    let off = c - prev_width;
    let p = &prev.inverse;

    // A21 (-T^{-1}(i-1)) : only the last level's rows of P are hit.
    let mut a21p = DenseMatrix::zeros(width, c);
    gemm(
        1.0,
        View::of(lower),
        View::sub(p, off, 0, prev_width, c),
        0.0,
        ViewMut::of(&mut a21p),
    );
    // (-T^{-1}(i-1)) A12 : only the last level's columns of P are hit.
    let mut pa12 = DenseMatrix::zeros(c, width);
    gemm(
        1.0,
        View::sub(p, 0, off, c, prev_width),
        View::of(upper),
        0.0,
        ViewMut::of(&mut pa12),
    );

    let mut schur = diag.scaled(-1.0);
    gemm(
        -1.0,
        View::sub(&a21p, 0, off, width, prev_width),
        View::of(upper),
        1.0,
        ViewMut::of(&mut schur),
    );
    let b22 = Lu::factor(&schur)?.inverse();
    let b21 = b22.matmul(&a21p);
    let b12 = pa12.matmul(&b22);

    let n = c + width;
    let mut next = DenseMatrix::zeros(n, n);
    for r in 0..c {
        next.row_mut(r)[..c].copy_from_slice(p.row(r));
    }
    // B11 = P (I + A12 B21) = P + (P A12) B21
    gemm(
        1.0,
        View::of(&pa12),
        View::of(&b21),
        1.0,
        ViewMut::sub(&mut next, 0, 0, c, c),
    );
    next.set_block(0, c, &b12);
    next.set_block(c, 0, &b21);
    next.set_block(c, c, &b22);

    let mut offsets = prev.offsets.clone();
    offsets.push(n);
    Ok(TruncatedGeneratorInverse {
        top_level: top + 1,
        inverse: next,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn diagonally_dominant(rng: &mut ChaCha8Rng, n: usize) -> DenseMatrix {
        let mut a = random_matrix(rng, n, n);
        for r in 0..n {
            let s: f64 = a.row(r).iter().map(|x| x.abs()).sum();
            a[(r, r)] = s + 1.0;
        }
        a
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_matrix(&mut rng, 3, 4);
        let x = solve_linear(&DenseMatrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn diagonal_solve() {
        let a = DenseMatrix::from_rows(&[[2.0, 0.0], [0.0, 4.0]]).unwrap();
        let b = DenseMatrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let x = solve_linear(&a, &b).unwrap();
        assert_eq!(x.as_slice(), &[0.5, 0.25]);
    }

    #[test]
    fn random_dominant_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = diagonally_dominant(&mut rng, 8);
        let b = random_matrix(&mut rng, 8, 3);
        let x = solve_linear(&a, &b).unwrap();
        let residual = a.matmul(&x).sub(&b).norm_inf();
        assert!(residual <= 1e-10 * a.norm_inf() * x.norm_inf(), "residual {residual}");
    }

    #[test]
    fn singular_reports_pivot() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        let err = solve_linear(&a, &DenseMatrix::identity(2)).unwrap_err();
        assert!(matches!(err, Error::Singular { index: 1, .. }), "{err:?}");
    }

    #[test]
    fn pivoting_handles_zero_leading_entry() {
        let a = DenseMatrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let x = Lu::factor(&a).unwrap().solve_vec(&[3.0, 5.0]);
        assert_eq!(x, vec![5.0, 3.0]);
    }

    #[test]
    fn refinement_does_not_hurt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = diagonally_dominant(&mut rng, 12);
        let x0 = random_matrix(&mut rng, 12, 2);
        let b = a.matmul(&x0);
        let x = solve_linear_with(&a, &b, SolveOptions { refine: true }).unwrap();
        assert!(x.max_abs_diff(&x0) < 1e-12);
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(DenseMatrix::from_vec(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn strided_gemm_into_sub_block() {
        let a = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let mut c = DenseMatrix::identity(3);
        gemm(1.0, View::of(&a), View::of(&a), 1.0, ViewMut::sub(&mut c, 1, 1, 2, 2));
        let expected =
            DenseMatrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 8.0, 10.0], [0.0, 15.0, 23.0]]).unwrap();
        assert_eq!(c, expected);
    }

    // Birth-death with unit rates: T(2) = [[-2, 1], [1, -2]], inverse by hand.
    #[test]
    fn birth_death_extension_matches_hand_inverse() {
        let q = DenseMatrix::from_rows(&[[-2.0]]).unwrap();
        let one = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        let first = TruncatedGeneratorInverse::first_level(&q).unwrap();
        assert_abs_diff_eq!(first.inverse()[(0, 0)], 0.5, epsilon = 1e-15);
        let second = extend_inverse(&first, &one, &one, &q).unwrap();
        let expected =
            DenseMatrix::from_rows(&[[2.0 / 3.0, 1.0 / 3.0], [1.0 / 3.0, 2.0 / 3.0]]).unwrap();
        assert!(second.inverse().max_abs_diff(&expected) < 1e-15);
        assert_eq!(second.top_level(), 2);
        assert_eq!(second.index_of(2, 0), Some(1));
        assert_eq!(second.index_of(2, 1), None);
    }

    #[test]
    fn decoupled_extension_is_block_diagonal() {
        let q11 = DenseMatrix::from_rows(&[[-3.0, 1.0], [1.0, -2.0]]).unwrap();
        let q22 = DenseMatrix::from_rows(&[[-4.0, 1.0, 0.5], [0.0, -1.0, 0.0], [1.0, 1.0, -5.0]]).unwrap();
        let first = TruncatedGeneratorInverse::first_level(&q11).unwrap();
        let next = extend_inverse(
            &first,
            &DenseMatrix::zeros(2, 3),
            &DenseMatrix::zeros(3, 2),
            &q22,
        )
        .unwrap();
        let b22 = Lu::factor(&q22.scaled(-1.0)).unwrap().inverse();
        assert!(next.inverse().block(2, 2, 3, 3).max_abs_diff(&b22) < 1e-15);
        assert_eq!(next.inverse().block(0, 2, 2, 3).max_abs(), 0.0);
        assert_eq!(next.inverse().block(2, 0, 3, 2).max_abs(), 0.0);
        assert!(next.inverse().block(0, 0, 2, 2).max_abs_diff(first.inverse()) < 1e-15);
    }

    #[test]
    fn extension_rejects_bad_shapes() {
        let q = DenseMatrix::from_rows(&[[-2.0]]).unwrap();
        let first = TruncatedGeneratorInverse::first_level(&q).unwrap();
        let err = extend_inverse(&first, &DenseMatrix::zeros(2, 1), &DenseMatrix::zeros(1, 1), &q);
        assert!(matches!(err, Err(Error::Dimension(_))));
    }

    proptest! {
        #[test]
        fn solve_round_trip(seed in any::<u64>(), n in 1usize..12, m in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = diagonally_dominant(&mut rng, n);
            let x0 = random_matrix(&mut rng, n, m);
            let x = solve_linear(&a, &a.matmul(&x0)).unwrap();
            let scale = x0.max_abs().max(1e-300);
            prop_assert!(x.max_abs_diff(&x0) / scale <= 1e-8);
        }
    }
}
