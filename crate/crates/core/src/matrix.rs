//! Row-major dense matrices of `f64` and the kernels the rest of the crate
//! builds on.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::math;

/// Variance floor of [`DenseMatrix::standardize_columns`]; keeps the map
/// smooth when a column is constant.
pub const STANDARDIZE_EPS: f64 = 1e-5;

/// Row-major `rows × cols` matrix.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for DenseMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows.min(8) {
            writeln!(f, "  {:?}", &self.row(r)[..self.cols.min(8)])?;
        }
        write!(f, "]")
    }
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!(
                "buffer of length {} cannot hold {}x{}",
                data.len(),
                rows,
                cols
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape_err!("row {} has {} entries, expected {}", i, r.len(), cols));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    /// Wraps row-major `data` of length `rows · cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err!("{} values for a {}x{} matrix", data.len(), rows, cols));
        }
        Ok(Self { rows, cols, data })
    }

    /// `diag(values)` as a dense square matrix.
    pub fn from_diagonal(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.data[i * n + i] = *v;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Returns `self` unchanged, or a [`Error::NonFinite`] naming `what`.
    pub fn ensure_finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(math::abs(*v)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        math::sqrt(self.data.iter().map(|v| v * v).sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape_err!(
                "matmul {}x{} by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            GemmOperand::plain(self),
            GemmOperand::plain(other),
            &mut out,
            0.0,
        );
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn matmul_tn(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(shape_err!(
                "matmul_tn {}x{} (transposed) by {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Self::zeros(self.cols, other.cols);
        gemm(
            GemmOperand::transposed(self),
            GemmOperand::plain(other),
            &mut out,
            0.0,
        );
        Ok(out)
    }

    /// `self · otherᵀ`.
    pub fn matmul_nt(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(shape_err!(
                "matmul_nt {}x{} by {}x{} (transposed)",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        gemm(
            GemmOperand::plain(self),
            GemmOperand::transposed(other),
            &mut out,
            0.0,
        );
        Ok(out)
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err!(
                "{} of {}x{} and {}x{}",
                op,
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) -> Result<()> {
        self.check_same_shape(other, "axpy")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&self, alpha: f64) -> Self {
        self.map(|v| alpha * v)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| f(*v)).collect(),
        }
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn relu_in_place(&mut self) {
        for v in &mut self.data {
            if *v <= 0.0 {
                *v = 0.0;
            }
        }
    }

    /// Multiplies column `j` by `alpha[j]`, i.e. `self · diag(alpha)`.
    pub fn scale_columns(&self, alpha: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.scale_columns_in_place(alpha)?;
        Ok(out)
    }

    pub fn scale_columns_in_place(&mut self, alpha: &[f64]) -> Result<()> {
        if alpha.len() != self.cols {
            return Err(shape_err!(
                "diagonal of length {} against {} columns",
                alpha.len(),
                self.cols
            ));
        }
        if self.cols == 0 {
            return Ok(());
        }
        for row in self.data.chunks_exact_mut(self.cols) {
            for (v, a) in row.iter_mut().zip(alpha) {
                *v *= a;
            }
        }
        Ok(())
    }

    /// Adds the `1 × cols` matrix `bias` to every row.
    pub fn add_row_broadcast(&self, bias: &Self) -> Result<Self> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(shape_err!(
                "row bias {}x{} against {}x{}",
                bias.rows,
                bias.cols,
                self.rows,
                self.cols
            ));
        }
        let mut out = self.clone();
        if self.cols > 0 {
            for row in out.data.chunks_exact_mut(self.cols) {
                for (v, b) in row.iter_mut().zip(&bias.data) {
                    *v += b;
                }
            }
        }
        Ok(out)
    }

    /// Column sums as a `1 × cols` matrix.
    pub fn column_sums(&self) -> Self {
        let mut out = Self::zeros(1, self.cols);
        if self.cols > 0 {
            for row in self.data.chunks_exact(self.cols) {
                for (o, v) in out.data.iter_mut().zip(row) {
                    *o += v;
                }
            }
        }
        out
    }

    /// Per-column variance across rows (population form), averaged over columns.
    pub fn mean_column_variance(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        let n = self.rows as f64;
        let means = self.column_sums().scale(1.0 / n);
        let mut var = vec![0.0; self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&means.data) {
                let d = v - m;
                *acc += d * d;
            }
        }
        var.iter().map(|v| v / n).sum::<f64>() / self.cols as f64
    }

    /// Columns shifted to zero mean and scaled by `1/sqrt(var + STANDARDIZE_EPS)`
    /// over the rows, with the per-column scale used.
    pub fn standardize_columns(&self) -> (Self, Vec<f64>) {
        let n = self.rows.max(1) as f64;
        let mean = self.column_sums().scale(1.0 / n);
        let mut var = vec![0.0; self.cols];
        for r in 0..self.rows {
            for ((v, x), m) in var.iter_mut().zip(self.row(r)).zip(mean.data()) {
                *v += (x - m) * (x - m);
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / math::sqrt(v / n + STANDARDIZE_EPS)).collect();
        let mut out = self.clone();
        for r in 0..self.rows {
            for ((o, m), s) in out.row_mut(r).iter_mut().zip(mean.data()).zip(&scale) {
                *o = (*o - m) * s;
            }
        }
        (out, scale)
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { rows: idx.len(), cols: self.cols, data }
    }

    /// Stacks matrices with equal column count on top of each other.
    pub fn vstack(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(shape_err!("vstack of widths {} and {}", cols, p.cols));
            }
            data.extend_from_slice(&p.data);
            rows += p.rows;
        }
        Ok(Self { rows, cols, data })
    }

    /// Index of the largest entry in each row (first one on ties).
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max(math::abs(a - b)))
    }
}

#[derive(Clone, Copy)]
struct GemmOperand<'a> {
    m: &'a DenseMatrix,
    transposed: bool,
}

impl<'a> GemmOperand<'a> {
    fn plain(m: &'a DenseMatrix) -> Self {
        Self { m, transposed: false }
    }

    fn transposed(m: &'a DenseMatrix) -> Self {
        Self { m, transposed: true }
    }

    fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.m.cols, self.m.rows)
        } else {
            (self.m.rows, self.m.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.m.cols as isize)
        } else {
            (self.m.cols as isize, 1)
        }
    }
}

/// `out = op(a) · op(b) + beta · out`.
fn gemm(a: GemmOperand<'_>, b: GemmOperand<'_>, out: &mut DenseMatrix, beta: f64) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    debug_assert_eq!(k, k2);
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out.data {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the strides describe in-bounds row-major buffers whose
    // dimensions were checked against `out` by the callers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.m.data.as_ptr(),
            rsa,
            csa,
            b.m.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out += a · b` without allocating.
pub fn matmul_accumulate(a: &DenseMatrix, b: &DenseMatrix, out: &mut DenseMatrix) -> Result<()> {
    if a.cols != b.rows || out.shape() != (a.rows, b.cols) {
        return Err(shape_err!(
            "matmul_accumulate {}x{} by {}x{} into {}x{}",
            a.rows,
            a.cols,
            b.rows,
            b.cols,
            out.rows,
            out.cols
        ));
    }
    gemm(GemmOperand::plain(a), GemmOperand::plain(b), out, 1.0);
    Ok(())
}
