//! Inverted dropout masks stored as bitsets.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{shape_err, Result};
use crate::matrix::DenseMatrix;
use crate::rng::Stream;

/// Kept entries are multiplied by `scale`, dropped ones are zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    rows: usize,
    cols: usize,
    bits: Vec<u64>,
    scale: f64,
}

impl DropoutMask {
    /// Keeps each entry with probability `1 - rate`. `rate` must be in `[0, 1)`.
    pub fn sample(stream: &mut Stream, rows: usize, cols: usize, rate: f64) -> Self {
        debug_assert!((0.0..1.0).contains(&rate));
        let mut mask = Self::all(rows, cols, 1.0 / (1.0 - rate));
        if rate > 0.0 {
            for i in 0..rows * cols {
                if stream.uniform() < rate {
                    mask.clear(i);
                }
            }
        }
        mask
    }

    /// Keeps everything with the given scale.
    pub fn all(rows: usize, cols: usize, scale: f64) -> Self {
        let n = rows * cols;
        let mut bits = vec![u64::MAX; n.div_ceil(64)];
        if !n.is_multiple_of(64) {
            if let Some(last) = bits.last_mut() {
                *last = (1u64 << (n % 64)) - 1;
            }
        }
        Self { rows, cols, bits, scale }
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        self.scale
    }

    #[inline]
    pub fn kept(&self, i: usize) -> bool {
        self.bits[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        self.bits[i / 64] &= !(1u64 << (i % 64));
    }

    pub fn count_kept(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    /// Approximate storage in `f64` units.
    pub fn storage_floats(&self) -> usize {
        self.bits.len()
    }

    pub fn apply(&self, h: &DenseMatrix) -> Result<DenseMatrix> {
        let mut out = h.clone();
        self.apply_in_place(&mut out)?;
        Ok(out)
    }

    pub fn apply_in_place(&self, h: &mut DenseMatrix) -> Result<()> {
        if h.shape() != self.shape() {
            return Err(shape_err!(
                "dropout mask {}x{} against {}x{}",
                self.rows,
                self.cols,
                h.rows(),
                h.cols()
            ));
        }
        for (i, v) in h.data_mut().iter_mut().enumerate() {
            *v = if self.kept(i) { *v * self.scale } else { 0.0 };
        }
        Ok(())
    }
}
