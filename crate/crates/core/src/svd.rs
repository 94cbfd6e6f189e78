//! Singular values by Householder QR followed by one-sided (Hestenes)
//! Jacobi rotations, and the numerical rank built on them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::matrix::DenseMatrix;

/// Maximum number of Jacobi sweeps before giving up.
pub const MAX_SWEEPS: usize = 100;
/// A pair of columns counts as orthogonal once `|a·b| ≤ ORTHO_TOL·‖a‖‖b‖`.
pub const ORTHO_TOL: f64 = 1e-12;

/// How the cut-off between "signal" and "zero" singular values is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum TolPolicy {
    /// `max(rows, cols) · ε · σ_max`.
    #[default]
    Default,
    /// Fixed threshold on the singular values.
    Absolute(f64),
    /// `factor · σ_max`.
    Relative(f64),
}

impl TolPolicy {
    pub fn threshold(&self, rows: usize, cols: usize, sigma_max: f64) -> f64 {
        match *self {
            TolPolicy::Default => rows.max(cols) as f64 * f64::EPSILON * sigma_max,
            TolPolicy::Absolute(t) => t,
            TolPolicy::Relative(r) => r * sigma_max,
        }
    }
}

/// Singular values of `h` in descending order.
pub fn singular_values(h: &DenseMatrix) -> Result<Vec<f64>> {
    if !h.is_finite() {
        return Err(Error::NonFinite("singular value decomposition input"));
    }
    let (m, n) = h.shape();
    if m == 0 || n == 0 {
        return Ok(Vec::new());
    }
    let scale = h.max_abs();
    if scale == 0.0 {
        return Ok(vec![0.0; m.min(n)]);
    }
    // Column-major copy of the tall orientation, scaled to unit max entry
    // so squared norms cannot overflow.
    let inv = 1.0 / scale;
    let (rows, cols, mut a) = if m >= n {
        let mut a = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                a[c * m + r] = h.get(r, c) * inv;
            }
        }
        (m, n, a)
    } else {
        let mut a = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                a[r * n + c] = h.get(r, c) * inv;
            }
        }
        (n, m, a)
    };
    let mut cols_vec = if rows > cols {
        householder_r(&mut a, rows, cols)
    } else {
        a.chunks_exact(rows).map(|c| c.to_vec()).collect()
    };
    jacobi_orthogonalize(&mut cols_vec)?;
    let mut sv: Vec<f64> = cols_vec.iter().map(|c| scale * norm(c)).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    Ok(sv)
}

/// Number of singular values above the policy's threshold.
pub fn numerical_rank(h: &DenseMatrix, policy: TolPolicy) -> Result<usize> {
    let sv = singular_values(h)?;
    let Some(&sigma_max) = sv.first() else {
        return Ok(0);
    };
    if sigma_max == 0.0 {
        return Ok(0);
    }
    let tol = policy.threshold(h.rows(), h.cols(), sigma_max);
    Ok(sv.iter().filter(|&&s| s > tol).count())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

/// Reduces the column-major `rows × cols` matrix to its `cols × cols`
/// triangular factor and returns that factor's columns.
fn householder_r(a: &mut [f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut v = vec![0.0; rows];
    for k in 0..cols {
        let col = &a[k * rows..(k + 1) * rows];
        let x_norm = norm(&col[k..]);
        if x_norm == 0.0 {
            continue;
        }
        let alpha = if col[k] > 0.0 { -x_norm } else { x_norm };
        v[k..].copy_from_slice(&col[k..]);
        v[k] -= alpha;
        let v_norm_sq = dot(&v[k..], &v[k..]);
        if v_norm_sq == 0.0 {
            continue;
        }
        for j in k..cols {
            let cj = &mut a[j * rows..(j + 1) * rows];
            let f = 2.0 * dot(&v[k..], &cj[k..]) / v_norm_sq;
            for (c, vi) in cj[k..].iter_mut().zip(&v[k..]) {
                *c -= f * vi;
            }
        }
    }
    (0..cols)
        .map(|j| {
            let mut c = a[j * rows..j * rows + cols].to_vec();
            for x in c.iter_mut().skip(j + 1) {
                *x = 0.0;
            }
            c
        })
        .collect()
}

fn jacobi_orthogonalize(cols: &mut [Vec<f64>]) -> Result<()> {
    let n = cols.len();
    let mut norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    // Columns below this squared norm are numerically zero; rotating them
    // only shuffles rounding noise and may never settle.
    let negligible = f64::EPSILON * f64::EPSILON * norms.iter().sum::<f64>();
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                let gamma = dot(&cols[p], &cols[q]);
                if math::abs(gamma) <= ORTHO_TOL * math::sqrt(alpha * beta) {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (math::abs(zeta) + math::sqrt(1.0 + zeta * zeta));
                let c = 1.0 / math::sqrt(1.0 + t * t);
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                let (cp, cq) = (&mut left[p], &mut right[0]);
                for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
                    let xp = *x;
                    let yq = *y;
                    *x = c * xp - s * yq;
                    *y = s * xp + c * yq;
                }
                norms[p] = dot(cp, cp);
                norms[q] = dot(cq, cq);
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::Numerical(format!(
        "Jacobi SVD did not converge within {} sweeps",
        MAX_SWEEPS
    )))
}
