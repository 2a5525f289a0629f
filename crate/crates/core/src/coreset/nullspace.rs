//! Nullspace vectors of wide matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the elimination step finds `v != 0` with `A v = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NullspaceMethod {
    /// Gauss-Jordan elimination with pivot search along each row.
    #[default]
    Lu,
    /// Right singular vector of the smallest singular value. Reference path.
    Svd,
}

/// Relative threshold below which a reduced row is treated as dependent.
const PIVOT_TOLERANCE: f64 = 1e-13;

/// Returns a nonzero `v` with `A v = 0` for a row-major `rows x cols` matrix.
///
/// Rows are reduced one at a time; for each row the pivot is the largest
/// remaining entry among columns not yet used as pivots. This is partial
/// pivoting of `Aᵀ`. Every non-dependent row is normalized on its pivot
/// and the pivot column is cleared from all other rows, so the reduced
/// system reads `v[pivot_r] + Σ_f a[r][f] v[f] = 0`. The first free
/// column is set to 1 and the remaining free columns to 0.
pub fn nullspace_lu(a: &mut [f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), rows * cols);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = PIVOT_TOLERANCE * scale;

    let mut is_pivot = vec![false; cols];
    let mut pivots: Vec<(usize, usize)> = Vec::with_capacity(rows);

    for r in 0..rows {
        let row = &a[r * cols..(r + 1) * cols];
        let mut best = None;
        let mut best_abs = tol;
        for (c, &x) in row.iter().enumerate() {
            if !is_pivot[c] && x.abs() > best_abs {
                best_abs = x.abs();
                best = Some(c);
            }
        }
        let Some(pc) = best else { continue };

        let inv = 1.0 / a[r * cols + pc];
        for x in &mut a[r * cols..(r + 1) * cols] {
            *x *= inv;
        }
        a[r * cols + pc] = 1.0;

        for other in 0..rows {
            if other == r {
                continue;
            }
            let factor = a[other * cols + pc];
            if factor == 0.0 {
                continue;
            }
            let (src, dst) = if other < r {
                let (lo, hi) = a.split_at_mut(r * cols);
                (&hi[..cols], &mut lo[other * cols..(other + 1) * cols])
            } else {
                let (lo, hi) = a.split_at_mut(other * cols);
                (&lo[r * cols..(r + 1) * cols], &mut hi[..cols])
            };
            for (d, s) in dst.iter_mut().zip(src) {
                *d -= factor * s;
            }
            dst[pc] = 0.0;
        }

        is_pivot[pc] = true;
        pivots.push((r, pc));
    }

    let free = is_pivot.iter().position(|p| !p).ok_or(Error::NoNullspace)?;
    let mut v = vec![0.0; cols];
    v[free] = 1.0;
    for &(r, pc) in &pivots {
        v[pc] = -a[r * cols + free];
    }
    Ok(v)
}

/// SVD reference for [`nullspace_lu`]. The matrix is zero-padded to square
/// so that the full right singular basis is available.
pub fn nullspace_svd(a: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if cols <= rows {
        return Err(Error::NoNullspace);
    }
    let mut m = DMatrix::<f64>::zeros(cols, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = a[r * cols + c];
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t.ok_or(Error::NoNullspace)?;
    let (k, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .ok_or(Error::NoNullspace)?;
    Ok(v_t.row(k).iter().copied().collect())
}

/// Dispatches on `method`. `a` may be overwritten.
pub fn nullspace_vector(
    method: NullspaceMethod,
    a: &mut [f64],
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>> {
    match method {
        NullspaceMethod::Lu => nullspace_lu(a, rows, cols),
        NullspaceMethod::Svd => nullspace_svd(a, rows, cols),
    }
}
