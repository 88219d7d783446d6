//! Small dense complex linear-algebra helpers shared by the solver modules.

use crate::{CMatrix, Complex64};
use ndarray::{concatenate, Axis};
use ndarray_linalg::{Determinant, Eig, Eigh, Inverse, SVD, UPLO};

pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);
#[cfg(test)]
pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);

pub(crate) fn identity(n: usize) -> CMatrix {
    CMatrix::eye(n)
}

pub(crate) fn adjoint(m: &CMatrix) -> CMatrix {
    m.t().mapv(|z| z.conj())
}

pub(crate) fn fro_norm(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Operator norm (largest singular value).
pub(crate) fn op_norm(m: &CMatrix) -> f64 {
    let (_, s, _) = m.svd(false, false).expect("svd failed");
    s.iter().cloned().fold(0.0, f64::max)
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Rank of `m` with singular values below `rel_tol * sigma_max` treated as
/// zero, together with orthonormal bases of the right kernel and row space
/// (columns of the returned matrices).
pub(crate) fn rank_split(m: &CMatrix, rel_tol: f64) -> (usize, CMatrix, CMatrix) {
    let (_, s, vh) = m.svd(false, true).expect("svd failed");
    let vh = vh.expect("right singular vectors requested");
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let rank = s.iter().filter(|&&x| x > cut && smax > 0.0).count();
    let v = adjoint(&vh);
    let row_space = v.slice(ndarray::s![.., ..rank]).to_owned();
    let kernel = v.slice(ndarray::s![.., rank..]).to_owned();
    (rank, kernel, row_space)
}

/// Moore-Penrose pseudo-inverse with the same relative cutoff as [`rank_split`].
pub(crate) fn pseudo_inverse(m: &CMatrix, rel_tol: f64) -> CMatrix {
    let (u, s, vh) = m.svd(true, true).expect("svd failed");
    let u = u.expect("left singular vectors requested");
    let vh = vh.expect("right singular vectors requested");
    let smax = s.iter().cloned().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let k = s.len();
    let mut sinv = CMatrix::zeros((vh.nrows(), u.ncols()));
    for j in 0..k {
        if s[j] > cut && smax > 0.0 {
            sinv[(j, j)] = Complex64::new(1.0 / s[j], 0.0);
        }
    }
    adjoint(&vh).dot(&sinv).dot(&adjoint(&u))
}

/// Orthogonal projector onto the span of the columns.
pub(crate) fn projector_onto(cols: &CMatrix) -> CMatrix {
    if cols.ncols() == 0 {
        return CMatrix::zeros((cols.nrows(), cols.nrows()));
    }
    cols.dot(&adjoint(cols))
}

pub(crate) fn horizontal_concat(a: &CMatrix, b: &CMatrix) -> CMatrix {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("concat failed")
}

pub(crate) fn determinant(m: &CMatrix) -> Complex64 {
    m.det().expect("determinant failed")
}

pub(crate) fn try_inverse(m: &CMatrix) -> Option<CMatrix> {
    m.inv().ok()
}

/// Eigenvalues and eigenvectors of a Hermitian matrix, ascending.
/// LAPACK rejects empty inputs, so size zero is handled directly.
pub(crate) fn eigh_ascending(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    if m.nrows() == 0 {
        return (Vec::new(), CMatrix::zeros((0, 0)));
    }
    let (w, v) = m.eigh(UPLO::Lower).expect("hermitian eigensolve failed");
    (w.to_vec(), v)
}

/// Eigenvalues and right eigenvectors of a general complex matrix.
pub(crate) fn eig_general(m: &CMatrix) -> (Vec<Complex64>, CMatrix) {
    let (w, v) = m.eig().expect("eigensolve failed");
    (w.to_vec(), v)
}

/// Dimension of the kernel of `m` with cutoff `tol * max(1, sigma_max)`.
/// The floor at one keeps the test meaningful when `m` is a difference of
/// norm-one operators that nearly vanishes as a whole. Ambiguity guard:
/// the smallest retained singular value must exceed the largest discarded
/// one by a factor `gap`.
pub(crate) fn kernel_dim_with_gap(m: &CMatrix, tol: f64, gap: f64) -> Result<usize, (f64, f64)> {
    let (_, s, _) = m.svd(false, false).expect("svd failed");
    let smax = s.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(m.ncols());
    }
    let cut = tol * smax.max(1.0);
    let mut zeros: Vec<f64> = s.iter().cloned().filter(|&x| x <= cut).collect();
    let kept_min = s.iter().cloned().filter(|&x| x > cut).fold(f64::INFINITY, f64::min);
    zeros.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let zero_max = zeros.last().cloned().unwrap_or(0.0);
    if zero_max > 0.0 && kept_min.is_finite() && kept_min < gap * zero_max {
        return Err((zero_max, kept_min));
    }
    Ok(zeros.len())
}
