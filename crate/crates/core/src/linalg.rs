//! Small dense helpers on top of nalgebra: rank-revealing SVD, orthonormal
//! bases for column and null spaces, and principal angles.

use nalgebra::{DMatrix, DVector};

/// Singular values together with the numerical rank they imply.
#[derive(Debug, Clone)]
pub struct RankInfo {
    pub rank: usize,
    pub singular_values: Vec<f64>,
    /// Some singular value sits within a factor 10 of the cut.
    pub unreliable: bool,
}

/// Numerical rank with a cut at `rel_tol * sigma_max`, floored by `abs_tol`.
///
/// A matrix whose largest singular value is at or below `abs_tol` has rank 0.
pub fn rank_info(m: &DMatrix<f64>, rel_tol: f64, abs_tol: f64) -> RankInfo {
    if m.nrows() == 0 || m.ncols() == 0 {
        return RankInfo { rank: 0, singular_values: vec![], unreliable: false };
    }
    let sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    let smax = sv.first().copied().unwrap_or(0.0);
    if smax <= abs_tol {
        let unreliable = smax > abs_tol / 10.0;
        return RankInfo { rank: 0, singular_values: sv, unreliable };
    }
    let cut = (rel_tol * smax).max(abs_tol);
    let rank = sv.iter().filter(|&&s| s > cut).count();
    let unreliable = sv.iter().any(|&s| s > cut / 10.0 && s < cut * 10.0);
    RankInfo { rank, singular_values: sv, unreliable }
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64, abs_tol: f64) -> DMatrix<f64> {
    let rows = m.nrows();
    if m.ncols() == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = m.clone().svd(true, false);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    if smax <= abs_tol {
        return DMatrix::zeros(rows, 0);
    }
    let cut = (rel_tol * smax).max(abs_tol);
    let u = svd.u.expect("u requested");
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > cut)
        .collect();
    DMatrix::from_fn(rows, keep.len(), |r, c| u[(r, keep[c])])
}

/// Orthonormal basis (as columns) of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64, abs_tol: f64) -> DMatrix<f64> {
    let cols = m.ncols();
    // Pad wide matrices so that the SVD returns a full right factor.
    let padded = if m.nrows() < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.view_mut((0, 0), (m.nrows(), cols)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = (rel_tol * smax).max(abs_tol);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] <= cut)
        .collect();
    DMatrix::from_fn(cols, keep.len(), |r, c| vt[(keep[c], r)])
}

/// Orthonormal basis of the span of the given columns.
pub fn orthonormalize(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    column_space(m, rel_tol, 0.0)
}

/// Cosines of the principal angles between two subspaces given by
/// orthonormal column bases, largest first.
pub fn principal_cosines(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    if a.ncols() == 0 || b.ncols() == 0 {
        return vec![];
    }
    let m = a.transpose() * b;
    m.svd(false, false).singular_values.iter().map(|s| s.min(1.0)).collect()
}

/// Largest principal angle (radians) between two subspaces of equal dimension.
///
/// Computed from the sine side, `σ_max((I − AAᵀ)·B)`, which stays accurate
/// for nearly equal subspaces.
pub fn max_principal_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.ncols(), b.ncols(), "subspaces of different dimension");
    if b.ncols() == 0 {
        return 0.0;
    }
    let r = b - a * (a.transpose() * b);
    let s = r.svd(false, false).singular_values.iter().copied().fold(0.0, f64::max);
    s.min(1.0).asin()
}

/// Orthogonal projector onto the span of orthonormal columns `q`.
pub fn projector(q: &DMatrix<f64>) -> DMatrix<f64> {
    q * q.transpose()
}

/// Distance of `v` from the span of orthonormal columns `q`.
pub fn distance_to_span(q: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if q.ncols() == 0 {
        return v.norm();
    }
    (v - q * (q.transpose() * v)).norm()
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}
