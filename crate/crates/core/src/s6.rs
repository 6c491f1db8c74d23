//! The almost complex structure of the round `S⁶ ⊂ Im O = R⁷`, in a
//! stereographic chart.
//!
//! At `p ∈ S⁶` the tangent space is `p^⊥` and `J_p v = p × v`, with `×` the
//! octonionic cross product on imaginary octonions. The chart is the inverse
//! stereographic projection from the pole `e₇`:
//!
//! ```text
//! σ(y) = (2y, |y|² − 1) / (|y|² + 1),   y ∈ R⁶.
//! ```
//!
//! `σ` is conformal with factor `λ = 2/(1 + |y|²)`, so `Dσᵀ Dσ = λ² I` and
//! the chart structure is `J(y) = λ⁻² Dσᵀ C(σ(y)) Dσ`, where `C(p)` is the
//! matrix of `v ↦ p × v`.

use nalgebra::DMatrix;

use crate::field::{Domain, FnStructure};
use crate::model::acs_residual;

/// Oriented triples `(i, j, k)` with `e_i × e_j = e_k`, labels 1..=7.
pub const FANO_TRIPLES: [[usize; 3]; 7] = [[1, 2, 3], [1, 4, 5], [1, 7, 6], [2, 4, 6], [2, 5, 7], [3, 4, 7], [3, 6, 5]];

/// Finite-difference step used for derivatives of the chart structure.
pub const CHART_STEP: f64 = 1e-3;

/// `e_a × e_b` as a signed basis index (0-based), or `None` when `a = b`.
pub fn unit_cross(a: usize, b: usize) -> Option<(f64, usize)> {
    for t in FANO_TRIPLES {
        let t = t.map(|i| i - 1);
        for r in 0..3 {
            let (i, j, k) = (t[r], t[(r + 1) % 3], t[(r + 2) % 3]);
            if (a, b) == (i, j) {
                return Some((1.0, k));
            }
            if (a, b) == (j, i) {
                return Some((-1.0, k));
            }
        }
    }
    None
}

pub fn cross(u: &[f64; 7], v: &[f64; 7]) -> [f64; 7] {
    let mut out = [0.0; 7];
    for a in 0..7 {
        for b in 0..7 {
            if let Some((s, k)) = unit_cross(a, b) {
                out[k] += s * u[a] * v[b];
            }
        }
    }
    out
}

/// Matrix of `v ↦ p × v`.
pub fn cross_matrix(p: &[f64; 7]) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(7, 7);
    for a in 0..7 {
        for b in 0..7 {
            if let Some((s, k)) = unit_cross(a, b) {
                c[(k, b)] += s * p[a];
            }
        }
    }
    c
}

pub fn stereographic(y: &[f64]) -> [f64; 7] {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    let d = 1.0 + r2;
    let mut p = [0.0; 7];
    for i in 0..6 {
        p[i] = 2.0 * y[i] / d;
    }
    p[6] = (r2 - 1.0) / d;
    p
}

/// `Dσ(y)`, a `7×6` matrix.
pub fn stereographic_jacobian(y: &[f64]) -> DMatrix<f64> {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    let d = 1.0 + r2;
    let mut m = DMatrix::zeros(7, 6);
    for i in 0..6 {
        for j in 0..6 {
            let delta = if i == j { 1.0 } else { 0.0 };
            m[(i, j)] = 2.0 * delta / d - 4.0 * y[i] * y[j] / (d * d);
        }
        m[(6, i)] = 4.0 * y[i] / (d * d);
    }
    m
}

/// The chart structure at `y`.
pub fn j_in_chart(y: &[f64]) -> DMatrix<f64> {
    let r2: f64 = y.iter().map(|v| v * v).sum();
    let lambda = 2.0 / (1.0 + r2);
    let ds = stereographic_jacobian(y);
    ds.transpose() * cross_matrix(&stereographic(y)) * ds / (lambda * lambda)
}

pub type ChartFn = fn(&[f64]) -> DMatrix<f64>;

/// The chart structure on the cube `[-half_width, half_width]⁶`.
pub fn s6_structure(half_width: f64) -> FnStructure<ChartFn> {
    FnStructure::new(Domain::cube(6, -half_width, half_width), j_in_chart as ChartFn, CHART_STEP)
}

/// Largest `‖J² + I‖∞` over a `k⁶` grid on the cube.
pub fn grid_acs_residual(half_width: f64, k: usize) -> f64 {
    let axis: Vec<f64> =
        (0..k).map(|i| if k == 1 { 0.0 } else { -half_width + 2.0 * half_width * i as f64 / (k - 1) as f64 }).collect();
    let mut worst: f64 = 0.0;
    let mut idx = [0usize; 6];
    loop {
        let y: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        worst = worst.max(acs_residual(&j_in_chart(&y)));
        let mut c = 0;
        while c < 6 {
            idx[c] += 1;
            if idx[c] < k {
                break;
            }
            idx[c] = 0;
            c += 1;
        }
        if c == 6 {
            return worst;
        }
    }
}
