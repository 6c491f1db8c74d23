//! Complex 2-planes of `(R⁶, J)` as points of `CP²` in affine charts, real
//! quadrics through chart points, and the variety of planes invariant under
//! a Nijenhuis tensor.
//!
//! A complex 2-plane `W` is recorded through its annihilator: the complex
//! functional `α` (up to scale) with `ker α = W`, written in the complex
//! coordinates of the J-adapted frame. Chart `k` normalizes `α_k = 1` and
//! keeps the other two entries as four reals.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::jacobian_fd;
use crate::linalg::{self, rank_info};
use crate::model::{ComplexSubspace, CsMatrix, NTensor};
use crate::Tolerances;

/// Number of coefficients of an inhomogeneous quadratic in four variables.
pub const QUADRIC_TERMS: usize = 15;

/// Smallest modulus accepted for the normalizing coordinate of a chart.
pub const CHART_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrChartPoint {
    /// Index (0, 1 or 2) of the annihilator coordinate normalized to 1.
    pub chart_index: usize,
    /// Real and imaginary parts of the two remaining coordinates, in
    /// increasing index order.
    pub coords: [f64; 4],
}

impl GrChartPoint {
    /// The annihilator `α` with `α[chart_index] = 1`.
    pub fn homogeneous(&self) -> [Complex64; 3] {
        let mut a = [Complex64::new(1.0, 0.0); 3];
        let others = others(self.chart_index);
        a[others[0]] = Complex64::new(self.coords[0], self.coords[1]);
        a[others[1]] = Complex64::new(self.coords[2], self.coords[3]);
        a
    }

    fn from_homogeneous(alpha: &[Complex64; 3], chart_index: usize) -> Result<GrChartPoint> {
        let norm = alpha.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let d = alpha[chart_index];
        if !(d.norm() >= CHART_FLOOR * norm) {
            return Err(Error::SingularConfiguration(format!(
                "plane lies at infinity of chart {chart_index} (|normalizing coordinate| = {:.3e})",
                d.norm() / norm
            )));
        }
        let o = others(chart_index);
        let a = alpha[o[0]] / d;
        let b = alpha[o[1]] / d;
        Ok(GrChartPoint { chart_index, coords: [a.re, a.im, b.re, b.im] })
    }

    /// The same plane in another chart.
    pub fn to_chart(&self, chart_index: usize) -> Result<GrChartPoint> {
        if chart_index > 2 {
            return Err(Error::Argument(format!("chart index {chart_index} out of range 0..3")));
        }
        Self::from_homogeneous(&self.homogeneous(), chart_index)
    }
}

fn others(k: usize) -> [usize; 2] {
    match k {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}

/// Complex coordinates on `(R⁶, J)` from the adapted frame.
struct ComplexChart {
    frame: DMatrix<f64>,
    inv: DMatrix<f64>,
}

impl ComplexChart {
    fn new(j: &CsMatrix) -> Result<Self> {
        if j.dim() != 6 {
            return Err(Error::Dimension(format!("complex 2-planes in CP² need dimension 6, got {}", j.dim())));
        }
        let frame = j.adapted_frame();
        let inv = frame.clone().try_inverse().expect("adapted frame is a basis");
        Ok(ComplexChart { frame, inv })
    }

    fn to_complex(&self, v: &DVector<f64>) -> [Complex64; 3] {
        let c = &self.inv * v;
        std::array::from_fn(|p| Complex64::new(c[2 * p], c[2 * p + 1]))
    }

    fn to_real(&self, z: &[Complex64; 3]) -> DVector<f64> {
        let c = DVector::from_fn(6, |r, _| if r % 2 == 0 { z[r / 2].re } else { z[r / 2].im });
        &self.frame * c
    }

    /// Two complex vectors spanning `ker α`, smooth in the chart coordinates.
    fn kernel_pair(&self, alpha: &[Complex64; 3], k: usize) -> [[Complex64; 3]; 2] {
        let zero = Complex64::new(0.0, 0.0);
        let o = others(k);
        std::array::from_fn(|t| {
            let mut w = [zero; 3];
            w[o[t]] = Complex64::new(1.0, 0.0);
            w[k] = -alpha[o[t]] / alpha[k];
            w
        })
    }
}

fn check_plane(w: &ComplexSubspace) -> Result<()> {
    if w.ambient_dim() != 6 || w.real_dim() != 4 {
        return Err(Error::Argument(format!(
            "expected a complex 2-plane in R^6, got real dimension {} in R^{}",
            w.real_dim(),
            w.ambient_dim()
        )));
    }
    let r = w.invariance_residual();
    if r > 1e-8 {
        return Err(Error::Argument(format!("plane is not J-invariant (residual {r:.3e})")));
    }
    Ok(())
}

/// Annihilator of a complex 2-plane, unit norm.
fn annihilator(w: &ComplexSubspace) -> Result<[Complex64; 3]> {
    check_plane(w)?;
    let chart = ComplexChart::new(w.structure())?;
    let cols: Vec<[Complex64; 3]> = w.basis().column_iter().map(|c| chart.to_complex(&c.into_owned())).collect();
    let m = DMatrix::from_fn(3, cols.len(), |r, c| cols[c][r]);
    let svd = m.svd(true, false);
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|a, b| sv[*b].partial_cmp(&sv[*a]).expect("finite singular values"));
    let (s1, s2) = (sv[order[0]], sv[order[1]]);
    let s3 = if sv.len() > 2 { sv[order[2]] } else { 0.0 };
    if s2 < 1e-8 * s1 || s3 > 1e-8 * s1 {
        return Err(Error::Argument("plane basis is numerically dependent over C".into()));
    }
    let u = svd.u.expect("u requested");
    // the left singular vector for the smallest singular value is Hermitian
    // orthogonal to the plane; its conjugate annihilates it bilinearly
    let missing = (0..3).find(|c| !order[..2].contains(c)).expect("three left singular vectors");
    Ok(std::array::from_fn(|r| u[(r, missing)].conj()))
}

/// Chart point of a complex 2-plane, normalizing the largest coordinate.
pub fn plane_to_chart(w: &ComplexSubspace) -> Result<GrChartPoint> {
    let alpha = annihilator(w)?;
    let k = (0..3)
        .max_by(|a, b| alpha[*a].norm().partial_cmp(&alpha[*b].norm()).expect("finite"))
        .expect("three coordinates");
    GrChartPoint::from_homogeneous(&alpha, k)
}

/// The complex 2-plane `ker α` for a chart point.
pub fn chart_to_plane(p: &GrChartPoint, j: &CsMatrix) -> Result<ComplexSubspace> {
    if p.chart_index > 2 {
        return Err(Error::Argument(format!("chart index {} out of range 0..3", p.chart_index)));
    }
    let chart = ComplexChart::new(j)?;
    let alpha = p.homogeneous();
    let [w1, w2] = chart.kernel_pair(&alpha, p.chart_index);
    Ok(ComplexSubspace::complex_span(&[chart.to_real(&w1), chart.to_real(&w2)], j))
}

/// Moves every point to the chart whose smallest normalizing coordinate
/// (over the set, after scaling each annihilator to unit norm) is largest.
pub fn to_common_chart(points: &[GrChartPoint]) -> Result<Vec<GrChartPoint>> {
    if points.is_empty() {
        return Ok(vec![]);
    }
    let units: Vec<[Complex64; 3]> = points
        .iter()
        .map(|p| {
            let a = p.homogeneous();
            let n = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            a.map(|z| z / n)
        })
        .collect();
    let best = (0..3)
        .map(|k| (k, units.iter().map(|a| a[k].norm()).fold(f64::INFINITY, f64::min)))
        .max_by(|a, b| a.1.partial_cmp(&b.1).expect("finite"))
        .expect("three charts");
    if best.1 < CHART_FLOOR {
        return Err(Error::SingularConfiguration(format!(
            "no chart holds every point: best chart {} has normalizing coordinate {:.3e}",
            best.0, best.1
        )));
    }
    points.iter().map(|p| p.to_chart(best.0)).collect()
}

/// `Σ c_t · m_t(x)` over the monomials `1, x_i, x_i x_j (i ≤ j)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuadricModel {
    pub coeffs: [f64; QUADRIC_TERMS],
}

/// The monomials in the coefficient order of [`QuadricModel`].
pub fn veronese(x: &[f64; 4]) -> [f64; QUADRIC_TERMS] {
    let mut out = [0.0; QUADRIC_TERMS];
    out[0] = 1.0;
    out[1..5].copy_from_slice(x);
    let mut t = 5;
    for i in 0..4 {
        for j in i..4 {
            out[t] = x[i] * x[j];
            t += 1;
        }
    }
    out
}

impl QuadricModel {
    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        veronese(x).iter().zip(&self.coeffs).map(|(m, c)| m * c).sum()
    }

    /// `Σ x_i² − 1`.
    pub fn unit_sphere() -> QuadricModel {
        let mut coeffs = [0.0; QUADRIC_TERMS];
        coeffs[0] = -1.0;
        for (t, (i, j)) in quadratic_pairs().enumerate() {
            if i == j {
                coeffs[5 + t] = 1.0;
            }
        }
        QuadricModel { coeffs }
    }

    /// Largest `|cos|` of the angle between coefficient vectors.
    pub fn alignment(&self, other: &QuadricModel) -> f64 {
        let dot: f64 = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum();
        let na = self.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nb = other.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt();
        (dot / (na * nb)).abs()
    }
}

fn quadratic_pairs() -> impl Iterator<Item = (usize, usize)> {
    (0..4).flat_map(|i| (i..4).map(move |j| (i, j)))
}

fn same_chart(points: &[GrChartPoint]) -> Result<()> {
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.chart_index != first.chart_index) {
            return Err(Error::Argument("points come from different charts; use to_common_chart".into()));
        }
    }
    Ok(())
}

/// `k×15` design matrix of the points.
pub fn design_matrix(points: &[GrChartPoint]) -> DMatrix<f64> {
    let rows: Vec<[f64; QUADRIC_TERMS]> = points.iter().map(|p| veronese(&p.coords)).collect();
    DMatrix::from_fn(rows.len(), QUADRIC_TERMS, |r, c| rows[r][c])
}

/// Numerical rank of the design matrix.
pub fn design_rank(points: &[GrChartPoint], tol: &Tolerances) -> Result<usize> {
    same_chart(points)?;
    Ok(rank_info(&design_matrix(points), tol.rank, tol.zero).rank)
}

/// A quadric vanishing at every point, when one exists (design rank < 15).
pub fn quadric_through(points: &[GrChartPoint], tol: &Tolerances) -> Result<Option<QuadricModel>> {
    if points.is_empty() {
        return Err(Error::Argument("need at least one point".into()));
    }
    same_chart(points)?;
    let d = design_matrix(points);
    if rank_info(&d, tol.rank, tol.zero).rank == QUADRIC_TERMS {
        return Ok(None);
    }
    // pad to a square matrix so the SVD returns every right singular vector
    let mut padded = DMatrix::zeros(d.nrows().max(QUADRIC_TERMS), QUADRIC_TERMS);
    padded.view_mut((0, 0), (d.nrows(), QUADRIC_TERMS)).copy_from(&d);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let smallest = (0..QUADRIC_TERMS)
        .min_by(|a, b| svd.singular_values[*a].partial_cmp(&svd.singular_values[*b]).expect("finite"))
        .expect("fifteen singular values");
    let q = QuadricModel { coeffs: std::array::from_fn(|c| vt[(smallest, c)]) };
    let residual = points.iter().map(|p| q.eval(&p.coords).abs()).fold(0.0, f64::max);
    let scale = linalg::max_abs(&d).max(1.0);
    if residual > 1e-8 * scale {
        return Err(Error::SingularConfiguration(format!("best quadric misses the points by {residual:.3e}")));
    }
    Ok(Some(q))
}

/// Dimension of the space of quadrics through the points.
pub fn quadric_space_dim(points: &[GrChartPoint], tol: &Tolerances) -> Result<usize> {
    Ok(QUADRIC_TERMS - design_rank(points, tol)?)
}

/// True iff no real quadric passes through all points.
pub fn quadratically_nondegenerate(points: &[GrChartPoint], tol: &Tolerances) -> Result<bool> {
    if points.len() < QUADRIC_TERMS {
        return Err(Error::Argument(format!(
            "{} points always lie on a real quadric; at least 15 are needed",
            points.len()
        )));
    }
    Ok(design_rank(points, tol)? == QUADRIC_TERMS)
}

fn check_tensor(n: &NTensor) -> Result<()> {
    if n.dim() != 6 {
        return Err(Error::Dimension(format!("invariant planes are implemented for n = 3, got dimension {}", n.dim())));
    }
    Ok(())
}

/// Distance of `N(w₁, w₂)` from `W`, relative to `max|N|·|w₁|·|w₂|`, for
/// `w₁, w₂` complex-independent in `W`.
pub fn invariance_defect(n: &NTensor, w: &ComplexSubspace) -> Result<f64> {
    check_tensor(n)?;
    check_plane(w)?;
    let scale = n.max_abs();
    if scale == 0.0 {
        return Ok(0.0);
    }
    let b = w.basis();
    let w1 = b.column(0).into_owned();
    let line = ComplexSubspace::complex_span(std::slice::from_ref(&w1), n.structure());
    let w2 = (1..4)
        .map(|c| {
            let v = b.column(c).into_owned();
            &v - line.projector() * &v
        })
        .max_by(|a, b| a.norm().partial_cmp(&b.norm()).expect("finite"))
        .expect("three more basis vectors");
    let v = n.apply(&w1, &w2);
    Ok(linalg::distance_to_span(b, &v) / (scale * w1.norm() * w2.norm()))
}

/// `N(W, W) ⊂ W`.
pub fn is_invariant_plane(n: &NTensor, w: &ComplexSubspace, tol: &Tolerances) -> Result<bool> {
    Ok(invariance_defect(n, w)? <= tol.alg)
}

/// `α(N(w₁, w₂))` for the kernel pair of a chart point, as two reals.
fn defect_map(n: &NTensor, chart: &ComplexChart, k: usize, x: &[f64]) -> DVector<f64> {
    let p = GrChartPoint { chart_index: k, coords: [x[0], x[1], x[2], x[3]] };
    let alpha = p.homogeneous();
    let [w1, w2] = chart.kernel_pair(&alpha, k);
    let v = n.apply(&chart.to_real(&w1), &chart.to_real(&w2));
    let z = chart.to_complex(&v);
    let s: Complex64 = alpha.iter().zip(&z).map(|(a, b)| a * b).sum();
    DVector::from_vec(vec![s.re, s.im])
}

#[derive(Debug, Clone)]
pub struct SamplerOptions {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Chart distance under which two hits count as the same plane.
    pub dedupe: f64,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions { restarts: 200, max_iterations: 60, dedupe: 1e-6 }
    }
}

/// Invariant planes found by damped Gauss–Newton on `α(N(w₁, w₂)) = 0`
/// from random chart starts. Empty when the variety is empty or missed.
pub fn invariant_plane_sampler(n: &NTensor, seed: u64, tol: &Tolerances) -> Result<Vec<GrChartPoint>> {
    invariant_plane_sampler_with(n, seed, tol, &SamplerOptions::default())
}

pub fn invariant_plane_sampler_with(
    n: &NTensor,
    seed: u64,
    tol: &Tolerances,
    opts: &SamplerOptions,
) -> Result<Vec<GrChartPoint>> {
    check_tensor(n)?;
    let scale = n.max_abs();
    if scale <= tol.zero {
        return Err(Error::DegenerateInput("the Nijenhuis tensor vanishes".into()));
    }
    let unit = NTensor::from_fn(n.structure().clone(), |k, i, j| n.get(k, i, j) / scale);
    let chart = ComplexChart::new(n.structure())?;
    let mut starts_rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<(usize, [f64; 4])> = (0..opts.restarts)
        .map(|_| (starts_rng.gen_range(0..3), std::array::from_fn(|_| starts_rng.gen_range(-1.0..1.0))))
        .collect();
    let hits: Vec<Option<GrChartPoint>> = starts
        .par_iter()
        .map(|(k, x0)| newton(&unit, &chart, *k, x0, opts.max_iterations))
        .collect();
    let mut out: Vec<GrChartPoint> = Vec::new();
    for p in hits.into_iter().flatten() {
        let w = match chart_to_plane(&p, n.structure()) {
            Ok(w) => w,
            Err(_) => continue,
        };
        if !is_invariant_plane(n, &w, tol)? {
            continue;
        }
        let p = match plane_to_chart(&w) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if !out.iter().any(|q| same_plane(q, &p, opts.dedupe)) {
            out.push(p);
        }
    }
    Ok(out)
}

fn same_plane(a: &GrChartPoint, b: &GrChartPoint, dist: f64) -> bool {
    match b.to_chart(a.chart_index) {
        Ok(b) => a.coords.iter().zip(&b.coords).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() < dist,
        Err(_) => false,
    }
}

fn newton(n: &NTensor, chart: &ComplexChart, k: usize, x0: &[f64; 4], iters: usize) -> Option<GrChartPoint> {
    let f = |x: &[f64]| defect_map(n, chart, k, x);
    let mut x = DVector::from_row_slice(x0);
    let mut fx = f(x.as_slice());
    for _ in 0..iters {
        let norm = fx.norm();
        if norm < 1e-14 {
            break;
        }
        let jac = jacobian_fd(&f, x.as_slice(), 1e-6);
        // minimum-norm step for the underdetermined system
        let jjt = &jac * jac.transpose();
        let step = {
            let inv = jjt.try_inverse()?;
            jac.transpose() * (inv * &fx)
        };
        let mut t = 1.0;
        loop {
            let trial = &x - &step * t;
            let ft = f(trial.as_slice());
            if ft.norm() < norm {
                x = trial;
                fx = ft;
                break;
            }
            t *= 0.5;
            if t < 1e-6 {
                return None;
            }
        }
        if x.norm() > 1e6 {
            return None;
        }
    }
    if fx.norm() > 1e-12 {
        return None;
    }
    Some(GrChartPoint { chart_index: k, coords: [x[0], x[1], x[2], x[3]] })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Certificate {
    /// Quadratically nondegenerate invariant planes with `N ≠ 0`: impossible
    /// if the theory holds, so a numerical inconsistency.
    Contradiction,
    /// Quadratically nondegenerate planes and `N = 0`.
    IntegrableCertified,
    /// The planes lie on a real quadric, or there are fewer than 15.
    Inconclusive,
}

impl std::fmt::Display for Certificate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Certificate::Contradiction => "CONTRADICTION",
            Certificate::IntegrableCertified => "INTEGRABLE_CERTIFIED",
            Certificate::Inconclusive => "INCONCLUSIVE",
        })
    }
}

/// Verdict on a family of invariant planes of `N`.
pub fn invariant_plane_certificate(n: &NTensor, planes: &[ComplexSubspace], tol: &Tolerances) -> Result<Certificate> {
    check_tensor(n)?;
    for (i, w) in planes.iter().enumerate() {
        if !is_invariant_plane(n, w, tol)? {
            return Err(Error::Argument(format!("plane {i} is not invariant under N")));
        }
    }
    if planes.len() < QUADRIC_TERMS {
        return Ok(Certificate::Inconclusive);
    }
    let pts: Vec<GrChartPoint> = planes.iter().map(plane_to_chart).collect::<Result<_>>()?;
    let pts = to_common_chart(&pts)?;
    if !quadratically_nondegenerate(&pts, tol)? {
        return Ok(Certificate::Inconclusive);
    }
    Ok(if n.max_abs() > tol.alg { Certificate::Contradiction } else { Certificate::IntegrableCertified })
}
