//! Invariants special to real dimension 4: the characteristic plane field
//! `Π² = image N`, its derived rank-3 distribution, the canonical frame
//! `ξ₁..ξ₄` and the structure functions of that frame.
//!
//! Frame fields are evaluated on nested central-difference stencils around
//! the base point. Every discrete choice (which bracket spans `Π²`, which
//! reference vector is projected, which square-root branch is taken) is made
//! once at the base point and reused at every stencil point, so the fields
//! are smooth across the stencil.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{self, central_difference, JField};
use crate::linalg;
use crate::model::{self, ComplexSubspace, CsMatrix, NTensor};
use crate::Tolerances;

/// Default stencil step, relative to the longest side of the domain.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Minimal length of the projected reference vector before the next
/// reference in the cycle is tried.
const REFERENCE_FLOOR: f64 = 0.3;

/// Index pairs `(i, j)`, `i < j`, in the order used by coefficient tables.
pub const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// Under the sign flip `ξ₁, ξ₂ ↦ −ξ₁, −ξ₂` the coefficient `c_ij^k`
/// changes by `s_i·s_j·s_k` with `s = (−1, −1, 1, 1)`.
pub const FLIP_SIGNS: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];

#[derive(Debug, Clone)]
pub struct FrameOptions {
    /// Stencil step as a fraction of the domain size.
    pub step: f64,
    /// Reference vectors tried in order when choosing the section of `Π²`.
    pub references: Vec<DVector<f64>>,
}

impl Default for FrameOptions {
    fn default() -> Self {
        FrameOptions {
            step: DEFAULT_STEP,
            references: (0..4).map(|i| DVector::from_fn(4, |r, _| if r == i { 1.0 } else { 0.0 })).collect(),
        }
    }
}

/// Residuals of a computed frame; all are relative to the size of the
/// vector being tested.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FrameResiduals {
    /// Distance of `ξ₁` from `Π²`.
    pub in_char: f64,
    /// Distance of `ξ₃` from `Π³`.
    pub in_derived: f64,
    /// `N(ξ₁, ξ₃) − ξ₁`.
    pub normalization: f64,
    /// `[ξ₁, ξ₂] − ξ₃`, the bracket recomputed with a doubled step.
    pub bracket: f64,
    /// Largest deviation of the `(1,2)` coefficient row from `(0, 0, 1, 0)`.
    pub first_row: f64,
}

impl FrameResiduals {
    pub fn max(&self) -> f64 {
        [self.in_char, self.in_derived, self.normalization, self.bracket, self.first_row]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Frame4 {
    pub point: Vec<f64>,
    /// `ξ₁..ξ₄` as real 4-vectors.
    #[serde(serialize_with = "ser_vectors")]
    pub xi: [DVector<f64>; 4],
    pub sign: i32,
    /// Coefficients of `[ξ₁, ξ₂]` in the frame.
    pub first_row: [f64; 4],
    pub residuals: FrameResiduals,
}

fn ser_vectors<S: serde::Serializer>(v: &[DVector<f64>; 4], s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(4))?;
    for x in v {
        seq.serialize_element(x.as_slice())?;
    }
    seq.end()
}

impl Frame4 {
    /// The frame as columns of a 4×4 matrix.
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.xi)
    }

    pub fn check(&self, tol: &Tolerances) -> bool {
        self.residuals.max() <= tol.frame
    }
}

/// Structure functions `[ξ_i, ξ_j] = c_ij^k ξ_k` of the canonical frame.
#[derive(Debug, Clone, Serialize)]
pub struct StructureFunctions {
    /// The frame for `sign = +1`, which fixes the reported coefficients.
    pub frame: Frame4,
    /// `coefficients[p][k] = c_ij^k` for `(i, j) = PAIRS[p]`.
    pub coefficients: [[f64; 4]; 6],
    /// `parity[p][k]`: factor picked up by `c_ij^k` under the sign flip.
    pub parity: [[f64; 4]; 6],
    /// Residuals of the eight relations fixed by the construction: the
    /// `(1,2)` row equals `(0,0,1,0)` and
    /// `c_24 − J₀·c_23 − J₀·c_14 − c_13 = (1,0,0,0)`, the frame form of
    /// `N(ξ₁, ξ₃) = ξ₁`.
    pub pinned: [f64; 8],
}

impl StructureFunctions {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        let (sgn, p) = match PAIRS.iter().position(|&q| q == (i, j)) {
            Some(p) => (1.0, p),
            None => (-1.0, PAIRS.iter().position(|&q| q == (j, i)).expect("index pair below 4")),
        };
        sgn * self.coefficients[p][k]
    }

    /// Coefficients expressed for the flipped frame.
    pub fn flipped(&self) -> [[f64; 4]; 6] {
        let mut c = self.coefficients;
        for (p, row) in c.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v *= self.parity[p][k];
            }
        }
        c
    }

    pub fn max_pinned_residual(&self) -> f64 {
        self.pinned.iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

fn parity_table() -> [[f64; 4]; 6] {
    let mut t = [[0.0; 4]; 6];
    for (p, &(i, j)) in PAIRS.iter().enumerate() {
        for k in 0..4 {
            t[p][k] = FLIP_SIGNS[i] * FLIP_SIGNS[j] * FLIP_SIGNS[k];
        }
    }
    t
}

fn check_dim<F: JField + ?Sized>(s: &F) -> Result<()> {
    if s.dim() != 4 {
        return Err(Error::Dimension(format!("this invariant needs dimension 4, got {}", s.dim())));
    }
    Ok(())
}

fn nonzero_tensor<F: JField + ?Sized>(s: &F, x: &[f64], tol: &Tolerances) -> Result<NTensor> {
    check_dim(s)?;
    let n = field::nijenhuis_at(s, x, tol.field)?;
    if n.max_abs() <= tol.field {
        return Err(Error::DegenerateInput(format!("the Nijenhuis tensor vanishes at {x:?}")));
    }
    Ok(n)
}

/// `Π²(x)`, the image of the Nijenhuis tensor: a complex line.
pub fn char_distribution<F: JField + ?Sized>(s: &F, x: &[f64], tol: &Tolerances) -> Result<ComplexSubspace> {
    let n = nonzero_tensor(s, x, tol)?;
    let img = model::image(&n, tol);
    if img.real_dim() != 2 {
        return Err(Error::NonGeneric { what: "image of the Nijenhuis tensor".into(), rank: img.real_dim() });
    }
    Ok(img)
}

/// Span of a 2-plane field and the bracket of two of its sections at `x`.
///
/// `first` and `second` must span the plane near `x`. Fails with the
/// computed rank 2 when the bracket lies in the plane up to
/// `tol_frame · max(1, |bracket|)`.
pub fn derived_from_sections(
    first: &dyn Fn(&[f64]) -> DVector<f64>,
    second: &dyn Fn(&[f64]) -> DVector<f64>,
    x: &[f64],
    h: f64,
    tol_frame: f64,
) -> Result<DMatrix<f64>> {
    let plane = linalg::orthonormalize(&DMatrix::from_columns(&[first(x), second(x)]), 1e-10);
    if plane.ncols() != 2 {
        return Err(Error::NonGeneric { what: "sections do not span a plane".into(), rank: plane.ncols() });
    }
    let w = field::lie_bracket_fd(first, second, x, h);
    span_with_bracket(&plane, &w, tol_frame)
}

fn span_with_bracket(plane: &DMatrix<f64>, w: &DVector<f64>, tol_frame: f64) -> Result<DMatrix<f64>> {
    let off = linalg::distance_to_span(plane, w);
    if off <= tol_frame * w.norm().max(1.0) {
        return Err(Error::NonGeneric { what: "derived distribution".into(), rank: 2 });
    }
    let cols: Vec<DVector<f64>> = plane.column_iter().map(|c| c.into_owned()).chain([w.clone()]).collect();
    Ok(linalg::orthonormalize(&DMatrix::from_columns(&cols), 1e-12))
}

/// `Π³(x) = Π² + [Π², Π²]` as an orthonormal 4×3 basis.
pub fn derived_distribution<F: JField + ?Sized>(s: &F, x: &[f64], tol: &Tolerances) -> Result<DMatrix<f64>> {
    derived_distribution_with(s, x, tol, &FrameOptions::default())
}

pub fn derived_distribution_with<F: JField + ?Sized>(
    s: &F,
    x: &[f64],
    tol: &Tolerances,
    opts: &FrameOptions,
) -> Result<DMatrix<f64>> {
    let st = Stencil::new(s, x, tol, opts, 1.0)?;
    Ok(st.derived)
}

/// The frame `ξ₁..ξ₄` at `x`: `ξ₁ ∈ Π²` with `N(ξ₁, ξ₃) = ξ₁`,
/// `ξ₂ = Jξ₁`, `ξ₃ = [ξ₁, ξ₂]`, `ξ₄ = Jξ₃`. `sign = −1` gives the other
/// of the two solutions.
pub fn canonical_frame<F: JField + ?Sized>(s: &F, x: &[f64], sign: i32, tol: &Tolerances) -> Result<Frame4> {
    canonical_frame_with(s, x, sign, tol, &FrameOptions::default())
}

pub fn canonical_frame_with<F: JField + ?Sized>(
    s: &F,
    x: &[f64],
    sign: i32,
    tol: &Tolerances,
    opts: &FrameOptions,
) -> Result<Frame4> {
    let sgn = match sign {
        1 => 1.0,
        -1 => -1.0,
        _ => return Err(Error::Argument(format!("sign must be +1 or -1, got {sign}"))),
    };
    let st = Stencil::new(s, x, tol, opts, sgn)?;
    Ok(st.frame4(sign))
}

/// Structure functions of the canonical frame, reported for `sign = +1`.
pub fn maurer_cartan<F: JField + ?Sized>(s: &F, x: &[f64], tol: &Tolerances) -> Result<StructureFunctions> {
    maurer_cartan_with(s, x, tol, &FrameOptions::default())
}

pub fn maurer_cartan_with<F: JField + ?Sized>(
    s: &F,
    x: &[f64],
    tol: &Tolerances,
    opts: &FrameOptions,
) -> Result<StructureFunctions> {
    let st = Stencil::new(s, x, tol, opts, 1.0)?;
    let frame = st.frame4(1);
    let frame_at = |y: &[f64]| st.frame_fields(y);
    let f0 = frame.matrix();
    let derivs: Vec<DMatrix<f64>> = (0..4).map(|a| central_difference(frame_at, x, a, st.h)).collect();
    let lu = f0.clone().lu();
    let mut coefficients = [[0.0; 4]; 6];
    for (p, &(i, j)) in PAIRS.iter().enumerate() {
        let b = bracket_from(&f0, &derivs, i, j);
        let c = lu.solve(&b).ok_or_else(|| Error::SingularConfiguration("frame is not a basis".into()))?;
        for k in 0..4 {
            coefficients[p][k] = c[k];
        }
    }
    let mut pinned = [0.0; 8];
    for k in 0..4 {
        pinned[k] = coefficients[0][k] - if k == 2 { 1.0 } else { 0.0 };
    }
    // J in frame coordinates is the standard structure
    let j0 = CsMatrix::standard(4);
    let row = |p: usize| DVector::from_row_slice(&coefficients[p]);
    let rel = row(4) - j0.apply(&row(3)) - j0.apply(&row(2)) - row(1);
    for k in 0..4 {
        pinned[4 + k] = rel[k] - if k == 0 { 1.0 } else { 0.0 };
    }
    Ok(StructureFunctions { frame, coefficients, parity: parity_table(), pinned })
}

/// `[X_i, X_j]` at the stencil center from columns `f` and their partials.
fn bracket_from(f: &DMatrix<f64>, derivs: &[DMatrix<f64>], i: usize, j: usize) -> DVector<f64> {
    let m = f.nrows();
    let mut out = DVector::zeros(m);
    for (a, d) in derivs.iter().enumerate() {
        out += d.column(j) * f[(a, i)] - d.column(i) * f[(a, j)];
    }
    out
}

/// `(λ, μ)` with `v = λ·a + μ·b`, by normal equations.
fn coords_in_pair(a: &DVector<f64>, b: &DVector<f64>, v: &DVector<f64>) -> Option<Vector2<f64>> {
    let g = Matrix2::new(a.dot(a), a.dot(b), a.dot(b), b.dot(b));
    g.try_inverse().map(|gi| gi * Vector2::new(a.dot(v), b.dot(v)))
}

/// Base-point choices shared by every stencil evaluation.
struct Stencil<'a, F: ?Sized> {
    s: &'a F,
    x: Vec<f64>,
    h: f64,
    /// Index pair whose bracket spans `Π²` at the base point.
    pair: (usize, usize),
    reference: DVector<f64>,
    /// Square root at the base point (before the sign), used to keep the
    /// branch continuous.
    zref: Complex64,
    sign: f64,
    n: NTensor,
    char_plane: DMatrix<f64>,
    derived: DMatrix<f64>,
}

impl<'a, F: JField + ?Sized> Stencil<'a, F> {
    fn new(s: &'a F, x: &[f64], tol: &Tolerances, opts: &FrameOptions, sign: f64) -> Result<Self> {
        let n = nonzero_tensor(s, x, tol)?;
        if !(opts.step > 0.0 && opts.step < 0.1) {
            return Err(Error::Argument(format!("stencil step {} outside (0, 0.1)", opts.step)));
        }
        let h = opts.step * s.domain().size();
        let mut pair = (0, 1);
        let mut best = -1.0;
        for a in 0..4 {
            for b in a + 1..4 {
                let v = (0..4).map(|k| n.get(k, a, b).powi(2)).sum::<f64>();
                if v > best {
                    best = v;
                    pair = (a, b);
                }
            }
        }
        let char_plane = char_distribution(s, x, tol)?.basis().clone();
        let mut st = Stencil {
            s,
            x: x.to_vec(),
            h,
            pair,
            reference: DVector::zeros(4),
            zref: Complex64::new(1.0, 0.0),
            sign,
            n,
            char_plane,
            derived: DMatrix::zeros(4, 0),
        };
        let proj = linalg::projector(&st.char_plane);
        st.reference = opts
            .references
            .iter()
            .find(|r| r.len() == 4 && r.norm() > 0.0 && (&proj * *r).norm() > REFERENCE_FLOOR * r.norm())
            .cloned()
            .ok_or_else(|| Error::Argument("no reference vector projects onto the characteristic plane".into()))?;
        let (sections, w) = st.section_bracket(x);
        st.derived = span_with_bracket(&st.char_plane, &w, tol.frame)?;
        let c = st.scalar(x, &sections, &w);
        if !(c.norm() >= tol.rank) {
            return Err(Error::NonGeneric { what: "N(u, [u, Ju]) vanishes".into(), rank: 2 });
        }
        st.zref = principal_root(c);
        Ok(st)
    }

    fn j(&self, y: &[f64]) -> DMatrix<f64> {
        self.s.j_at(y)
    }

    fn tensor(&self, y: &[f64]) -> NTensor {
        let j = CsMatrix::unchecked(self.j(y));
        field::nijenhuis_from_derivatives(j, &self.s.dj_at(y))
    }

    /// `[u, Ju]` with `u` the normalized projection of the reference onto `Π²(y)`.
    fn sections(&self, y: &[f64]) -> DMatrix<f64> {
        let n = self.tensor(y);
        let (a, b) = self.pair;
        let v = DVector::from_fn(4, |k, _| n.get(k, a, b));
        let jm = n.structure().matrix();
        let basis = DMatrix::from_columns(&[v.clone(), jm * &v]);
        let gram = basis.transpose() * &basis;
        let coef = gram
            .try_inverse()
            .map(|gi| gi * (basis.transpose() * &self.reference))
            .unwrap_or_else(|| DVector::zeros(2));
        let mut u = &basis * coef;
        let nu = u.norm();
        if nu > 0.0 {
            u /= nu;
        }
        let ju = jm * &u;
        DMatrix::from_columns(&[u, ju])
    }

    /// Sections at `y` and the bracket `[u, Ju](y)`.
    fn section_bracket(&self, y: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let f = self.sections(y);
        let derivs: Vec<DMatrix<f64>> = (0..4).map(|a| central_difference(|p| self.sections(p), y, a, self.h)).collect();
        let w = bracket_from(&f, &derivs, 0, 1);
        (f, w)
    }

    /// `c` with `N(u, w) = c·u` in the complex line `Π²`.
    fn scalar(&self, y: &[f64], sections: &DMatrix<f64>, w: &DVector<f64>) -> Complex64 {
        let u = sections.column(0).into_owned();
        let ju = sections.column(1).into_owned();
        let nuw = self.tensor(y).apply(&u, w);
        let lm = coords_in_pair(&u, &ju, &nuw).unwrap_or_else(Vector2::zeros);
        Complex64::new(lm[0], lm[1])
    }

    /// `[ξ₁, ξ₂]` at `y`, columns of a 4×2 matrix.
    fn first_pair(&self, y: &[f64]) -> DMatrix<f64> {
        let (f, w) = self.section_bracket(y);
        let mut z = principal_root(self.scalar(y, &f, &w));
        if (z * self.zref.conj()).re < 0.0 {
            z = -z;
        }
        let z = z * self.sign;
        let xi1 = f.column(0) * z.re + f.column(1) * z.im;
        let xi2 = self.j(y) * &xi1;
        DMatrix::from_columns(&[xi1, xi2])
    }

    fn third_with_step(&self, y: &[f64], h: f64) -> (DMatrix<f64>, DVector<f64>) {
        let f = self.first_pair(y);
        let derivs: Vec<DMatrix<f64>> = (0..4).map(|a| central_difference(|p| self.first_pair(p), y, a, h)).collect();
        let xi3 = bracket_from(&f, &derivs, 0, 1);
        (f, xi3)
    }

    /// All four frame fields at `y`.
    fn frame_fields(&self, y: &[f64]) -> DMatrix<f64> {
        let (f, xi3) = self.third_with_step(y, self.h);
        let xi4 = self.j(y) * &xi3;
        DMatrix::from_columns(&[f.column(0).into_owned(), f.column(1).into_owned(), xi3, xi4])
    }

    fn frame4(&self, sign: i32) -> Frame4 {
        let fm = self.frame_fields(&self.x);
        let xi: [DVector<f64>; 4] = std::array::from_fn(|k| fm.column(k).into_owned());
        let (_, check3) = self.third_with_step(&self.x, 2.0 * self.h);
        let rel = |v: DVector<f64>, scale: &DVector<f64>| v.norm() / scale.norm().max(f64::MIN_POSITIVE);
        let in_char = linalg::distance_to_span(&self.char_plane, &xi[0]) / xi[0].norm();
        let in_derived = linalg::distance_to_span(&self.derived, &xi[2]) / xi[2].norm();
        let normalization = rel(self.n.apply(&xi[0], &xi[2]) - &xi[0], &xi[0]);
        let bracket = rel(&check3 - &xi[2], &xi[2]);
        let row = fm.clone().lu().solve(&check3).unwrap_or_else(|| DVector::from_element(4, f64::NAN));
        let first_row = [row[0], row[1], row[2], row[3]];
        let first_dev = (0..4).map(|k| (row[k] - if k == 2 { 1.0 } else { 0.0 }).abs()).fold(0.0, f64::max);
        Frame4 {
            point: self.x.clone(),
            xi,
            sign,
            first_row,
            residuals: FrameResiduals { in_char, in_derived, normalization, bracket, first_row: first_dev },
        }
    }
}

/// Root of `z² = |z|⁴·c` with argument in `(−π/2, π/2]`.
fn principal_root(c: Complex64) -> Complex64 {
    Complex64::from_polar(c.norm().powf(-0.5), 0.5 * c.arg())
}
