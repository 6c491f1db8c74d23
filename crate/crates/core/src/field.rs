//! Charted J-fields: polynomial structures on a box, their derivatives,
//! Nijenhuis tensors, pushforward by polynomial diffeomorphisms and
//! integrability scans.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, CsMatrix, DegeneracyTag, NTensor};
use crate::poly::{monomials_up_to, PolyExpr, Term};
use crate::Tolerances;

/// Default cap on the total degree of structure entries.
pub const DEFAULT_DEGREE_CAP: u32 = 6;

/// Axis-aligned box `[min_i, max_i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Domain {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        let d = Domain { min, max };
        d.validate()?;
        Ok(d)
    }

    pub fn cube(m: usize, lo: f64, hi: f64) -> Self {
        Domain { min: vec![lo; m], max: vec![hi; m] }
    }

    fn validate(&self) -> Result<()> {
        if self.min.len() != self.max.len() || self.min.is_empty() {
            return Err(Error::Dimension(format!(
                "domain bounds have lengths {} and {}",
                self.min.len(),
                self.max.len()
            )));
        }
        if self.min.iter().zip(&self.max).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
            return Err(Error::Argument("domain needs finite bounds with min < max on every axis".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.min.iter().zip(&self.max)).all(|(v, (a, b))| *a <= *v && *v <= *b)
    }

    /// Longest side.
    pub fn size(&self) -> f64 {
        self.min.iter().zip(&self.max).map(|(a, b)| b - a).fold(0.0, f64::max)
    }

    pub fn center(&self) -> Vec<f64> {
        self.min.iter().zip(&self.max).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    /// Maps `u ∈ [0,1]^m` affinely onto the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(self.min.iter().zip(&self.max)).map(|(t, (a, b))| a + t * (b - a)).collect()
    }

    /// The concentric box scaled by `factor` about the center.
    pub fn scaled(&self, factor: f64) -> Domain {
        let c = self.center();
        Domain {
            min: self.min.iter().zip(&c).map(|(a, c)| c + factor * (a - c)).collect(),
            max: self.max.iter().zip(&c).map(|(b, c)| c + factor * (b - c)).collect(),
        }
    }

    /// Cell centers of a `per_axis^m` grid.
    pub fn grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let m = self.dim();
        let total = per_axis.pow(m as u32);
        (0..total)
            .map(|mut idx| {
                let u: Vec<f64> = (0..m)
                    .map(|_| {
                        let k = idx % per_axis;
                        idx /= per_axis;
                        (k as f64 + 0.5) / per_axis as f64
                    })
                    .collect();
                self.from_unit(&u)
            })
            .collect()
    }

    /// Grid including the faces: fractions `0, 1/(k-1), …, 1` on each axis.
    pub fn closed_grid(&self, per_axis: usize) -> Vec<Vec<f64>> {
        let m = self.dim();
        let total = per_axis.pow(m as u32);
        let denom = (per_axis.max(2) - 1) as f64;
        (0..total)
            .map(|mut idx| {
                let u: Vec<f64> = (0..m)
                    .map(|_| {
                        let k = idx % per_axis;
                        idx /= per_axis;
                        k as f64 / denom
                    })
                    .collect();
                self.from_unit(&u)
            })
            .collect()
    }

    pub fn random_points(&self, count: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..count)
            .map(|_| {
                let u: Vec<f64> = (0..self.dim()).map(|_| rng.gen::<f64>()).collect();
                self.from_unit(&u)
            })
            .collect()
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("point has {} coordinates, domain has {}", x.len(), self.dim())));
        }
        if !self.contains(x) {
            return Err(Error::Domain { point: x.to_vec() });
        }
        Ok(())
    }
}

/// Points used to validate structure files: a closed 3-per-axis grid when
/// that is small, seeded random points otherwise.
fn validation_points(domain: &Domain) -> Vec<Vec<f64>> {
    if domain.dim() <= 6 {
        domain.closed_grid(3)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut pts = domain.random_points(729, &mut rng);
        pts.push(domain.center());
        pts
    }
}

/// A J-field on a box. Implemented by polynomial structures and by
/// closure-backed fields.
pub trait JField: Send + Sync {
    fn dim(&self) -> usize;
    fn domain(&self) -> &Domain;
    /// `J(x)` without any checks.
    fn j_at(&self, x: &[f64]) -> DMatrix<f64>;
    /// `[∂_0 J(x), …, ∂_{m-1} J(x)]`.
    fn dj_at(&self, x: &[f64]) -> Vec<DMatrix<f64>>;
}

/// A J-field whose entries are polynomials.
#[derive(Debug, Clone)]
pub struct ChartedStructure {
    dim: usize,
    domain: Domain,
    entries: Vec<PolyExpr>,
    derivs: Vec<Vec<PolyExpr>>,
}

#[derive(Serialize, Deserialize)]
struct StructureFile {
    dim: usize,
    domain: Domain,
    #[serde(rename = "J")]
    j: Vec<Vec<PolyExpr>>,
}

impl ChartedStructure {
    /// Builds and validates a structure: entries must be polynomials in `m`
    /// variables of degree at most `degree_cap`, and `J² = −I` within
    /// `tol_field` on the validation grid.
    pub fn new(domain: Domain, rows: Vec<Vec<PolyExpr>>, tol_field: f64) -> Result<Self> {
        Self::with_cap(domain, rows, tol_field, DEFAULT_DEGREE_CAP)
    }

    pub fn with_cap(domain: Domain, rows: Vec<Vec<PolyExpr>>, tol_field: f64, degree_cap: u32) -> Result<Self> {
        let s = Self::unchecked(domain, rows)?;
        for (idx, p) in s.entries.iter().enumerate() {
            if p.degree() > degree_cap {
                return Err(Error::Argument(format!(
                    "entry J[{}][{}] has degree {} above the cap {degree_cap}",
                    idx / s.dim,
                    idx % s.dim,
                    p.degree()
                )));
            }
        }
        let worst = validation_points(&s.domain)
            .par_iter()
            .map(|x| model::acs_residual(&s.j_at(x)))
            .reduce(|| 0.0, f64::max);
        if !(worst <= tol_field) {
            return Err(Error::InvalidStructure { residual: worst, tolerance: tol_field });
        }
        Ok(s)
    }

    /// Shape checks only; `J² = −I` is not verified.
    pub fn unchecked(domain: Domain, rows: Vec<Vec<PolyExpr>>) -> Result<Self> {
        domain.validate()?;
        let m = rows.len();
        if m == 0 || !m.is_multiple_of(2) {
            return Err(Error::Dimension(format!("dimension {m} is not a positive even number")));
        }
        if domain.dim() != m {
            return Err(Error::Dimension(format!("domain has dimension {}, matrix has {m} rows", domain.dim())));
        }
        let mut entries = Vec::with_capacity(m * m);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::Dimension(format!("row {r} has {} entries, expected {m}", row.len())));
            }
            for (c, p) in row.into_iter().enumerate() {
                let p = p.with_num_vars(m).ok_or_else(|| {
                    Error::Dimension(format!("entry J[{r}][{c}] uses exponent vectors of the wrong length"))
                })?;
                entries.push(p);
            }
        }
        let derivs = (0..m).map(|a| entries.iter().map(|p| p.partial(a)).collect()).collect();
        Ok(ChartedStructure { dim: m, domain, entries, derivs })
    }

    /// The constant field `J`.
    pub fn constant(j: &CsMatrix, domain: Domain) -> Result<Self> {
        let m = j.dim();
        let rows = (0..m)
            .map(|r| (0..m).map(|c| PolyExpr::constant(m, j.matrix()[(r, c)])).collect())
            .collect();
        Self::unchecked(domain, rows)
    }

    pub fn entry(&self, r: usize, c: usize) -> &PolyExpr {
        &self.entries[r * self.dim + c]
    }

    pub fn rows(&self) -> Vec<Vec<PolyExpr>> {
        (0..self.dim).map(|r| (0..self.dim).map(|c| self.entry(r, c).clone()).collect()).collect()
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(|p| p.degree()).max().unwrap_or(0)
    }

    /// True when no entry depends on the listed coordinates.
    pub fn independent_of(&self, vars: &[usize]) -> bool {
        self.entries.iter().all(|p| p.independent_of(vars))
    }

    /// Same entries on a different box, revalidated.
    pub fn with_domain(&self, domain: Domain, tol_field: f64) -> Result<Self> {
        Self::new(domain, self.rows(), tol_field)
    }

    pub fn from_json_str(s: &str, tol_field: f64) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let file: StructureFile = serde_path_to_error::deserialize(de).map_err(parse_error)?;
        if file.j.len() != file.dim {
            return Err(Error::Parse(format!("J: expected {} rows, found {}", file.dim, file.j.len())));
        }
        Self::new(file.domain, file.j, tol_field)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(StructureFile { dim: self.dim, domain: self.domain.clone(), j: self.rows() })
            .expect("structure serializes")
    }
}

pub(crate) fn parse_error(e: serde_path_to_error::Error<serde_json::Error>) -> Error {
    let path = e.path().to_string();
    let inner = e.into_inner();
    if inner.is_syntax() || inner.is_eof() {
        Error::Parse(format!("malformed JSON at line {} column {}: {inner}", inner.line(), inner.column()))
    } else {
        Error::Parse(format!("{path}: {inner}"))
    }
}

impl JField for ChartedStructure {
    fn dim(&self) -> usize {
        self.dim
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn j_at(&self, x: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |r, c| self.entries[r * self.dim + c].eval(x))
    }

    fn dj_at(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        self.derivs
            .iter()
            .map(|d| DMatrix::from_fn(self.dim, self.dim, |r, c| d[r * self.dim + c].eval(x)))
            .collect()
    }
}

/// A closure-backed J-field; derivatives are taken by central differences.
pub struct FnStructure<F> {
    dim: usize,
    domain: Domain,
    f: F,
    step: f64,
}

impl<F> FnStructure<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    /// `step` is the finite-difference step for `dj_at`.
    pub fn new(domain: Domain, f: F, step: f64) -> Self {
        FnStructure { dim: domain.dim(), domain, f, step }
    }
}

impl<F> JField for FnStructure<F>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn j_at(&self, x: &[f64]) -> DMatrix<f64> {
        (self.f)(x)
    }

    fn dj_at(&self, x: &[f64]) -> Vec<DMatrix<f64>> {
        (0..self.dim).map(|a| central_difference(|y| (self.f)(y), x, a, self.step)).collect()
    }
}

/// Fourth-order central difference `∂_a f(x)` with step `h`.
pub fn central_difference(f: impl Fn(&[f64]) -> DMatrix<f64>, x: &[f64], a: usize, h: f64) -> DMatrix<f64> {
    let mut y = x.to_vec();
    let mut at = |t: f64| {
        y[a] = x[a] + t;
        f(&y)
    };
    let f2 = at(2.0 * h);
    let f1 = at(h);
    let m1 = at(-h);
    let m2 = at(-2.0 * h);
    (m2 - f2 + (f1 - m1) * 8.0) / (12.0 * h)
}

/// Jacobian of a vector field by fourth-order central differences.
pub fn jacobian_fd(f: &dyn Fn(&[f64]) -> DVector<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let m = x.len();
    let cols: Vec<DVector<f64>> = (0..m)
        .map(|a| {
            let g = |y: &[f64]| {
                let v = f(y);
                DMatrix::from_column_slice(v.len(), 1, v.as_slice())
            };
            central_difference(g, x, a, h).column(0).into_owned()
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// `[X, Y](x) = DY·X − DX·Y` by finite differences.
pub fn lie_bracket_fd(
    xf: &dyn Fn(&[f64]) -> DVector<f64>,
    yf: &dyn Fn(&[f64]) -> DVector<f64>,
    x: &[f64],
    h: f64,
) -> DVector<f64> {
    jacobian_fd(yf, x, h) * xf(x) - jacobian_fd(xf, x, h) * yf(x)
}

/// `J(x)` after the domain and `J² = −I` checks.
pub fn eval_j<F: JField + ?Sized>(s: &F, x: &[f64], tol_field: f64) -> Result<CsMatrix> {
    s.domain().check(x)?;
    CsMatrix::new(s.j_at(x), tol_field)
}

/// `∂_a J^k_j(x)`, returned as one matrix per direction `a`.
pub fn d_j<F: JField + ?Sized>(s: &F, x: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    s.domain().check(x)?;
    Ok(s.dj_at(x))
}

/// Central-difference oracle for [`d_j`], step `1e−5 · size`.
pub fn d_j_fd<F: JField + ?Sized>(s: &F, x: &[f64]) -> Vec<DMatrix<f64>> {
    let h = 1e-5 * s.domain().size();
    (0..s.dim()).map(|a| central_difference(|y| s.j_at(y), x, a, h)).collect()
}

/// `N(∂_i, ∂_j)` from the bracket formula on coordinate fields, expanded
/// through the derivatives of `J`:
/// `N^k_ij = J^a_i ∂_a J^k_j − J^a_j ∂_a J^k_i − J^k_l ∂_i J^l_j + J^k_l ∂_j J^l_i`.
pub fn nijenhuis_at<F: JField + ?Sized>(s: &F, x: &[f64], tol_field: f64) -> Result<NTensor> {
    let j = eval_j(s, x, tol_field)?;
    let dj = s.dj_at(x);
    Ok(nijenhuis_from_derivatives(j, &dj))
}

/// The coordinate formula given `J` and its first derivatives at a point.
pub fn nijenhuis_from_derivatives(j: CsMatrix, dj: &[DMatrix<f64>]) -> NTensor {
    let m = j.dim();
    let jm = j.matrix().clone();
    // along[i] = Σ_a J^a_i ∂_a J, i.e. the derivative of J along J∂_i
    let along: Vec<DMatrix<f64>> = (0..m)
        .map(|i| {
            let mut acc = DMatrix::zeros(m, m);
            for (a, d) in dj.iter().enumerate() {
                let w = jm[(a, i)];
                if w != 0.0 {
                    acc += d * w;
                }
            }
            acc
        })
        .collect();
    let jd: Vec<DMatrix<f64>> = dj.iter().map(|d| &jm * d).collect();
    NTensor::from_fn(j, |k, i, jj| along[i][(k, jj)] - along[jj][(k, i)] - jd[i][(k, jj)] + jd[jj][(k, i)])
}

/// Independent oracle: the literal bracket formula
/// `[J∂_i, J∂_j] − J[∂_i, J∂_j] − J[J∂_i, ∂_j]` with Lie brackets of
/// vector fields taken by finite differences, step `h`.
pub fn nijenhuis_fd<F: JField + ?Sized>(s: &F, x: &[f64], h: f64, tol_field: f64) -> Result<NTensor> {
    let j = eval_j(s, x, tol_field)?;
    let m = s.dim();
    let jm = j.matrix().clone();
    // stencil values of J are shared by all column fields J∂_i
    let partials: Vec<DMatrix<f64>> = (0..m).map(|a| central_difference(|y| s.j_at(y), x, a, h)).collect();
    let column_jac: Vec<DMatrix<f64>> =
        (0..m).map(|i| DMatrix::from_fn(m, m, |r, a| partials[a][(r, i)])).collect();
    let unit = |i: usize| DVector::from_fn(m, |r, _| if r == i { 1.0 } else { 0.0 });
    let zero = DMatrix::zeros(m, m);
    // [X, Y] = DY·X − DX·Y
    let bracket = |dx: &DMatrix<f64>, xv: &DVector<f64>, dy: &DMatrix<f64>, yv: &DVector<f64>| dy * xv - dx * yv;
    Ok(NTensor::from_pairs(j, |i, jj| {
        let (ji, jj_v) = (jm.column(i).into_owned(), jm.column(jj).into_owned());
        let a = bracket(&column_jac[i], &ji, &column_jac[jj], &jj_v);
        let b = bracket(&zero, &unit(i), &column_jac[jj], &jj_v);
        let c = bracket(&column_jac[i], &ji, &zero, &unit(jj));
        a - &jm * b - &jm * c
    }))
}

/// A polynomial diffeomorphism `forward: domain → codomain` with a
/// polynomial inverse.
#[derive(Debug, Clone)]
pub struct DiffeoPair {
    domain: Domain,
    codomain: Domain,
    forward: Vec<PolyExpr>,
    inverse: Vec<PolyExpr>,
    forward_jac: Vec<Vec<PolyExpr>>,
}

#[derive(Serialize, Deserialize)]
struct DiffeoFile {
    dim: usize,
    domain: Domain,
    codomain: Domain,
    forward: Vec<PolyExpr>,
    inverse: Vec<PolyExpr>,
}

impl DiffeoPair {
    /// Checks `inverse ∘ forward = id` on the domain grid and
    /// `forward ∘ inverse = id` on the codomain grid, within `tol_field`
    /// relative to the box size.
    pub fn new(
        domain: Domain,
        codomain: Domain,
        forward: Vec<PolyExpr>,
        inverse: Vec<PolyExpr>,
        tol_field: f64,
    ) -> Result<Self> {
        domain.validate()?;
        codomain.validate()?;
        let m = domain.dim();
        if codomain.dim() != m || forward.len() != m || inverse.len() != m {
            return Err(Error::Dimension("diffeomorphism components do not match the box dimension".into()));
        }
        let fix = |v: Vec<PolyExpr>| -> Result<Vec<PolyExpr>> {
            v.into_iter()
                .map(|p| p.with_num_vars(m).ok_or_else(|| Error::Dimension("component has wrong variable count".into())))
                .collect()
        };
        let forward = fix(forward)?;
        let inverse = fix(inverse)?;
        let forward_jac = forward.iter().map(|p| (0..m).map(|a| p.partial(a)).collect()).collect();
        let d = DiffeoPair { domain, codomain, forward, inverse, forward_jac };
        let scale = d.domain.size().max(d.codomain.size()).max(1.0);
        let err1 = validation_points(&d.domain)
            .iter()
            .map(|x| dist(&d.apply_inverse(&d.apply(x)), x))
            .fold(0.0, f64::max);
        let err2 = validation_points(&d.codomain)
            .iter()
            .map(|y| dist(&d.apply(&d.apply_inverse(y)), y))
            .fold(0.0, f64::max);
        let worst = err1.max(err2);
        if !(worst <= tol_field * scale) {
            return Err(Error::Argument(format!("forward and inverse maps disagree by {worst:.3e}")));
        }
        Ok(d)
    }

    /// `x ↦ P·x` on `domain`, with the codomain chosen as the largest box
    /// around `P·center` whose preimage stays inside `domain`.
    pub fn linear(p: &DMatrix<f64>, domain: Domain, tol_field: f64) -> Result<Self> {
        let m = domain.dim();
        if p.nrows() != m || p.ncols() != m {
            return Err(Error::Dimension("linear map does not match the box".into()));
        }
        let q = p
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularConfiguration("linear map is not invertible".into()))?;
        let lin = |a: &DMatrix<f64>| -> Vec<PolyExpr> {
            (0..m)
                .map(|r| {
                    PolyExpr::from_terms(
                        m,
                        (0..m)
                            .map(|c| {
                                let mut powers = vec![0; m];
                                powers[c] = 1;
                                Term { coef: a[(r, c)], powers }
                            })
                            .collect(),
                    )
                })
                .collect()
        };
        let c = DVector::from_vec(domain.center());
        let pc = p * &c;
        let half = domain.min.iter().zip(&domain.max).map(|(a, b)| 0.5 * (b - a)).fold(f64::INFINITY, f64::min);
        let qnorm = (0..m).map(|r| q.row(r).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
        let rho = 0.999 * half / qnorm;
        let codomain = Domain { min: pc.iter().map(|v| v - rho).collect(), max: pc.iter().map(|v| v + rho).collect() };
        DiffeoPair::new(domain, codomain, lin(p), lin(&q), tol_field)
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn codomain(&self) -> &Domain {
        &self.codomain
    }

    pub fn forward(&self) -> &[PolyExpr] {
        &self.forward
    }

    pub fn inverse(&self) -> &[PolyExpr] {
        &self.inverse
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.forward.iter().map(|p| p.eval(x)).collect()
    }

    pub fn apply_inverse(&self, y: &[f64]) -> Vec<f64> {
        self.inverse.iter().map(|p| p.eval(y)).collect()
    }

    /// `Dφ(x)`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |r, c| self.forward_jac[r][c].eval(x))
    }

    pub fn from_json_str(s: &str, tol_field: f64) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let file: DiffeoFile = serde_path_to_error::deserialize(de).map_err(parse_error)?;
        if file.forward.len() != file.dim || file.inverse.len() != file.dim {
            return Err(Error::Parse(format!("forward/inverse: expected {} components", file.dim)));
        }
        DiffeoPair::new(file.domain, file.codomain, file.forward, file.inverse, tol_field)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(DiffeoFile {
            dim: self.dim(),
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            forward: self.forward.clone(),
            inverse: self.inverse.clone(),
        })
        .expect("diffeomorphism serializes")
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A transported structure together with its refit residual.
#[derive(Debug, Clone)]
pub struct Pullback {
    pub structure: ChartedStructure,
    /// Largest entrywise deviation of the refit polynomials from the exact
    /// transported matrix over the fit samples.
    pub residual: f64,
}

/// Transports `s` through `φ`: on the codomain box,
/// `J'(y) = Dφ(x)·J(x)·Dφ(x)⁻¹` at `x = φ⁻¹(y)`, refit by least squares as
/// polynomials of total degree `degree` on a Chebyshev-like sample set.
pub fn pullback(s: &ChartedStructure, phi: &DiffeoPair, degree: u32, tol: &Tolerances) -> Result<Pullback> {
    let m = s.dim();
    if phi.dim() != m {
        return Err(Error::Dimension(format!("diffeomorphism has dimension {}, structure {m}", phi.dim())));
    }
    if degree > DEFAULT_DEGREE_CAP {
        return Err(Error::Argument(format!("refit degree {degree} above the cap {DEFAULT_DEGREE_CAP}")));
    }
    let cod = phi.codomain();
    let center = cod.center();
    let radius: Vec<f64> = cod.min.iter().zip(&cod.max).map(|(a, b)| 0.5 * (b - a)).collect();
    let monos = monomials_up_to(m, degree);
    let nsamp = 2 * monos.len() + 16;
    let mut rng = ChaCha8Rng::seed_from_u64(0xf17);
    let ts: Vec<Vec<f64>> = (0..nsamp)
        .map(|_| (0..m).map(|_| (std::f64::consts::PI * rng.gen::<f64>()).cos()).collect())
        .collect();
    let targets: Vec<DMatrix<f64>> = ts
        .par_iter()
        .map(|t| -> Result<DMatrix<f64>> {
            let y: Vec<f64> = (0..m).map(|i| center[i] + radius[i] * t[i]).collect();
            let x = phi.apply_inverse(&y);
            if !s.domain().contains(&x) {
                return Err(Error::Domain { point: x });
            }
            let dphi = phi.jacobian(&x);
            let inv = dphi
                .clone()
                .try_inverse()
                .ok_or_else(|| Error::SingularConfiguration("diffeomorphism Jacobian is singular".into()))?;
            Ok(&dphi * s.j_at(&x) * inv)
        })
        .collect::<Result<_>>()?;
    let design = DMatrix::from_fn(nsamp, monos.len(), |r, c| {
        monos[c].iter().zip(&ts[r]).fold(1.0, |acc, (&p, &t)| acc * t.powi(p as i32))
    });
    let rhs = DMatrix::from_fn(nsamp, m * m, |r, e| targets[r][(e / m, e % m)]);
    let coefs = design
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::SingularConfiguration(format!("refit failed: {e}")))?;
    // t_i = (y_i − c_i) / r_i
    let subs: Vec<PolyExpr> = (0..m)
        .map(|i| PolyExpr::var(m, i).scale(1.0 / radius[i]).add(&PolyExpr::constant(m, -center[i] / radius[i])))
        .collect();
    let rows: Vec<Vec<PolyExpr>> = (0..m)
        .map(|r| {
            (0..m)
                .map(|c| {
                    let e = r * m + c;
                    let scale = coefs.column(e).amax().max(1.0);
                    let terms = monos
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| coefs[(*k, e)].abs() > 1e-15 * scale)
                        .map(|(k, powers)| Term { coef: coefs[(k, e)], powers: powers.clone() })
                        .collect();
                    let in_t = PolyExpr::from_terms(m, terms);
                    chop(in_t.compose(&subs), 1e-15 * scale)
                })
                .collect()
        })
        .collect();
    let structure = ChartedStructure::unchecked(cod.clone(), rows)?;
    let residual = ts
        .iter()
        .zip(&targets)
        .map(|(t, target)| {
            let y: Vec<f64> = (0..m).map(|i| center[i] + radius[i] * t[i]).collect();
            crate::linalg::max_abs(&(structure.j_at(&y) - target))
        })
        .fold(0.0, f64::max);
    if !(residual <= tol.fit) {
        return Err(Error::Refit { residual, tolerance: tol.fit });
    }
    let structure = ChartedStructure::new(cod.clone(), structure.rows(), tol.field)?;
    Ok(Pullback { structure, residual })
}

fn chop(p: PolyExpr, tol: f64) -> PolyExpr {
    let m = p.num_vars();
    PolyExpr::from_terms(m, p.terms().iter().filter(|t| t.coef.abs() > tol).cloned().collect())
}

/// Where to evaluate during a scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Cell centers of a `per_axis^m` grid.
    Grid { per_axis: usize },
    /// Uniform random points, seeded.
    Random { count: usize, seed: u64 },
}

impl Sampling {
    pub fn points(&self, domain: &Domain) -> Vec<Vec<f64>> {
        match *self {
            Sampling::Grid { per_axis } => {
                if per_axis == 0 {
                    vec![]
                } else {
                    domain.grid(per_axis)
                }
            }
            Sampling::Random { count, seed } => domain.random_points(count, &mut ChaCha8Rng::seed_from_u64(seed)),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanReport {
    pub points: usize,
    /// `max ‖N‖_∞` over the sample points.
    pub max_norm: f64,
    pub argmax: Vec<f64>,
    /// `max_norm < tol_field`.
    pub integrable: bool,
    /// Degeneracy tag counts; points with `‖N‖_∞ ≤ tol_field` count as ZERO.
    pub histogram: BTreeMap<String, usize>,
    /// Points whose rank decision was close to the cut.
    pub unreliable: usize,
}

impl ScanReport {
    pub fn count(&self, tag: DegeneracyTag) -> usize {
        self.histogram.get(&tag.to_string()).copied().unwrap_or(0)
    }
}

pub fn integrability_scan<F: JField + ?Sized>(s: &F, sampling: Sampling, tol: &Tolerances) -> Result<ScanReport> {
    let pts = sampling.points(s.domain());
    scan_points(s, &pts, tol)
}

pub fn scan_points<F: JField + ?Sized>(s: &F, pts: &[Vec<f64>], tol: &Tolerances) -> Result<ScanReport> {
    if pts.is_empty() {
        return Err(Error::Argument("sampling produced no points".into()));
    }
    let per_point: Vec<(f64, DegeneracyTag, bool)> = pts
        .par_iter()
        .map(|x| -> Result<_> {
            let n = nijenhuis_at(s, x, tol.field)?;
            let norm = n.max_abs();
            if norm <= tol.field {
                Ok((norm, DegeneracyTag::Zero, false))
            } else {
                let c = model::degeneracy_class(&n, tol);
                Ok((norm, c.tag, c.unreliable))
            }
        })
        .collect::<Result<_>>()?;
    let mut histogram = BTreeMap::new();
    let mut max_norm = 0.0;
    let mut argmax = pts[0].clone();
    let mut unreliable = 0;
    for (x, (norm, tag, unrel)) in pts.iter().zip(&per_point) {
        *histogram.entry(tag.to_string()).or_insert(0) += 1;
        if *norm > max_norm {
            max_norm = *norm;
            argmax = x.clone();
        }
        unreliable += *unrel as usize;
    }
    Ok(ScanReport { points: pts.len(), max_norm, argmax, integrable: max_norm < tol.field, histogram, unreliable })
}
