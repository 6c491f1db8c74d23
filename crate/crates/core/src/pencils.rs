//! Block-structured examples in dimension 6, the pencil verifier and the
//! pointwise degeneracy-accumulation engine.
//!
//! Coordinates are split as `V₁ ⊕ V₂ ⊕ V₃` with `V₁ = span(e₀, e₁)`,
//! `V₂ = span(e₂, e₃)`, `V₃ = span(e₄, e₅)`; `V₂₃ = V₂ ⊕ V₃`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{self, ChartedStructure, Domain, JField};
use crate::linalg;
use crate::model::{self, ComplexSubspace, CsMatrix, NTensor};
use crate::poly::{self, PolyExpr, PolyMatrix};
use crate::sample;
use crate::webs::{self, PlaneWeb4};
use crate::Tolerances;

const M: usize = 6;
const ALL: [usize; 6] = [0, 1, 2, 3, 4, 5];
const REST: [usize; 4] = [2, 3, 4, 5];
/// Coordinates of `V₁`.
pub const V1: [usize; 2] = [0, 1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BlockShape {
    Diagonal,
    UpperTriangular,
}

/// A structure given block by block in a coordinate splitting.
#[derive(Debug, Clone)]
pub struct BlockSpec {
    /// Even block sizes summing to the dimension.
    pub splitting: Vec<usize>,
    /// `blocks[r][c]` is the `(r, c)` block.
    pub blocks: Vec<Vec<PolyMatrix>>,
    pub shape: BlockShape,
    /// Coordinates the projectible diagonal blocks must not depend on.
    pub symmetry_dirs: Vec<usize>,
    /// Indices of the diagonal blocks that must be independent of `symmetry_dirs`.
    pub projectible: Vec<usize>,
}

impl BlockSpec {
    pub fn dim(&self) -> usize {
        self.splitting.iter().sum()
    }

    fn offsets(&self) -> Vec<usize> {
        self.splitting
            .iter()
            .scan(0, |acc, &s| {
                let o = *acc;
                *acc += s;
                Some(o)
            })
            .collect()
    }

    /// Checks the declared shape and independence exactly on polynomial
    /// terms, then assembles and validates `J² = −I`.
    pub fn assemble(&self, domain: Domain, tol_field: f64) -> Result<ChartedStructure> {
        let nb = self.splitting.len();
        if nb == 0 || self.splitting.iter().any(|&s| s == 0 || s % 2 != 0) {
            return Err(Error::Dimension(format!("block sizes {:?} must be positive and even", self.splitting)));
        }
        if self.blocks.len() != nb || self.blocks.iter().any(|row| row.len() != nb) {
            return Err(Error::Dimension(format!("expected a {nb}x{nb} grid of blocks")));
        }
        let m = self.dim();
        let off = self.offsets();
        let mut rows = vec![vec![PolyExpr::zero(m); m]; m];
        for (bi, brow) in self.blocks.iter().enumerate() {
            for (bj, block) in brow.iter().enumerate() {
                if block.len() != self.splitting[bi] || block.iter().any(|r| r.len() != self.splitting[bj]) {
                    return Err(Error::Dimension(format!(
                        "block ({bi}, {bj}) should be {}x{}",
                        self.splitting[bi], self.splitting[bj]
                    )));
                }
                let must_vanish = match self.shape {
                    BlockShape::Diagonal => bi != bj,
                    BlockShape::UpperTriangular => bi > bj,
                };
                if must_vanish && block.iter().flatten().any(|p| !p.is_zero()) {
                    return Err(Error::Argument(format!("block ({bi}, {bj}) must vanish for shape {:?}", self.shape)));
                }
                if bi == bj
                    && self.projectible.contains(&bi)
                    && !block.iter().flatten().all(|p| p.independent_of(&self.symmetry_dirs))
                {
                    return Err(Error::Argument(format!(
                        "diagonal block {bi} depends on the symmetry directions {:?}",
                        self.symmetry_dirs
                    )));
                }
                for (r, prow) in block.iter().enumerate() {
                    for (c, p) in prow.iter().enumerate() {
                        rows[off[bi] + r][off[bj] + c] = p.clone();
                    }
                }
            }
        }
        ChartedStructure::new(domain, rows, tol_field)
    }
}

fn zero_block(r: usize, c: usize) -> PolyMatrix {
    vec![vec![PolyExpr::zero(M); c]; r]
}

fn split_degrees(degree: u32) -> Result<(u32, u32)> {
    if !(2..=field::DEFAULT_DEGREE_CAP).contains(&degree) {
        return Err(Error::Argument(format!(
            "degree must lie in 2..={}, got {degree}",
            field::DEFAULT_DEGREE_CAP
        )));
    }
    Ok((1, degree / 2 - 1))
}

/// A 2×2 almost complex block `[[a, −(1+a²)/b], [b, −a]]` with polynomial
/// entries: `G·R·G⁻¹` for `G = [[1 + pr, p], [r, 1]]`, which gives
/// `b = 1 + r² ≥ 1`. Total degree at most `degree`.
fn complex_block(vars: &[usize], degree: u32, rng: &mut impl Rng) -> Result<PolyMatrix> {
    let (dp, dr) = split_degrees(degree)?;
    let p = sample::random_poly(M, vars, dp, 0.3, rng);
    let r = sample::random_poly(M, vars, dr, 0.3, rng);
    let pr = p.mul(&r);
    let one = PolyExpr::constant(M, 1.0);
    let a = p.add(&r.mul(&one.add(&pr)));
    let b = one.add(&r.mul(&r));
    let upper = p.mul(&p).add(&one.add(&pr).mul(&one.add(&pr))).scale(-1.0);
    Ok(vec![vec![a.clone(), upper], vec![b, a.scale(-1.0)]])
}

/// `G·(A′ ⊕ A″)·G⁻¹` on four coordinates, `G = C·(I + X)` with `X² = 0`
/// affine in `vars`; entries of degree at most `degree`.
fn complex_block4(vars: &[usize], degree: u32, rng: &mut impl Rng) -> Result<PolyMatrix> {
    let inner_degree = if degree >= 4 { degree - 2 } else { degree };
    let a1 = complex_block(vars, inner_degree, rng)?;
    let a2 = complex_block(vars, inner_degree, rng)?;
    let mut sum = zero_block(4, 4);
    for r in 0..2 {
        for c in 0..2 {
            sum[r][c] = a1[r][c].clone();
            sum[r + 2][c + 2] = a2[r][c].clone();
        }
    }
    let mut plus = poly::constant_matrix(&DMatrix::identity(4, 4), M);
    let mut minus = plus.clone();
    if degree >= 4 {
        let mut idx = [0, 1, 2, 3];
        idx.shuffle(rng);
        for &r in &idx[..2] {
            for &c in &idx[2..] {
                let x = sample::random_poly(M, vars, 1, 0.3, rng);
                plus[r][c] = x.clone();
                minus[r][c] = x.scale(-1.0);
            }
        }
    }
    let c = sample::random_invertible(4, rng);
    let ci = c.clone().try_inverse().expect("invertible");
    let g = poly::matrix_product(&poly::constant_matrix(&c, M), &plus);
    let gi = poly::matrix_product(&minus, &poly::constant_matrix(&ci, M));
    Ok(poly::matrix_product(&poly::matrix_product(&g, &sum), &gi))
}

fn domain6() -> Domain {
    Domain::cube(M, -1.0, 1.0)
}

/// `diag(A₁, A₂, A₃)` with each 2×2 block depending on all six coordinates.
pub fn make_example1(seed: u64, degree: u32) -> Result<ChartedStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<PolyMatrix> = (0..3).map(|_| complex_block(&ALL, degree, &mut rng)).collect::<Result<_>>()?;
    let blocks = (0..3)
        .map(|r| (0..3).map(|c| if r == c { a[r].clone() } else { zero_block(2, 2) }).collect())
        .collect();
    BlockSpec { splitting: vec![2, 2, 2], blocks, shape: BlockShape::Diagonal, symmetry_dirs: vec![], projectible: vec![] }
        .assemble(domain6(), 1e-9)
}

/// `diag(A, B)` (or `[[A, C], [0, B]]` when `triangular`) in the splitting
/// `V₁ ⊕ V₂₃`: `A` depends on all coordinates, `B` only on `V₂₃`, and
/// `C = A·K − K·B` for a random constant `K`, which keeps `J² = −I`.
pub fn make_example2(seed: u64, degree: u32, triangular: bool) -> Result<ChartedStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = complex_block(&ALL, degree, &mut rng)?;
    let b = complex_block4(&REST, degree, &mut rng)?;
    let upper = if triangular {
        let k = DMatrix::from_fn(2, 4, |_, _| rng.gen_range(-0.5..0.5));
        let kp = poly::constant_matrix(&k, M);
        let ak = poly::matrix_product(&a, &kp);
        let kb = poly::matrix_product(&kp, &b);
        ak.iter().zip(&kb).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p.sub(q)).collect()).collect()
    } else {
        zero_block(2, 4)
    };
    let shape = if triangular { BlockShape::UpperTriangular } else { BlockShape::Diagonal };
    BlockSpec {
        splitting: vec![2, 4],
        blocks: vec![vec![a, upper], vec![zero_block(4, 2), b]],
        shape,
        symmetry_dirs: V1.to_vec(),
        projectible: vec![1],
    }
    .assemble(domain6(), 1e-9)
}

/// `diag(A(x₀, x₁), B(x₂..x₅))`: a product of a curve with a 4-dimensional
/// structure. Where `N ≠ 0` its kernel is `V₁`.
pub fn make_dg2_kernel_v1(seed: u64, degree: u32) -> Result<ChartedStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = complex_block(&V1, degree, &mut rng)?;
    let b = complex_block4(&REST, degree, &mut rng)?;
    BlockSpec {
        splitting: vec![2, 4],
        blocks: vec![vec![a, zero_block(2, 4)], vec![zero_block(4, 2), b]],
        shape: BlockShape::Diagonal,
        symmetry_dirs: V1.to_vec(),
        projectible: vec![1],
    }
    .assemble(domain6(), 1e-9)
}

/// `diag(A, B)` with `A` depending on all coordinates and `B` an integrable
/// structure on `V₂₃`: the standard one pushed forward by the shear
/// `(y₂, y₃) ↦ (y₂, y₃ + f(y₂))` in the pair coordinates, `f` quadratic.
/// Where `N ≠ 0` its kernel is transversal to `V₁`.
pub fn make_dg2_transversal(seed: u64, degree: u32) -> Result<ChartedStructure> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = complex_block(&ALL, degree, &mut rng)?;
    let f: Vec<PolyExpr> = (0..2).map(|_| sample::random_poly(M, &[2, 3], 2, 0.3, &mut rng)).collect();
    let mut plus = poly::constant_matrix(&DMatrix::identity(4, 4), M);
    let mut minus = plus.clone();
    for r in 0..2 {
        for c in 0..2 {
            let d = f[r].partial(2 + c);
            plus[2 + r][c] = d.clone();
            minus[2 + r][c] = d.scale(-1.0);
        }
    }
    let j0 = poly::constant_matrix(CsMatrix::standard(4).matrix(), M);
    let b = poly::matrix_product(&poly::matrix_product(&plus, &j0), &minus);
    BlockSpec {
        splitting: vec![2, 4],
        blocks: vec![vec![a, zero_block(2, 4)], vec![zero_block(4, 2), b]],
        shape: BlockShape::Diagonal,
        symmetry_dirs: V1.to_vec(),
        projectible: vec![1],
    }
    .assemble(domain6(), 1e-9)
}

/// `N(V_i, V_j) ⊄ V_i` for every ordered pair `i ≠ j` of coordinate planes.
pub fn genericity_check_e1(s: &ChartedStructure, x: &[f64], tol: &Tolerances) -> Result<bool> {
    if s.dim() != M {
        return Err(Error::Dimension(format!("expected dimension 6, got {}", s.dim())));
    }
    let n = field::nijenhuis_at(s, x, tol.field)?;
    for i in 0..3 {
        for j in 0..3 {
            if i == j {
                continue;
            }
            let cols: Vec<DVector<f64>> = [2 * j, 2 * j + 1]
                .into_iter()
                .flat_map(|b| [2 * i, 2 * i + 1].into_iter().map(move |a| (a, b)))
                .map(|(a, b)| DVector::from_fn(M, |k, _| n.get(k, a, b)))
                .collect();
            // the span lies in V_i iff its rows outside V_i vanish
            let outside = DMatrix::from_fn(4, cols.len(), |r, c| {
                let row = (0..M).filter(|k| k / 2 != i).nth(r).expect("four rows outside V_i");
                cols[c][row]
            });
            let scale = linalg::max_abs(&DMatrix::from_columns(&cols)).max(1.0);
            if linalg::max_abs(&outside) <= tol.rank * scale {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// A 4-plane field containing the leaf direction, as an `m×4` basis.
pub type PlaneField<'a> = dyn Fn(&[f64]) -> DMatrix<f64> + Sync + 'a;

/// Quotient vectors used by [`product_planes`]: their complex lines under
/// the standard structure form a web in general position.
pub const DEFAULT_QUOTIENT_VECTORS: [[f64; 4]; 4] =
    [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [1.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 1.0]];

fn complement(v: &[usize; 2]) -> Result<[usize; 4]> {
    if v[0] == v[1] || v.iter().any(|&i| i >= M) {
        return Err(Error::Argument(format!("leaf plane needs two distinct coordinates below 6, got {v:?}")));
    }
    let mut out = [0; 4];
    let mut k = 0;
    for i in 0..M {
        if !v.contains(&i) {
            out[k] = i;
            k += 1;
        }
    }
    Ok(out)
}

fn quotient_block(j: &DMatrix<f64>, rest: &[usize; 4]) -> DMatrix<f64> {
    DMatrix::from_fn(4, 4, |r, c| j[(rest[r], rest[c])])
}

/// `Φ_α(x) = V ⊕ span(q_α, J̃(x)·q_α)` with `J̃` the quotient block of `J`:
/// the tangent planes of product foliations `V × (curve)`.
pub fn product_planes<'a>(
    s: &'a ChartedStructure,
    v: [usize; 2],
    quotient_vectors: &[[f64; 4]; 4],
) -> Result<Vec<Box<PlaneField<'a>>>> {
    let rest = complement(&v)?;
    Ok(quotient_vectors
        .iter()
        .map(|q| {
            let q = DVector::from_row_slice(q);
            let f = move |x: &[f64]| {
                let jq = quotient_block(&s.j_at(x), &rest) * &q;
                let mut b = DMatrix::zeros(M, 4);
                b[(v[0], 0)] = 1.0;
                b[(v[1], 1)] = 1.0;
                for (k, &r) in rest.iter().enumerate() {
                    b[(r, 2)] = q[k];
                    b[(r, 3)] = jq[k];
                }
                b
            };
            Box::new(f) as Box<PlaneField<'a>>
        })
        .collect())
}

/// Outcome of one numerical condition over the sample points.
#[derive(Debug, Clone, Serialize)]
pub struct Condition {
    pub passed: bool,
    pub max_residual: f64,
    /// Points at which the condition failed.
    pub failures: usize,
}

impl Condition {
    fn from_residuals(res: &[f64], tol: f64) -> Condition {
        let failures = res.iter().filter(|r| !(**r <= tol)).count();
        let max_residual = res.iter().copied().fold(0.0, f64::max);
        Condition { passed: failures == 0, max_residual, failures }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PencilReport {
    pub points: usize,
    /// `J` maps the leaf plane `V` into itself.
    pub leaf_invariant: Condition,
    /// Every plane field contains `V`.
    pub planes_contain_leaf: Condition,
    /// Failed web reconstructions, as `(point index, error code)`.
    pub web_failures: Vec<(usize, String)>,
    /// The reconstructed quotient structure equals `±` the quotient block of `J`.
    pub quotient_match: Condition,
    /// The reconstructed quotient structure is constant along `V`.
    pub shift_symmetric: Condition,
    /// The lower-left block vanishes and the quotient block is independent
    /// of the `V` coordinates, checked on polynomial terms.
    pub block_triangular: bool,
    pub is_pencil: bool,
}

fn sign_free_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    linalg::max_abs(&(a - b)).min(linalg::max_abs(&(a + b)))
}

/// Quotient structure at `x` reconstructed from the four quotient planes.
fn quotient_structure(planes: &[&PlaneField<'_>], x: &[f64], v: &[usize; 2], tol: &Tolerances) -> Result<(DMatrix<f64>, f64)> {
    let rest = complement(v)?;
    let mut contain = 0.0f64;
    let mut quotient: Vec<DMatrix<f64>> = Vec::with_capacity(4);
    for p in planes {
        let b = p(x);
        if b.nrows() != M || b.ncols() != 4 {
            return Err(Error::Dimension(format!("plane field returned {}x{}, expected 6x4", b.nrows(), b.ncols())));
        }
        let q = linalg::orthonormalize(&b, 1e-10);
        for &i in v {
            let e = DVector::from_fn(M, |r, _| if r == i { 1.0 } else { 0.0 });
            contain = contain.max(linalg::distance_to_span(&q, &e));
        }
        let projected = DMatrix::from_fn(4, 4, |r, c| b[(rest[r], c)]);
        let basis = linalg::column_space(&projected, tol.rank, tol.zero);
        if basis.ncols() != 2 {
            return Err(Error::SingularConfiguration(format!("quotient plane has rank {}", basis.ncols())));
        }
        quotient.push(basis);
    }
    let web = PlaneWeb4::new([quotient[0].clone(), quotient[1].clone(), quotient[2].clone(), quotient[3].clone()])?;
    let sol = webs::web_to_j(&web)?;
    Ok((sol.j.into_matrix(), contain))
}

/// Checks the pencil conditions for the leaf plane `V` (two coordinate
/// indices) and four plane fields containing it, at the given points.
pub fn verify_pencil(
    s: &ChartedStructure,
    v: [usize; 2],
    planes: &[&PlaneField<'_>],
    points: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<PencilReport> {
    if s.dim() != M {
        return Err(Error::Dimension(format!("pencils need dimension 6, got {}", s.dim())));
    }
    let rest = complement(&v)?;
    if planes.len() != 4 {
        return Err(Error::Argument(format!("exactly four plane fields are required, got {}", planes.len())));
    }
    let dom = s.domain();

    struct PointResult {
        leaf: f64,
        contain: f64,
        web_error: Option<String>,
        quotient: f64,
        shift: f64,
    }
    let results: Vec<PointResult> = points
        .par_iter()
        .map(|x| -> Result<PointResult> {
            let j = field::eval_j(s, x, tol.field)?.into_matrix();
            let scale = linalg::max_abs(&j).max(1.0);
            let leaf = rest.iter().flat_map(|&r| v.iter().map(move |&c| (r, c))).map(|(r, c)| j[(r, c)].abs()).fold(0.0, f64::max) / scale;
            let d = quotient_block(&j, &rest);
            match quotient_structure(planes, x, &v, tol) {
                Err(e) => Ok(PointResult { leaf, contain: 0.0, web_error: Some(e.code().to_string()), quotient: f64::INFINITY, shift: f64::INFINITY }),
                Ok((jt, contain)) => {
                    let quotient = sign_free_distance(&jt, &d) / (scale * scale);
                    // axis-aligned partners differing only in the V coordinates
                    let mut shift = 0.0f64;
                    for &axis in &v {
                        for frac in [0.2, 0.8] {
                            let mut y = x.clone();
                            y[axis] = dom.min[axis] + frac * (dom.max[axis] - dom.min[axis]);
                            let r = match quotient_structure(planes, &y, &v, tol) {
                                Ok((jy, _)) => sign_free_distance(&jt, &jy),
                                Err(_) => f64::INFINITY,
                            };
                            shift = shift.max(r);
                        }
                    }
                    Ok(PointResult { leaf, contain, web_error: None, quotient, shift })
                }
            }
        })
        .collect::<Result<_>>()?;

    let col = |f: &dyn Fn(&PointResult) -> f64| results.iter().map(f).collect::<Vec<f64>>();
    let leaf_invariant = Condition::from_residuals(&col(&|r| r.leaf), tol.alg);
    let planes_contain_leaf = Condition::from_residuals(&col(&|r| r.contain), tol.alg);
    let quotient_match = Condition::from_residuals(&col(&|r| r.quotient), tol.rank);
    let shift_symmetric = Condition::from_residuals(&col(&|r| r.shift), tol.field);
    let web_failures: Vec<(usize, String)> =
        results.iter().enumerate().filter_map(|(i, r)| r.web_error.clone().map(|e| (i, e))).collect();
    let block_triangular = rest.iter().all(|&r| v.iter().all(|&c| s.entry(r, c).is_zero()))
        && rest.iter().all(|&r| rest.iter().all(|&c| s.entry(r, c).independent_of(&v)));
    let is_pencil = leaf_invariant.passed
        && planes_contain_leaf.passed
        && web_failures.is_empty()
        && quotient_match.passed
        && shift_symmetric.passed
        && block_triangular;
    Ok(PencilReport {
        points: points.len(),
        leaf_invariant,
        planes_contain_leaf,
        web_failures,
        quotient_match,
        shift_symmetric,
        block_triangular,
        is_pencil,
    })
}

/// [`verify_pencil`] with the product plane fields of
/// [`DEFAULT_QUOTIENT_VECTORS`].
pub fn verify_product_pencil(
    s: &ChartedStructure,
    v: [usize; 2],
    points: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<PencilReport> {
    let planes = product_planes(s, v, &DEFAULT_QUOTIENT_VECTORS)?;
    let refs: Vec<&PlaneField<'_>> = planes.iter().map(|b| b.as_ref()).collect();
    verify_pencil(s, v, &refs, points, tol)
}

/// A pointwise weak-degeneracy constraint on a Nijenhuis tensor.
#[derive(Debug, Clone)]
pub enum Constraint {
    /// The image lies in the given complex subspace.
    ImageIn(ComplexSubspace),
    /// The vector lies in the kernel: `N(v, ·) = 0`.
    KernelContains(DVector<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct Accumulation {
    /// Real dimension of the space of antilinear tensors meeting every constraint.
    pub solution_dim: usize,
    pub forced_zero: bool,
    /// Largest constraint violation of the supplied tensor.
    pub tensor_residual: f64,
}

/// Real basis of the antilinear skew tensors for `J`, as flattened `m³` vectors.
fn antilinear_basis(j: &CsMatrix) -> Vec<NTensor> {
    let m = j.dim();
    let mut raw_cols = Vec::new();
    for k in 0..m {
        for a in 0..m {
            for b in a + 1..m {
                let mut raw = vec![0.0; m * m * m];
                raw[(k * m + a) * m + b] = 1.0;
                raw_cols.push(NTensor::antilinear_projection(j.clone(), &raw));
            }
        }
    }
    let mat = DMatrix::from_fn(m * m * m, raw_cols.len(), |r, c| {
        let (k, rest) = (r / (m * m), r % (m * m));
        raw_cols[c].get(k, rest / m, rest % m)
    });
    let q = linalg::column_space(&mat, 1e-10, 0.0);
    (0..q.ncols())
        .map(|c| NTensor::from_fn(j.clone(), |k, a, b| q[((k * m + a) * m + b, c)]))
        .collect()
}

/// Stacked values of all constraints on a tensor (zero iff satisfied).
fn constraint_values(n: &NTensor, constraints: &[Constraint]) -> Vec<f64> {
    let m = n.dim();
    let mut out = Vec::new();
    for c in constraints {
        match c {
            Constraint::ImageIn(sub) => {
                let comp = DMatrix::identity(m, m) - sub.projector();
                for a in 0..m {
                    for b in a + 1..m {
                        let col = DVector::from_fn(m, |k, _| n.get(k, a, b));
                        out.extend((&comp * col).iter());
                    }
                }
            }
            Constraint::KernelContains(v) => {
                for w in 0..m {
                    let e = DVector::from_fn(m, |r, _| if r == w { 1.0 } else { 0.0 });
                    out.extend(n.apply(v, &e).iter());
                }
            }
        }
    }
    out
}

/// Whether the constraints force every antilinear tensor meeting them to vanish.
///
/// `n` is the tensor the constraints were read from; it must satisfy them.
pub fn degeneracy_accumulation(n: &NTensor, constraints: &[Constraint], tol: &Tolerances) -> Result<Accumulation> {
    let m = n.dim();
    let j = n.structure();
    for (i, c) in constraints.iter().enumerate() {
        match c {
            Constraint::ImageIn(sub) => {
                if sub.ambient_dim() != m
                    || linalg::max_abs(&(sub.structure().matrix() - j.matrix())) > tol.alg * linalg::max_abs(j.matrix()).max(1.0)
                {
                    return Err(Error::Argument(format!("constraint {i}: subspace for a different structure")));
                }
            }
            Constraint::KernelContains(v) => {
                if v.len() != m || v.norm() == 0.0 {
                    return Err(Error::Argument(format!("constraint {i}: kernel vector must be nonzero in R^{m}")));
                }
            }
        }
    }
    let scale = n.max_abs().max(1.0);
    let tensor_residual = constraint_values(n, constraints).iter().fold(0.0, |a: f64, b| a.max(b.abs())) / scale;
    if tensor_residual > tol.rank {
        return Err(Error::Argument(format!(
            "the tensor violates its declared constraints (residual {tensor_residual:.3e})"
        )));
    }
    let basis = antilinear_basis(j);
    let cols: Vec<Vec<f64>> = basis.iter().map(|b| constraint_values(b, constraints)).collect();
    let rows = cols.first().map(|c| c.len()).unwrap_or(0);
    let solution_dim = if rows == 0 {
        basis.len()
    } else {
        let a = DMatrix::from_fn(rows, basis.len(), |r, c| cols[c][r]);
        linalg::null_space(&a, tol.rank, tol.zero).ncols()
    };
    Ok(Accumulation { solution_dim, forced_zero: solution_dim == 0, tensor_residual })
}

/// Image and kernel of a tensor as accumulation constraints.
pub fn constraints_of(n: &NTensor, tol: &Tolerances) -> Vec<Constraint> {
    let mut out = vec![Constraint::ImageIn(model::image(n, tol))];
    let ker = model::kernel(n, tol);
    out.extend(ker.basis().column_iter().map(|c| Constraint::KernelContains(c.into_owned())));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DegeneracyTag;
    use num_complex::Complex64;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    fn points(seed: u64, k: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        domain6().scaled(0.9).random_points(k, &mut rng)
    }

    #[test]
    fn blocks_are_exact_complex_structures() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for degree in 2..=6 {
            let b = complex_block(&ALL, degree, &mut rng).unwrap();
            assert!(b.iter().flatten().all(|p| p.degree() <= degree));
            for x in points(degree as u64, 20) {
                let a = poly::matrix_eval(&b, &x);
                assert!(model::acs_residual(&a) < 1e-12 * linalg::max_abs(&a).powi(2).max(1.0));
                assert!(a[(1, 0)] >= 1.0);
            }
        }
        assert!(complex_block(&ALL, 1, &mut rng).is_err());
    }

    #[test]
    fn example1_keeps_coordinate_planes_and_is_nondegenerate() {
        let s = make_example1(3, 4).unwrap();
        let pts = points(1, 100);
        let mut ndg = 0;
        for x in &pts {
            let j = s.j_at(x);
            for r in 0..6 {
                for c in 0..6 {
                    if r / 2 != c / 2 {
                        assert_eq!(j[(r, c)], 0.0);
                    }
                }
            }
            let n = field::nijenhuis_at(&s, x, 1e-9).unwrap();
            if model::degeneracy_class(&n, &tol()).tag == DegeneracyTag::Ndg {
                ndg += 1;
            }
        }
        assert!(ndg >= 90, "{ndg}");
        assert!(genericity_check_e1(&s, &pts[0], &tol()).unwrap());
        assert_eq!(make_example1(3, 4).unwrap().rows(), s.rows());
    }

    #[test]
    fn genericity_fails_for_special_blocks() {
        // A₁ constant, A₂ and A₃ independent of the V₁ coordinates:
        // N(V₂, V₁) = 0 ⊂ V₂
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a1 = poly::constant_matrix(CsMatrix::standard(2).matrix(), M);
        let a2 = complex_block(&REST, 2, &mut rng).unwrap();
        let a3 = complex_block(&REST, 2, &mut rng).unwrap();
        let blocks = vec![
            vec![a1, zero_block(2, 2), zero_block(2, 2)],
            vec![zero_block(2, 2), a2, zero_block(2, 2)],
            vec![zero_block(2, 2), zero_block(2, 2), a3],
        ];
        let s = BlockSpec { splitting: vec![2, 2, 2], blocks, shape: BlockShape::Diagonal, symmetry_dirs: vec![], projectible: vec![] }
            .assemble(domain6(), 1e-9)
            .unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 0.5, -0.1];
        assert!(!genericity_check_e1(&s, &x, &tol()).unwrap());
        let n = field::nijenhuis_at(&s, &x, 1e-9).unwrap();
        for a in 2..4 {
            for b in 0..2 {
                assert!((0..6).all(|k| n.get(k, a, b).abs() < 1e-12));
            }
        }
        let flat = ChartedStructure::constant(&CsMatrix::standard(6), domain6()).unwrap();
        assert!(!genericity_check_e1(&flat, &x, &tol()).unwrap());
    }

    #[test]
    fn example2_is_degenerate_and_projectible() {
        for triangular in [false, true] {
            for seed in 0..3 {
                let s = make_example2(seed, 4, triangular).unwrap();
                for r in 2..6 {
                    for c in 2..6 {
                        assert!(s.entry(r, c).independent_of(&V1));
                    }
                    for c in 0..2 {
                        assert!(s.entry(r, c).is_zero());
                    }
                }
                for x in points(seed, 50) {
                    let n = field::nijenhuis_at(&s, &x, 1e-9).unwrap();
                    let tag = model::degeneracy_class(&n, &tol()).tag;
                    assert!(matches!(tag, DegeneracyTag::Dg1 | DegeneracyTag::Dg2 | DegeneracyTag::Zero), "{tag}");
                }
            }
        }
    }

    #[test]
    fn block_spec_rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = complex_block(&ALL, 2, &mut rng).unwrap();
        let b = complex_block4(&ALL, 2, &mut rng).unwrap();
        let spec = BlockSpec {
            splitting: vec![2, 4],
            blocks: vec![vec![a.clone(), zero_block(2, 4)], vec![zero_block(4, 2), b.clone()]],
            shape: BlockShape::Diagonal,
            symmetry_dirs: V1.to_vec(),
            projectible: vec![1],
        };
        assert!(matches!(spec.assemble(domain6(), 1e-9), Err(Error::Argument(_))));
        let mut lower = spec.clone();
        lower.projectible.clear();
        lower.blocks[1][0][0][0] = PolyExpr::constant(M, 1.0);
        assert!(matches!(lower.assemble(domain6(), 1e-9), Err(Error::Argument(_))));
        let mut odd = spec;
        odd.splitting = vec![3, 3];
        assert!(matches!(odd.assemble(domain6(), 1e-9), Err(Error::Dimension(_))));
    }

    #[test]
    fn dg2_kernels() {
        let v1 = DMatrix::from_fn(6, 2, |r, c| if r == c { 1.0 } else { 0.0 });
        let s1 = make_dg2_kernel_v1(2, 4).unwrap();
        let s2 = make_dg2_transversal(2, 4).unwrap();
        let v1s = ComplexSubspace::from_orthonormal(v1.clone(), &CsMatrix::standard(6));
        for x in points(5, 20) {
            let c1 = model::degeneracy_class(&field::nijenhuis_at(&s1, &x, 1e-9).unwrap(), &tol());
            assert_eq!(c1.tag, DegeneracyTag::Dg2);
            let k1 = c1.kernel.unwrap();
            assert!(linalg::max_principal_angle(k1.basis(), &v1) < 1e-6);
            let c2 = model::degeneracy_class(&field::nijenhuis_at(&s2, &x, 1e-9).unwrap(), &tol());
            assert_eq!(c2.tag, DegeneracyTag::Dg2);
            let k2 = c2.kernel.unwrap();
            assert_eq!(k2.real_dim(), 2);
            assert!(k2.is_transversal_to(&v1s));
        }
    }

    #[test]
    fn pencils_from_examples() {
        let pts = points(9, 10);
        for triangular in [false, true] {
            let s = make_example2(17, 4, triangular).unwrap();
            let r = verify_product_pencil(&s, V1, &pts, &tol()).unwrap();
            assert!(r.is_pencil, "{r:?}");
        }
        let s = make_example1(17, 4).unwrap();
        let r = verify_product_pencil(&s, V1, &pts, &tol()).unwrap();
        assert!(!r.shift_symmetric.passed && !r.block_triangular && !r.is_pencil);
        assert!(r.leaf_invariant.passed && r.quotient_match.passed);
        let flat = ChartedStructure::constant(&CsMatrix::standard(6), domain6()).unwrap();
        assert!(verify_product_pencil(&flat, V1, &pts, &tol()).unwrap().is_pencil);
        assert!(verify_product_pencil(&flat, [0, 0], &pts, &tol()).is_err());
    }

    #[test]
    fn pencil_planes_must_form_a_web() {
        let flat = ChartedStructure::constant(&CsMatrix::standard(6), domain6()).unwrap();
        // two equal quotient planes
        let q = [[1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 1.0, 0.0], [1.0, 0.0, 0.0, 1.0]];
        let planes = product_planes(&flat, V1, &q).unwrap();
        let refs: Vec<&PlaneField<'_>> = planes.iter().map(|b| b.as_ref()).collect();
        let r = verify_pencil(&flat, V1, &refs, &points(1, 3), &tol()).unwrap();
        assert_eq!(r.web_failures.len(), 3);
        assert!(!r.is_pencil);
    }

    /// A tensor for the standard structure on `R⁶` with image in the first
    /// `k` complex coordinates, moved by a random complex-linear map.
    fn tensor_with_image(k: usize, rng: &mut ChaCha8Rng) -> NTensor {
        let j = CsMatrix::standard(6);
        let vals: Vec<Complex64> =
            (0..27).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let raw = NTensor::from_complex_components(&j, |p, q, r| if r < k { vals[(p * 3 + q) * 3 + r] } else { Complex64::new(0.0, 0.0) });
        let p = sample::random_invertible_complex_linear(&j, rng);
        raw.transform(&p, 1e-8).unwrap()
    }

    #[test]
    fn accumulation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let j = CsMatrix::standard(6);
        let zero = NTensor::zero(j.clone());
        let plane = ComplexSubspace::from_orthonormal(sample::random_complex_plane(&j, 2, &mut rng), &j);
        let v = zero_tensor_verdict(&zero, &[Constraint::ImageIn(plane.clone())]);
        assert!(!v.forced_zero);
        assert_eq!(degeneracy_accumulation(&zero, &[], &tol()).unwrap().solution_dim, 18);

        let n = tensor_with_image(2, &mut rng);
        let img = model::image(&n, &tol());
        assert_eq!(img.complex_dim(), 2);
        let verdict = degeneracy_accumulation(&n, &[Constraint::ImageIn(img)], &tol()).unwrap();
        assert!(!verdict.forced_zero);
        assert_eq!(verdict.solution_dim, 12);

        // n violates an unrelated image constraint
        assert!(degeneracy_accumulation(&n, &[Constraint::ImageIn(plane)], &tol()).is_err());

        let mut forced = 0;
        for _ in 0..100 {
            let cs: Vec<Constraint> = (0..5)
                .map(|_| Constraint::ImageIn(ComplexSubspace::from_orthonormal(sample::random_complex_plane(&j, 2, &mut rng), &j)))
                .collect();
            if degeneracy_accumulation(&zero, &cs, &tol()).unwrap().forced_zero {
                forced += 1;
            }
        }
        assert_eq!(forced, 100);
    }

    fn zero_tensor_verdict(n: &NTensor, cs: &[Constraint]) -> Accumulation {
        degeneracy_accumulation(n, cs, &tol()).unwrap()
    }

    #[test]
    fn accumulation_of_two_planes_and_a_kernel() {
        // two weak degeneracies along one plane, then a kernel, then a third
        // plane independent of it
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let j = CsMatrix::standard(6);
        let n = random_dg2(&mut rng);
        let cs = constraints_of(&n, &tol());
        let v = degeneracy_accumulation(&n, &cs, &tol()).unwrap();
        assert!(!v.forced_zero);
        let mut more = cs.clone();
        more.push(Constraint::ImageIn(ComplexSubspace::from_orthonormal(sample::random_complex_plane(&j, 2, &mut rng), &j)));
        assert!(degeneracy_accumulation(&NTensor::zero(j), &more, &tol()).unwrap().forced_zero);
    }

    fn random_dg2(rng: &mut ChaCha8Rng) -> NTensor {
        sample::random_dg2_tensor(&CsMatrix::standard(6), rng)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adding_constraints_is_monotone(seed in 0u64..1000, extra in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let j = CsMatrix::standard(6);
            let zero = NTensor::zero(j.clone());
            let mut cs: Vec<Constraint> = Vec::new();
            let mut last = degeneracy_accumulation(&zero, &cs, &tol()).unwrap();
            for _ in 0..extra + 2 {
                let c = if rng.gen_bool(0.5) {
                    Constraint::ImageIn(ComplexSubspace::from_orthonormal(sample::random_complex_plane(&j, 2, &mut rng), &j))
                } else {
                    Constraint::KernelContains(sample::random_vector(6, &mut rng))
                };
                cs.push(c);
                let now = degeneracy_accumulation(&zero, &cs, &tol()).unwrap();
                prop_assert!(now.solution_dim <= last.solution_dim);
                prop_assert!(!last.forced_zero || now.forced_zero);
                last = now;
            }
        }
    }
}
