//! Pointwise linear algebra on a single tangent space: complex structure
//! matrices, Nijenhuis tensors as data, their degeneracy classes, and the
//! invariant 2-form / quadric pair built from `N ∘ N` traces.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, rank_info};
use crate::Tolerances;

/// `‖J·J + I‖_∞` (largest absolute entry).
pub fn acs_residual(j: &DMatrix<f64>) -> f64 {
    let m = j.nrows();
    linalg::max_abs(&(j * j + DMatrix::<f64>::identity(m, m)))
}

/// True iff `J² = −I` within `tol` (entrywise).
pub fn check_acs(j: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if !j.is_square() {
        return Err(Error::Dimension(format!("matrix is {}x{}, not square", j.nrows(), j.ncols())));
    }
    if !j.nrows().is_multiple_of(2) || j.nrows() == 0 {
        return Err(Error::Dimension(format!("dimension {} is not a positive even number", j.nrows())));
    }
    Ok(acs_residual(j) <= tol)
}

/// A linear complex structure on `R^m`, `m = 2n`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsMatrix(DMatrix<f64>);

impl CsMatrix {
    pub fn new(j: DMatrix<f64>, tol: f64) -> Result<Self> {
        if check_acs(&j, tol)? {
            Ok(CsMatrix(j))
        } else {
            Err(Error::InvalidStructure { residual: acs_residual(&j), tolerance: tol })
        }
    }

    /// No `J² = −I` check; for stencil points near an already validated one.
    pub(crate) fn unchecked(j: DMatrix<f64>) -> Self {
        CsMatrix(j)
    }

    /// `diag(R, …, R)` with `R = [[0, −1], [1, 0]]`, so `J e_{2p} = e_{2p+1}`.
    pub fn standard(m: usize) -> Self {
        assert!(m.is_multiple_of(2) && m > 0, "dimension must be positive and even");
        let mut j = DMatrix::zeros(m, m);
        for p in 0..m / 2 {
            j[(2 * p + 1, 2 * p)] = 1.0;
            j[(2 * p, 2 * p + 1)] = -1.0;
        }
        CsMatrix(j)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// `P·J·P⁻¹`.
    pub fn conjugate(&self, p: &DMatrix<f64>, tol: f64) -> Result<CsMatrix> {
        let pinv = p
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularConfiguration("change of basis is not invertible".into()))?;
        CsMatrix::new(p * &self.0 * pinv, tol)
    }

    pub fn negate(&self) -> CsMatrix {
        CsMatrix(-&self.0)
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    /// Greedy J-adapted real frame `(f_1, J f_1, …, f_n, J f_n)`: each `f_p` is
    /// the first standard basis vector not yet in the span.
    pub fn adapted_frame(&self) -> DMatrix<f64> {
        let m = self.dim();
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(m);
        for k in 0..m {
            if cols.len() == m {
                break;
            }
            let e = DVector::from_fn(m, |r, _| if r == k { 1.0 } else { 0.0 });
            let q = linalg::orthonormalize(&DMatrix::from_columns(&cols_or_empty(&cols, m)), 1e-10);
            if linalg::distance_to_span(&q, &e) > 1e-6 {
                let je = self.apply(&e);
                let trial = DMatrix::from_columns(&[cols.clone(), vec![e.clone(), je.clone()]].concat());
                if rank_info(&trial, 1e-10, 0.0).rank == cols.len() + 2 {
                    cols.push(e);
                    cols.push(je);
                }
            }
        }
        assert_eq!(cols.len(), m, "greedy frame did not complete");
        DMatrix::from_columns(&cols)
    }
}

fn cols_or_empty(cols: &[DVector<f64>], m: usize) -> Vec<DVector<f64>> {
    if cols.is_empty() {
        vec![DVector::zeros(m)]
    } else {
        cols.to_vec()
    }
}

impl Serialize for CsMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_rows(&self.0).serialize(s)
    }
}

/// Row-major nested vectors, used for JSON output.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect()).collect()
}

/// A skew-symmetric `(2,1)`-tensor on `R^m` attached to a complex structure.
///
/// `get(k, i, j)` is the `k`-th component of `N(e_i, e_j)`. Only the `i < j`
/// half is ever computed; the other half is mirrored, so skew-symmetry holds
/// bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NTensor {
    m: usize,
    data: Vec<f64>,
    j: CsMatrix,
}

impl NTensor {
    pub fn zero(j: CsMatrix) -> Self {
        let m = j.dim();
        NTensor { m, data: vec![0.0; m * m * m], j }
    }

    /// Evaluates `f(k, i, j)` for `i < j` and mirrors.
    pub fn from_fn(j: CsMatrix, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = NTensor::zero(j);
        let m = t.m;
        for a in 0..m {
            for b in (a + 1)..m {
                for k in 0..m {
                    let v = f(k, a, b);
                    t.data[(k * m + a) * m + b] = v;
                    t.data[(k * m + b) * m + a] = -v;
                }
            }
        }
        t
    }

    /// Builds a tensor from the pairs `N(e_i, e_j)`, `i < j`.
    pub fn from_pairs(j: CsMatrix, mut pair: impl FnMut(usize, usize) -> DVector<f64>) -> Self {
        let m = j.dim();
        let mut cache = vec![DVector::zeros(m); m * m];
        for a in 0..m {
            for b in (a + 1)..m {
                cache[a * m + b] = pair(a, b);
            }
        }
        NTensor::from_fn(j, |k, a, b| cache[a * m + b][k])
    }

    /// The antilinear tensor with complex components `comp(p, q, r)` for
    /// `p < q` in the greedy adapted frame of `j` (holomorphic convention):
    /// `N(z, w)^r = Σ conj(z^p) conj(w^q) N_{pq}^r`.
    pub fn from_complex_components(j: &CsMatrix, comp: impl Fn(usize, usize, usize) -> Complex64) -> NTensor {
        let m = j.dim();
        let n = m / 2;
        let mut c = vec![Complex64::new(0.0, 0.0); n * n * n];
        for p in 0..n {
            for q in (p + 1)..n {
                for r in 0..n {
                    let v = comp(p, q, r);
                    c[(p * n + q) * n + r] = v;
                    c[(q * n + p) * n + r] = -v;
                }
            }
        }
        // real basis vector e_a of the standard model has coordinate ζ_a at slot a/2
        let zeta = |a: usize| if a.is_multiple_of(2) { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 1.0) };
        let std = NTensor::from_pairs(CsMatrix::standard(m), |a, b| {
            let w = zeta(a).conj() * zeta(b).conj();
            let mut out = DVector::zeros(m);
            for r in 0..n {
                let z = w * c[((a / 2) * n + b / 2) * n + r];
                out[2 * r] = z.re;
                out[2 * r + 1] = z.im;
            }
            out
        });
        let frame = j.adapted_frame();
        let mut t = std.transform(&frame, f64::INFINITY).expect("adapted frame is invertible");
        // keep the caller's J bit-for-bit
        t.j = j.clone();
        t
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn structure(&self) -> &CsMatrix {
        &self.j
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.data[(k * self.m + i) * self.m + j]
    }

    /// Returns a copy with `N[k][i][j] = value` (and the mirrored entry).
    pub fn with_entry(&self, k: usize, i: usize, j: usize, value: f64) -> NTensor {
        assert_ne!(i, j, "diagonal entries are fixed at zero");
        let mut t = self.clone();
        let m = self.m;
        t.data[(k * m + i) * m + j] = value;
        t.data[(k * m + j) * m + i] = -value;
        t
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    /// `N(u, v)`.
    pub fn apply(&self, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let m = self.m;
        DVector::from_fn(m, |k, _| {
            let mut s = 0.0;
            for i in 0..m {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    s += u[i] * v[j] * self.get(k, i, j);
                }
            }
            s
        })
    }

    /// The endomorphism `v ↦ N(u, v)`.
    pub fn slot(&self, u: &DVector<f64>) -> DMatrix<f64> {
        let m = self.m;
        DMatrix::from_fn(m, m, |k, j| (0..m).map(|i| u[i] * self.get(k, i, j)).sum())
    }

    /// The endomorphism `v ↦ N(e_i, v)`.
    pub fn basis_slot(&self, i: usize) -> DMatrix<f64> {
        let m = self.m;
        DMatrix::from_fn(m, m, |k, j| self.get(k, i, j))
    }

    /// The tensor expressed in new coordinates `a = P·x`:
    /// `N'(a, b) = P·N(P⁻¹a, P⁻¹b)`, attached to `J' = P·J·P⁻¹`.
    pub fn transform(&self, p: &DMatrix<f64>, tol: f64) -> Result<NTensor> {
        let m = self.m;
        let q = p
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::SingularConfiguration("change of basis is not invertible".into()))?;
        let j2 = self.j.conjugate(p, tol)?;
        // stage 1: contract the input slots
        let mut tmp = vec![0.0; m * m * m];
        for c in 0..m {
            for i in 0..m {
                for jj in 0..m {
                    let mut s = 0.0;
                    for a in 0..m {
                        let qa = q[(a, i)];
                        if qa == 0.0 {
                            continue;
                        }
                        for b in 0..m {
                            s += self.get(c, a, b) * qa * q[(b, jj)];
                        }
                    }
                    tmp[(c * m + i) * m + jj] = s;
                }
            }
        }
        Ok(NTensor::from_fn(j2, |k, i, jj| (0..m).map(|c| p[(k, c)] * tmp[(c * m + i) * m + jj]).sum()))
    }

    /// Projects an arbitrary bilinear map `B[k][i][j]` onto the skew,
    /// J-antilinear tensors: `B ↦ ½(B(X,Y) + J·B(JX,Y))` in each slot, then
    /// skew-symmetrized.
    pub fn antilinear_projection(j: CsMatrix, raw: &[f64]) -> NTensor {
        let m = j.dim();
        assert_eq!(raw.len(), m * m * m);
        let jm = j.matrix().clone();
        let idx = |k: usize, a: usize, b: usize| (k * m + a) * m + b;
        let project_first = |b: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; m * m * m];
            for k in 0..m {
                for i in 0..m {
                    for jj in 0..m {
                        let mut s = 0.0;
                        for c in 0..m {
                            let jkc = jm[(k, c)];
                            if jkc == 0.0 {
                                continue;
                            }
                            for a in 0..m {
                                s += jkc * jm[(a, i)] * b[idx(c, a, jj)];
                            }
                        }
                        out[idx(k, i, jj)] = 0.5 * (b[idx(k, i, jj)] + s);
                    }
                }
            }
            out
        };
        let swap = |b: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; m * m * m];
            for k in 0..m {
                for i in 0..m {
                    for jj in 0..m {
                        out[idx(k, i, jj)] = b[idx(k, jj, i)];
                    }
                }
            }
            out
        };
        let p1 = project_first(raw);
        let p2 = swap(&project_first(&swap(&p1)));
        NTensor::from_fn(j, |k, a, b| 0.5 * (p2[idx(k, a, b)] - p2[idx(k, b, a)]))
    }

    /// Residuals of the defining identities on basis pairs.
    pub fn identity_residuals(&self) -> IdentityResiduals {
        let m = self.m;
        let j = self.j.matrix();
        let mut skew = 0.0_f64;
        let mut first = 0.0_f64;
        let mut second = 0.0_f64;
        let slots: Vec<DMatrix<f64>> = (0..m).map(|i| self.basis_slot(i)).collect();
        for i in 0..m {
            // N(J e_i, ·) = Σ_a J[a][i] N(e_a, ·)
            let mut jslot = DMatrix::zeros(m, m);
            for a in 0..m {
                jslot += &slots[a] * j[(a, i)];
            }
            // first slot: N(Je_i, e_w) + J N(e_i, e_w) = 0
            first = first.max(linalg::max_abs(&(&jslot + j * &slots[i])));
            // second slot: N(e_i, J e_w) + J N(e_i, e_w) = 0
            second = second.max(linalg::max_abs(&(&slots[i] * j + j * &slots[i])));
            for w in 0..m {
                for k in 0..m {
                    skew = skew.max((self.get(k, i, w) + self.get(k, w, i)).abs());
                }
            }
        }
        IdentityResiduals { skew, antilinear_first: first, antilinear_second: second }
    }
}

/// Largest violations of the Nijenhuis tensor identities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityResiduals {
    pub skew: f64,
    pub antilinear_first: f64,
    pub antilinear_second: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.skew.max(self.antilinear_first).max(self.antilinear_second)
    }
}

/// Skew-symmetry and both antilinearity identities within `tol`, measured
/// relative to `max(1, ‖N‖·‖J‖)`.
pub fn n_identities_check(n: &NTensor, tol: f64) -> bool {
    let r = n.identity_residuals();
    let scale = (n.max_abs() * linalg::max_abs(n.structure().matrix())).max(1.0);
    r.skew == 0.0 && r.antilinear_first <= tol * scale && r.antilinear_second <= tol * scale
}

/// A J-invariant real subspace, kept as an orthonormal column basis.
#[derive(Debug, Clone)]
pub struct ComplexSubspace {
    basis: DMatrix<f64>,
    j: CsMatrix,
}

impl ComplexSubspace {
    /// Span of the given columns; fails unless the span is J-invariant
    /// within `tol`.
    pub fn new(vectors: &DMatrix<f64>, j: &CsMatrix, tol: f64) -> Result<Self> {
        if vectors.nrows() != j.dim() {
            return Err(Error::Dimension(format!(
                "vectors live in R^{}, structure acts on R^{}",
                vectors.nrows(),
                j.dim()
            )));
        }
        let basis = linalg::orthonormalize(vectors, 1e-10);
        let s = ComplexSubspace { basis, j: j.clone() };
        let r = s.invariance_residual();
        if r > tol || !s.real_dim().is_multiple_of(2) {
            return Err(Error::Argument(format!(
                "span of real dimension {} is not J-invariant (residual {r:.3e})",
                s.real_dim()
            )));
        }
        Ok(s)
    }

    /// The complex span of the given vectors: `span(v, Jv, …)`.
    pub fn complex_span(vectors: &[DVector<f64>], j: &CsMatrix) -> Self {
        let m = j.dim();
        let mut cols = Vec::with_capacity(2 * vectors.len());
        for v in vectors {
            cols.push(v.clone());
            cols.push(j.apply(v));
        }
        let mat = if cols.is_empty() { DMatrix::zeros(m, 0) } else { DMatrix::from_columns(&cols) };
        ComplexSubspace { basis: linalg::orthonormalize(&mat, 1e-10), j: j.clone() }
    }

    pub(crate) fn from_orthonormal(basis: DMatrix<f64>, j: &CsMatrix) -> Self {
        ComplexSubspace { basis, j: j.clone() }
    }

    pub fn zero(j: &CsMatrix) -> Self {
        ComplexSubspace { basis: DMatrix::zeros(j.dim(), 0), j: j.clone() }
    }

    pub fn full(j: &CsMatrix) -> Self {
        ComplexSubspace { basis: DMatrix::identity(j.dim(), j.dim()), j: j.clone() }
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn structure(&self) -> &CsMatrix {
        &self.j
    }

    pub fn ambient_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn real_dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn complex_dim(&self) -> usize {
        self.real_dim() / 2
    }

    /// Largest distance of `J b` from the span, over basis vectors `b`.
    pub fn invariance_residual(&self) -> f64 {
        (0..self.real_dim())
            .map(|c| {
                let jb = self.j.apply(&self.basis.column(c).into_owned());
                linalg::distance_to_span(&self.basis, &jb)
            })
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        linalg::distance_to_span(&self.basis, v) <= tol * v.norm().max(1.0)
    }

    pub fn projector(&self) -> DMatrix<f64> {
        linalg::projector(&self.basis)
    }

    /// Largest principal angle to another subspace of the same dimension.
    pub fn angle_to(&self, other: &ComplexSubspace) -> f64 {
        linalg::max_principal_angle(&self.basis, &other.basis)
    }

    /// True when the two subspaces meet only in zero.
    pub fn is_transversal_to(&self, other: &ComplexSubspace) -> bool {
        let stacked = DMatrix::from_columns(
            &self
                .basis
                .column_iter()
                .chain(other.basis.column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        );
        if stacked.ncols() == 0 {
            return true;
        }
        rank_info(&stacked, 1e-8, 0.0).rank == self.real_dim() + other.real_dim()
    }
}

impl Serialize for ComplexSubspace {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("ComplexSubspace", 3)?;
        st.serialize_field("real_dim", &self.real_dim())?;
        st.serialize_field("complex_dim", &self.complex_dim())?;
        let cols: Vec<Vec<f64>> = self.basis.column_iter().map(|c| c.iter().copied().collect()).collect();
        st.serialize_field("basis", &cols)?;
        st.end()
    }
}

/// Degeneracy tag of a pointwise Nijenhuis tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DegeneracyTag {
    Zero,
    /// `m = 6`, image of complex dimension 3.
    Ndg,
    /// `m = 6`, image of complex dimension 2.
    Dg1,
    /// `m = 6`, image of complex dimension 1.
    Dg2,
    /// Other dimensions: complex rank of the image.
    Rank(usize),
}

impl fmt::Display for DegeneracyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DegeneracyTag::Zero => f.write_str("ZERO"),
            DegeneracyTag::Ndg => f.write_str("NDG"),
            DegeneracyTag::Dg1 => f.write_str("DG1"),
            DegeneracyTag::Dg2 => f.write_str("DG2"),
            DegeneracyTag::Rank(r) => write!(f, "RANK({r})"),
        }
    }
}

impl Serialize for DegeneracyTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DegeneracyClass {
    pub tag: DegeneracyTag,
    pub image: ComplexSubspace,
    pub kernel: Option<ComplexSubspace>,
    /// A singular value fell within a factor 10 of the rank cut, or the real
    /// rank came out odd.
    pub unreliable: bool,
    pub image_singular_values: Vec<f64>,
}

fn pair_matrix(n: &NTensor) -> DMatrix<f64> {
    let m = n.dim();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|a| ((a + 1)..m).map(move |b| (a, b))).collect();
    let mut mat = DMatrix::zeros(m, 2 * pairs.len());
    let j = n.structure().matrix();
    for (c, &(a, b)) in pairs.iter().enumerate() {
        let v = DVector::from_fn(m, |k, _| n.get(k, a, b));
        let jv = j * &v;
        mat.set_column(2 * c, &v);
        mat.set_column(2 * c + 1, &jv);
    }
    mat
}

/// The real span of all `N(e_i, e_j)`.
///
/// The columns `J·N(e_i, e_j)` are stacked alongside, which leaves the exact
/// image unchanged and keeps the numerical one J-invariant.
pub fn image(n: &NTensor, tol: &Tolerances) -> ComplexSubspace {
    let basis = linalg::column_space(&pair_matrix(n), tol.rank, tol.zero);
    ComplexSubspace::from_orthonormal(basis, n.structure())
}

/// `{v : N(v, w) = 0 for all w}`.
pub fn kernel(n: &NTensor, tol: &Tolerances) -> ComplexSubspace {
    let m = n.dim();
    let j = n.structure().matrix();
    // rows indexed by (k, w): v ↦ N(v, e_w)_k, then the same composed with J
    let mut k = DMatrix::zeros(m * m, m);
    for kk in 0..m {
        for w in 0..m {
            for i in 0..m {
                k[(kk * m + w, i)] = n.get(kk, i, w);
            }
        }
    }
    let kj = &k * j;
    let stacked = DMatrix::from_rows(
        &k.row_iter().chain(kj.row_iter()).map(|r| r.into_owned()).collect::<Vec<_>>(),
    );
    let basis = linalg::null_space(&stacked, tol.rank, tol.zero);
    ComplexSubspace::from_orthonormal(basis, n.structure())
}

pub fn degeneracy_class(n: &NTensor, tol: &Tolerances) -> DegeneracyClass {
    let info = rank_info(&pair_matrix(n), tol.rank, tol.zero);
    let img = image(n, tol);
    let ker = kernel(n, tol);
    let odd = !info.rank.is_multiple_of(2);
    let complex_rank = info.rank.div_ceil(2);
    let tag = match (n.dim(), complex_rank) {
        (_, 0) => DegeneracyTag::Zero,
        (6, 3) => DegeneracyTag::Ndg,
        (6, 2) => DegeneracyTag::Dg1,
        (6, 1) => DegeneracyTag::Dg2,
        (_, r) => DegeneracyTag::Rank(r),
    };
    DegeneracyClass {
        tag,
        image: img,
        kernel: if ker.real_dim() > 0 { Some(ker) } else { None },
        unreliable: info.unreliable || odd,
        image_singular_values: info.singular_values,
    }
}

/// `ω(ξ, η) = Tr[N(ξ, J·N(η, ·)) − N(η, J·N(ξ, ·))]` as a skew matrix.
pub fn bryant_form(n: &NTensor) -> DMatrix<f64> {
    let m = n.dim();
    let j = n.structure().matrix();
    let slots: Vec<DMatrix<f64>> = (0..m).map(|i| n.basis_slot(i)).collect();
    let jslots: Vec<DMatrix<f64>> = slots.iter().map(|s| j * s).collect();
    DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            return 0.0;
        }
        (&slots[a] * &jslots[b]).trace() - (&slots[b] * &jslots[a]).trace()
    })
}

/// `q(ξ, η) = Tr[N(ξ, N(η, ·)) + N(η, N(ξ, ·))]` as a symmetric matrix.
pub fn quadric_form(n: &NTensor) -> DMatrix<f64> {
    let m = n.dim();
    let slots: Vec<DMatrix<f64>> = (0..m).map(|i| n.basis_slot(i)).collect();
    let mut q = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let v = (&slots[a] * &slots[b]).trace() + (&slots[b] * &slots[a]).trace();
            q[(a, b)] = v;
            q[(b, a)] = v;
        }
    }
    q
}

/// Degeneracy test for a skew form: `(rank < m, kernel basis)`.
pub fn omega_degenerate(omega: &DMatrix<f64>, tol: &Tolerances) -> (bool, DMatrix<f64>) {
    let m = omega.nrows();
    let info = rank_info(omega, tol.rank, tol.zero);
    let ker = linalg::null_space(omega, tol.rank, tol.zero);
    (info.rank < m, ker)
}

/// Which complex structure on `R^m ≅ C^n` is declared to be multiplication
/// by `i` when reading off complex components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComplexConvention {
    /// `J` acts as `+i`: components are read with `(v − iJv)/2`.
    #[default]
    Holomorphic,
    /// `J` acts as `−i`: components are read with `(v + iJv)/2`.
    AntiHolomorphic,
}

/// Complex components `N_{pq}^r` of the antilinear tensor in the greedy
/// J-adapted frame, together with the map from real vectors to complex
/// coordinates.
pub struct ComplexComponents {
    pub n: usize,
    /// `comps[(p * n + q) * n + r]`.
    pub comps: Vec<Complex64>,
    frame_inv: DMatrix<f64>,
    sign: f64,
}

impl ComplexComponents {
    pub fn new(t: &NTensor, convention: ComplexConvention) -> Self {
        let frame = t.structure().adapted_frame();
        let frame_inv = frame.clone().try_inverse().expect("adapted frame is a basis");
        let sign = match convention {
            ComplexConvention::Holomorphic => 1.0,
            ComplexConvention::AntiHolomorphic => -1.0,
        };
        let n = t.dim() / 2;
        let mut cc = ComplexComponents { n, comps: vec![Complex64::new(0.0, 0.0); n * n * n], frame_inv, sign };
        for p in 0..n {
            for q in 0..n {
                let v = t.apply(&frame.column(2 * p).into_owned(), &frame.column(2 * q).into_owned());
                let z = cc.coords(&v);
                for r in 0..n {
                    cc.comps[(p * n + q) * n + r] = z[r];
                }
            }
        }
        cc
    }

    /// Complex coordinates of a real vector in the adapted frame.
    pub fn coords(&self, v: &DVector<f64>) -> Vec<Complex64> {
        let c = &self.frame_inv * v;
        (0..self.n).map(|p| Complex64::new(c[2 * p], self.sign * c[2 * p + 1])).collect()
    }

    pub fn get(&self, p: usize, q: usize, r: usize) -> Complex64 {
        self.comps[(p * self.n + q) * self.n + r]
    }

    /// `T_{pq} = Σ_{k,l} N_{pk}^l · conj(N_{ql}^k)`.
    pub fn t_matrix(&self) -> Vec<Vec<Complex64>> {
        let n = self.n;
        (0..n)
            .map(|p| {
                (0..n)
                    .map(|q| {
                        let mut s = Complex64::new(0.0, 0.0);
                        for k in 0..n {
                            for l in 0..n {
                                s += self.get(p, k, l) * self.get(q, l, k).conj();
                            }
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }
}

/// The invariant 2-form rebuilt from complex components:
/// with `T_{pq} = Σ N_{pk}^l conj(N_{ql}^k)` and the sesquilinear form
/// `T(ξ, η) = Σ conj(ξ^p) T_{pq} η^q`, returns
/// `ω'(e_a, e_b) = (T(e_a, e_b) − T(e_b, e_a)) / i` on the real basis.
///
/// Under the holomorphic convention this equals `bryant_form / 2`.
pub fn omega_complex_oracle(t: &NTensor, convention: ComplexConvention) -> DMatrix<f64> {
    let m = t.dim();
    let cc = ComplexComponents::new(t, convention);
    let tm = cc.t_matrix();
    let basis: Vec<Vec<Complex64>> = (0..m)
        .map(|a| cc.coords(&DVector::from_fn(m, |r, _| if r == a { 1.0 } else { 0.0 })))
        .collect();
    let herm = |x: &[Complex64], y: &[Complex64]| -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for p in 0..cc.n {
            for q in 0..cc.n {
                s += x[p].conj() * tm[p][q] * y[q];
            }
        }
        s
    };
    let i = Complex64::new(0.0, 1.0);
    DMatrix::from_fn(m, m, |a, b| ((herm(&basis[a], &basis[b]) - herm(&basis[b], &basis[a])) / i).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tol() -> Tolerances {
        Tolerances::default()
    }

    #[test]
    fn standard_structure_squares_to_minus_identity() {
        for m in [2, 4, 6, 8] {
            assert!(check_acs(CsMatrix::standard(m).matrix(), 1e-15).unwrap());
        }
        assert!(!check_acs(&DMatrix::identity(4, 4), 1e-9).unwrap());
    }

    #[test]
    fn odd_dimension_is_an_error() {
        let e = check_acs(&DMatrix::identity(3, 3), 1e-9).unwrap_err();
        assert!(matches!(e, Error::Dimension(_)));
        assert!(check_acs(&DMatrix::zeros(2, 3), 1e-9).is_err());
    }

    #[test]
    fn conjugation_preserves_acs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = sample::random_invertible(6, &mut rng);
            let j = CsMatrix::standard(6).conjugate(&p, 1e-9).unwrap();
            // direct multiplication
            let jj = j.matrix() * j.matrix();
            assert!((jj + DMatrix::identity(6, 6)).abs().max() < 1e-10);
        }
    }

    #[test]
    fn zero_tensor_passes_identities_and_is_fully_degenerate() {
        let n = NTensor::zero(CsMatrix::standard(6));
        assert!(n_identities_check(&n, 1e-9));
        let img = image(&n, &tol());
        assert_eq!(img.complex_dim(), 0);
        assert_eq!(kernel(&n, &tol()).real_dim(), 6);
        assert_eq!(degeneracy_class(&n, &tol()).tag, DegeneracyTag::Zero);
        assert_eq!(bryant_form(&n), DMatrix::zeros(6, 6));
        assert_eq!(quadric_form(&n), DMatrix::zeros(6, 6));
        assert_eq!(omega_complex_oracle(&n, ComplexConvention::Holomorphic), DMatrix::zeros(6, 6));
    }

    #[test]
    fn perturbed_entry_breaks_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = sample::random_cs_matrix(6, &mut rng);
        let n = sample::random_ntensor(&j, &mut rng);
        assert!(n_identities_check(&n, 1e-9));
        let bad = n.with_entry(0, 1, 2, n.get(0, 1, 2) + 1.0);
        assert!(!n_identities_check(&bad, 1e-9));
    }

    #[test]
    fn image_and_kernel_are_j_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let j = sample::random_cs_matrix(6, &mut rng);
            let n = sample::random_ntensor(&j, &mut rng);
            let img = image(&n, &tol());
            assert_eq!(img.complex_dim(), 3);
            assert!(img.invariance_residual() < 1e-9);
            let dg2 = sample::random_dg2_tensor(&j, &mut rng);
            let k = kernel(&dg2, &tol());
            assert_eq!(k.complex_dim(), 1);
            assert!(k.invariance_residual() < 1e-9);
        }
    }

    #[test]
    fn bryant_form_matches_index_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let j = sample::random_cs_matrix(6, &mut rng);
            let n = sample::random_ntensor(&j, &mut rng);
            let w = bryant_form(&n);
            let jm = j.matrix();
            let m = 6;
            // Σ_v [N(e_a, J N(e_b, e_v))]_v - (a <-> b), written out by index
            let mut oracle = DMatrix::zeros(m, m);
            for a in 0..m {
                for b in 0..m {
                    let mut s = 0.0;
                    for v in 0..m {
                        for l in 0..m {
                            for c in 0..m {
                                s += n.get(v, a, c) * jm[(c, l)] * n.get(l, b, v);
                                s -= n.get(v, b, c) * jm[(c, l)] * n.get(l, a, v);
                            }
                        }
                    }
                    oracle[(a, b)] = s;
                }
            }
            assert!((&w - &oracle).abs().max() < 1e-10 * (1.0 + oracle.abs().max()));
        }
    }

    #[test]
    fn omega_on_j_pairs_is_twice_the_square_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let j = sample::random_cs_matrix(6, &mut rng);
        let n = sample::random_ntensor(&j, &mut rng);
        let w = bryant_form(&n);
        let q = quadric_form(&n);
        for _ in 0..100 {
            let xi = sample::random_vector(6, &mut rng);
            let jxi = j.apply(&xi);
            let lhs = xi.dot(&(&w * &jxi));
            let nn = n.slot(&xi) * n.slot(&xi);
            let rhs = 2.0 * nn.trace();
            assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
            // q(ξ, ξ) by direct evaluation is the same trace
            assert!((xi.dot(&(&q * &xi)) - rhs).abs() < 1e-9 * (1.0 + rhs.abs()));
        }
    }

    #[test]
    fn quadric_is_omega_composed_with_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let j = sample::random_cs_matrix(6, &mut rng);
        let n = sample::random_ntensor(&j, &mut rng);
        let w = bryant_form(&n);
        let q = quadric_form(&n);
        assert!((&q - &q.transpose()).abs().max() == 0.0);
        assert!((&q - &w * j.matrix()).abs().max() < 1e-9 * (1.0 + q.abs().max()));
    }

    #[test]
    fn single_component_oracle_by_hand() {
        // n = 2, J = J0, only N_{12}^2 = a, so T = |a|^2 E_11 and
        // ω'(e_0, e_1) = (conj(1)·|a|^2·i − conj(i)·|a|^2·1)/i = 2|a|^2.
        let a = Complex64::new(0.6, -0.8);
        let j = CsMatrix::standard(4);
        let n = NTensor::from_complex_components(&j, |_, _, r| if r == 1 { a } else { Complex64::new(0.0, 0.0) });
        // real form: N(e_0, e_2) = Re a·e_2 + Im a·e_3
        assert_eq!(n.get(2, 0, 2), a.re);
        assert_eq!(n.get(3, 0, 2), a.im);
        assert!(n_identities_check(&n, 1e-14));
        let amp = a.norm_sqr();
        let w = omega_complex_oracle(&n, ComplexConvention::Holomorphic);
        let mut expected = DMatrix::zeros(4, 4);
        expected[(0, 1)] = 2.0 * amp;
        expected[(1, 0)] = -2.0 * amp;
        assert!((&w - &expected).abs().max() < 1e-13, "{w}");
        // the invariant form carries twice the weight
        assert!((bryant_form(&n) - expected * 2.0).abs().max() < 1e-13);
    }

    #[test]
    fn complex_components_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let j = sample::random_cs_matrix(6, &mut rng);
        let vals: Vec<Complex64> = (0..27).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let n = NTensor::from_complex_components(&j, |p, q, r| vals[(p * 3 + q) * 3 + r]);
        assert!(n_identities_check(&n, 1e-9));
        let cc = ComplexComponents::new(&n, ComplexConvention::Holomorphic);
        for p in 0..3 {
            for q in (p + 1)..3 {
                for r in 0..3 {
                    assert!((cc.get(p, q, r) - vals[(p * 3 + q) * 3 + r]).norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn random_tensors_span_expected_dimension() {
        // dim of the skew antilinear tensors on C^3 is n^2(n-1) = 18
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let j = sample::random_cs_matrix(6, &mut rng);
        let cols: Vec<DVector<f64>> = (0..40).map(|_| DVector::from_vec(dense(&sample::random_ntensor(&j, &mut rng)))).collect();
        assert_eq!(rank_info(&DMatrix::from_columns(&cols), 1e-9, 0.0).rank, 18);
    }

    #[test]
    fn bryant_form_is_equivariant_and_j_compatible() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let j = sample::random_cs_matrix(6, &mut rng);
            let n = sample::random_ntensor(&j, &mut rng);
            let w = bryant_form(&n);
            let jm = j.matrix();
            assert!((jm.transpose() * &w * jm - &w).abs().max() < 1e-9 * w.abs().max());
            assert!((&w + w.transpose()).abs().max() < 1e-12 * w.abs().max());
            let p = sample::random_invertible(6, &mut rng);
            let n2 = n.transform(&p, 1e-8).unwrap();
            let w2 = bryant_form(&n2);
            // ω'(Pξ, Pη) = ω(ξ, η)
            assert!((p.transpose() * &w2 * &p - &w).abs().max() < 1e-8 * w.abs().max().max(1.0));
            assert_eq!(degeneracy_class(&n2, &tol()).tag, degeneracy_class(&n, &tol()).tag);
        }
    }

    fn dense(n: &NTensor) -> Vec<f64> {
        let m = n.dim();
        let mut v = vec![0.0; m * m * m];
        for k in 0..m {
            for i in 0..m {
                for j in 0..m {
                    v[(k * m + i) * m + j] = n.get(k, i, j);
                }
            }
        }
        v
    }

    #[test]
    fn oracle_proportional_with_universal_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut constant = None;
        for _ in 0..50 {
            let j = sample::random_cs_matrix(6, &mut rng);
            let n = sample::random_ntensor(&j, &mut rng);
            let w = bryant_form(&n);
            let o = omega_complex_oracle(&n, ComplexConvention::Holomorphic);
            let c = o.dot(&w) / w.dot(&w);
            assert!((&o - &w * c).abs().max() < 1e-9 * w.abs().max());
            match constant {
                None => constant = Some(c),
                Some(c0) => assert!((c - c0).abs() < 1e-9),
            }
        }
        assert!(constant.unwrap() > 0.0);
        // the other convention flips the sign
        let j = CsMatrix::standard(6);
        let n = sample::random_ntensor(&j, &mut rng);
        let a = omega_complex_oracle(&n, ComplexConvention::Holomorphic);
        let b = omega_complex_oracle(&n, ComplexConvention::AntiHolomorphic);
        assert!((a + b).abs().max() < 1e-12);
    }

    #[test]
    fn omega_degenerate_on_zero_and_generic() {
        let (deg, ker) = omega_degenerate(&DMatrix::zeros(6, 6), &tol());
        assert!(deg);
        assert_eq!(ker.ncols(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let j = sample::random_cs_matrix(6, &mut rng);
        let n = sample::random_ntensor(&j, &mut rng);
        let (deg, ker) = omega_degenerate(&bryant_form(&n), &tol());
        assert!(!deg);
        assert_eq!(ker.ncols(), 0);
    }

    #[test]
    fn degeneracy_class_tags() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let j = sample::random_cs_matrix(6, &mut rng);
        let ndg = sample::random_ntensor(&j, &mut rng);
        assert_eq!(degeneracy_class(&ndg, &tol()).tag, DegeneracyTag::Ndg);
        let dg2 = sample::random_dg2_tensor(&j, &mut rng);
        let c = degeneracy_class(&dg2, &tol());
        assert_eq!(c.tag, DegeneracyTag::Dg2);
        assert!(c.kernel.is_some());
        let j4 = sample::random_cs_matrix(4, &mut rng);
        let n4 = sample::random_ntensor(&j4, &mut rng);
        assert_eq!(degeneracy_class(&n4, &tol()).tag, DegeneracyTag::Rank(1));
    }
}
