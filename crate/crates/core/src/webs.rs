//! Reconstruction of a linear complex structure on `R^4` from four pairwise
//! transversal planes that are all invariant under it.

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, SpectrumKind};
use crate::linalg::{self, rank_info};
use crate::model::CsMatrix;

/// Four 2-planes in `R^4`, each given by a `4×2` basis.
#[derive(Debug, Clone)]
pub struct PlaneWeb4 {
    planes: [DMatrix<f64>; 4],
}

#[derive(Serialize, Deserialize)]
struct WebFile {
    /// `planes[a][k]` is the `k`-th basis vector of plane `a`.
    planes: Vec<Vec<Vec<f64>>>,
}

impl PlaneWeb4 {
    /// Checks shapes and pairwise transversality (stacked rank 4).
    pub fn new(planes: [DMatrix<f64>; 4]) -> Result<Self> {
        for (a, p) in planes.iter().enumerate() {
            if p.nrows() != 4 || p.ncols() != 2 {
                return Err(Error::Dimension(format!("plane {a} basis is {}x{}, expected 4x2", p.nrows(), p.ncols())));
            }
            if rank_info(p, 1e-10, 0.0).rank != 2 {
                return Err(Error::DegenerateInput(format!("plane {a} basis is not of rank 2")));
            }
        }
        for a in 0..4 {
            for b in (a + 1)..4 {
                let stacked = stack(&planes[a], &planes[b]);
                if rank_info(&stacked, 1e-10, 0.0).rank != 4 {
                    return Err(Error::SingularConfiguration(format!("planes {a} and {b} are not transversal")));
                }
            }
        }
        Ok(PlaneWeb4 { planes })
    }

    pub fn plane(&self, a: usize) -> &DMatrix<f64> {
        &self.planes[a]
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(s);
        let file: WebFile = serde_path_to_error::deserialize(de).map_err(crate::field::parse_error)?;
        if file.planes.len() != 4 {
            return Err(Error::Parse(format!("planes: expected 4 planes, found {}", file.planes.len())));
        }
        let mut mats = Vec::with_capacity(4);
        for (a, p) in file.planes.iter().enumerate() {
            if p.len() != 2 || p.iter().any(|v| v.len() != 4) {
                return Err(Error::Parse(format!("planes[{a}]: expected two vectors of length 4")));
            }
            mats.push(DMatrix::from_fn(4, 2, |r, c| p[c][r]));
        }
        let planes: [DMatrix<f64>; 4] = mats.try_into().expect("four planes");
        PlaneWeb4::new(planes)
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let planes = self
            .planes
            .iter()
            .map(|p| (0..2).map(|c| (0..4).map(|r| p[(r, c)]).collect()).collect())
            .collect();
        serde_json::to_value(WebFile { planes }).expect("web serializes")
    }
}

fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    m.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
    m.view_mut((0, a.ncols()), (b.nrows(), b.ncols())).copy_from(b);
    m
}

fn to2(m: &DMatrix<f64>) -> Matrix2<f64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn invertible2(m: &Matrix2<f64>) -> bool {
    let scale = m.norm();
    scale > 0.0 && m.determinant().abs() > 1e-10 * scale * scale
}

/// The linear map `F` (bases of plane 0 → plane 1) whose graph is plane `a`
/// (`a ∈ {2, 3}`): writing `B_a = B_0·S + B_1·T`, `F = T·S⁻¹`.
pub fn graph_map(web: &PlaneWeb4, a: usize) -> Result<Matrix2<f64>> {
    if a != 2 && a != 3 {
        return Err(Error::Argument(format!("graph maps exist for planes 2 and 3, not {a}")));
    }
    let q = stack(&web.planes[0], &web.planes[1]);
    let coords = q
        .lu()
        .solve(&web.planes[a])
        .ok_or_else(|| Error::SingularConfiguration("planes 0 and 1 are not transversal".into()))?;
    let s = to2(&coords.rows(0, 2).into_owned());
    let t = to2(&coords.rows(2, 2).into_owned());
    if !invertible2(&s) || !invertible2(&t) {
        return Err(Error::SingularConfiguration(format!("plane {a} is not the graph of an isomorphism")));
    }
    Ok(t * s.try_inverse().expect("checked invertible"))
}

/// A reconstructed structure; `negated` is the other solution.
#[derive(Debug, Clone, Serialize)]
pub struct WebSolution {
    pub j: CsMatrix,
    pub negated: CsMatrix,
    /// The automorphism `L = F₃⁻¹·F₂` of plane 0, in its basis.
    pub composite: [[f64; 2]; 2],
    /// Eigenvalues of `L` written as `(λ ± i)/β`.
    pub lambda: f64,
    pub beta: f64,
}

/// Reconstructs `±J` from the web.
///
/// `L = F₃⁻¹F₂` must commute with the restriction `J₀` of `J` to plane 0,
/// which forces `J₀ = βL − λI` when `Sp(L) = {(λ ± i)/β}`. The sign is fixed
/// so that `J` maps the first basis vector of plane 0 to a vector with
/// positive second coordinate (in that plane's basis).
pub fn web_to_j(web: &PlaneWeb4) -> Result<WebSolution> {
    let f2 = graph_map(web, 2)?;
    let f3 = graph_map(web, 3)?;
    let l = f3.try_inverse().expect("graph maps are invertible") * f2;
    let tr = l.trace();
    let det = l.determinant();
    let scale2 = l.norm_squared();
    let half = tr / 2.0;
    if (l - Matrix2::identity() * half).norm() <= 1e-10 * l.norm() {
        return Err(Error::DegenerateWeb);
    }
    let disc = tr * tr - 4.0 * det;
    let band = 1e-10 * scale2;
    if disc > band {
        return Err(Error::NoComplexStructure(SpectrumKind::RealSimple));
    }
    if disc >= -band {
        return Err(Error::NoComplexStructure(SpectrumKind::JordanBox));
    }
    // eigenvalues α ± iγ, γ > 0: β = 1/γ, λ = α/γ
    let gamma = (-disc).sqrt() / 2.0;
    let beta = 1.0 / gamma;
    let lambda = half / gamma;
    let mut j0 = l * beta - Matrix2::identity() * lambda;
    if j0[(1, 0)] < 0.0 {
        j0 = -j0;
    }
    let j1 = f2 * j0 * f2.try_inverse().expect("graph maps are invertible");
    let q = stack(&web.planes[0], &web.planes[1]);
    let mut block = DMatrix::zeros(4, 4);
    for r in 0..2 {
        for c in 0..2 {
            block[(r, c)] = j0[(r, c)];
            block[(r + 2, c + 2)] = j1[(r, c)];
        }
    }
    let qinv = q.clone().try_inverse().ok_or_else(|| Error::SingularConfiguration("planes 0 and 1 are not transversal".into()))?;
    let jm = &q * block * qinv;
    let residual = crate::model::acs_residual(&jm);
    let scale = linalg::max_abs(&jm).max(1.0);
    let j = CsMatrix::new(jm, 1e-8 * scale * scale).map_err(|_| Error::InvalidStructure { residual, tolerance: 1e-8 })?;
    let worst = invariance_residual(&j, web);
    if worst > 1e-8 * scale {
        return Err(Error::SingularConfiguration(format!("reconstructed structure leaves a plane with residual {worst:.3e}")));
    }
    Ok(WebSolution {
        negated: j.negate(),
        j,
        composite: [[l[(0, 0)], l[(0, 1)]], [l[(1, 0)], l[(1, 1)]]],
        lambda,
        beta,
    })
}

/// Largest distance of `J b` from its plane, over the basis vectors `b`
/// (bases orthonormalized first).
pub fn invariance_residual(j: &CsMatrix, web: &PlaneWeb4) -> f64 {
    web.planes
        .iter()
        .map(|p| {
            let q = linalg::orthonormalize(p, 1e-12);
            (0..q.ncols())
                .map(|c| linalg::distance_to_span(&q, &j.apply(&q.column(c).into_owned())))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// True iff every plane of the web is J-invariant within `tol`.
pub fn verify_web(j: &CsMatrix, web: &PlaneWeb4, tol: f64) -> bool {
    j.dim() == 4 && invariance_residual(j, web) <= tol * linalg::max_abs(j.matrix()).max(1.0)
}

/// Number of pairwise transversal complex hyperplane foliations needed to
/// pin down a complex structure up to sign in complex dimension `n`.
pub fn min_web_size(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(Error::Argument(format!("complex dimension must be at least 2, got {n}")));
    }
    Ok(n + 2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ComplexSubspace;
    use crate::sample;
    use nalgebra::DVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn e(i: usize) -> DVector<f64> {
        DVector::from_fn(4, |r, _| if r == i { 1.0 } else { 0.0 })
    }

    fn cols(v: &[DVector<f64>]) -> DMatrix<f64> {
        DMatrix::from_columns(v)
    }

    /// Π₁ = span(e₀, e₁), Π₂ = span(e₂, e₃), Π₃ = graph of I, Π₄ = graph of `f4`.
    fn web_with(f4: Matrix2<f64>) -> PlaneWeb4 {
        let graph = |f: Matrix2<f64>| {
            let g0 = e(0) + e(2) * f[(0, 0)] + e(3) * f[(1, 0)];
            let g1 = e(1) + e(2) * f[(0, 1)] + e(3) * f[(1, 1)];
            cols(&[g0, g1])
        };
        PlaneWeb4::new([cols(&[e(0), e(1)]), cols(&[e(2), e(3)]), graph(Matrix2::identity()), graph(f4)]).unwrap()
    }

    #[test]
    fn graph_of_diagonal_is_identity() {
        let w = web_with(Matrix2::new(0.0, -1.0, 1.0, 0.0));
        assert!((graph_map(&w, 2).unwrap() - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn graph_of_rotation_plane() {
        // Π₃ = span(e₁ + f₂, e₂ − f₁)
        let p3 = cols(&[e(0) + e(3), e(1) - e(2)]);
        let p4 = cols(&[e(0) + e(2), e(1) + e(3) * 2.0]);
        let w = PlaneWeb4::new([cols(&[e(0), e(1)]), cols(&[e(2), e(3)]), p3, p4]).unwrap();
        let f = graph_map(&w, 2).unwrap();
        assert!((f - Matrix2::new(0.0, -1.0, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn plane_inside_first_factor_is_rejected() {
        let p3 = cols(&[e(0), e(1) + e(0)]);
        let r = PlaneWeb4::new([cols(&[e(0), e(1)]), cols(&[e(2), e(3)]), p3, cols(&[e(0) + e(2), e(1) + e(3)])]);
        assert!(matches!(r, Err(Error::SingularConfiguration(_))));
    }

    #[test]
    fn real_spectrum_and_jordan_box() {
        // F₃ = I, F₄ = diag(1/2, 1/3) → L = diag(2, 3)
        let w = web_with(Matrix2::new(0.5, 0.0, 0.0, 1.0 / 3.0));
        assert_eq!(web_to_j(&w).unwrap_err(), Error::NoComplexStructure(SpectrumKind::RealSimple));
        // L = I + nilpotent would make planes 2 and 3 meet; F₄ = [[1/2, −1/4], [0, 1/2]]
        // gives L = 2I + nilpotent instead
        let w = web_with(Matrix2::new(0.5, -0.25, 0.0, 0.5));
        assert_eq!(web_to_j(&w).unwrap_err(), Error::NoComplexStructure(SpectrumKind::JordanBox));
        // F₄ = 2·I → L scalar
        let w = web_with(Matrix2::identity() * 2.0);
        assert_eq!(web_to_j(&w).unwrap_err(), Error::DegenerateWeb);
    }

    fn random_web(j: &CsMatrix, rng: &mut ChaCha8Rng) -> PlaneWeb4 {
        loop {
            let planes: Vec<DMatrix<f64>> = (0..4)
                .map(|_| ComplexSubspace::complex_span(&[sample::random_vector(4, rng)], j).basis().clone())
                .collect();
            let general = (0..4).all(|a| {
                ((a + 1)..4).all(|b| {
                    let sv = stack(&planes[a], &planes[b]).svd(false, false).singular_values;
                    sv.min() > 0.05
                })
            });
            if general {
                return PlaneWeb4::new(planes.try_into().unwrap()).unwrap();
            }
        }
    }

    #[test]
    fn recovers_standard_structure_up_to_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let j0 = CsMatrix::standard(4);
        for _ in 0..200 {
            let w = random_web(&j0, &mut rng);
            let sol = web_to_j(&w).unwrap();
            let d = (sol.j.matrix() - j0.matrix()).amax().min((sol.j.matrix() + j0.matrix()).amax());
            assert!(d < 1e-10, "{d}");
            assert!(verify_web(&sol.j, &w, 1e-9));
            assert!(verify_web(&sol.negated, &w, 1e-9));
            // the spectrum of βL − λI is {±i}
            let l = Matrix2::new(sol.composite[0][0], sol.composite[0][1], sol.composite[1][0], sol.composite[1][1]);
            let k = l * sol.beta - Matrix2::identity() * sol.lambda;
            assert!(k.trace().abs() < 1e-9 && (k.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn non_complex_plane_fails_verification() {
        let j0 = CsMatrix::standard(4);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let w = random_web(&j0, &mut rng);
        let mut planes = [w.plane(0).clone(), w.plane(1).clone(), w.plane(2).clone(), w.plane(3).clone()];
        planes[3] = cols(&[e(0) + e(2), e(1) + e(2) * 0.3 + e(3) * 2.0]);
        let bad = PlaneWeb4::new(planes).unwrap();
        assert!(!verify_web(&j0, &bad, 1e-9));
    }

    #[test]
    fn no_third_solution_on_a_net() {
        // structures on plane 0 are [[a, −(1+a²)/b], [b, −a]]; scan a net and
        // keep those commuting with L
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let j = sample::random_cs_matrix(4, &mut rng);
        let w = random_web(&j, &mut rng);
        let f2 = graph_map(&w, 2).unwrap();
        let f3 = graph_map(&w, 3).unwrap();
        let l = f3.try_inverse().unwrap() * f2;
        let sol = web_to_j(&w).unwrap();
        let q = stack(w.plane(0), w.plane(1));
        let restricted = q.clone().try_inverse().unwrap() * sol.j.matrix() * &q;
        let (a0, b0) = (restricted[(0, 0)], restricted[(1, 0)]);
        let step = 1e-2;
        let mut hits = 0;
        for ia in -500..=500 {
            for ib in -500..=500 {
                let (a, b) = (ia as f64 * step, ib as f64 * step);
                if b == 0.0 {
                    continue;
                }
                let k = Matrix2::new(a, -(1.0 + a * a) / b, b, -a);
                let r = (l * k - k * l).norm() / (k.norm() * l.norm());
                if r < 1e-2 {
                    hits += 1;
                    let near = |sa: f64| ((a - sa * a0).powi(2) + (b - sa * b0).powi(2)).sqrt() < 0.2;
                    assert!(near(1.0) || near(-1.0), "spurious solution at ({a}, {b})");
                }
            }
        }
        if a0.abs() < 5.0 && b0.abs() < 5.0 && b0.abs() > 0.05 {
            assert!(hits > 0);
        }
    }

    #[test]
    fn web_size() {
        assert_eq!(min_web_size(2).unwrap(), 4);
        assert_eq!(min_web_size(3).unwrap(), 5);
        assert_eq!(min_web_size(10).unwrap(), 12);
        assert!(min_web_size(1).is_err());
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let w = random_web(&CsMatrix::standard(4), &mut rng);
        let text = serde_json::to_string(&w.to_json_value()).unwrap();
        let back = PlaneWeb4::from_json_str(&text).unwrap();
        assert_eq!(back.plane(2), w.plane(2));
    }
}
