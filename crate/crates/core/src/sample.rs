//! Seeded random generators for structures, tensors, diffeomorphisms and
//! test points. Everything here is deterministic given the RNG state.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::field::{ChartedStructure, DiffeoPair, Domain};
use crate::model::{CsMatrix, NTensor};
use crate::poly::{self, monomials_up_to, PolyExpr, PolyMatrix, Term};

pub fn random_vector(m: usize, rng: &mut impl Rng) -> DVector<f64> {
    DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0))
}

/// A random matrix with condition number at most 10.
pub fn random_invertible(m: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    loop {
        let p = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let sv = p.clone().svd(false, false).singular_values;
        let (smax, smin) = (sv.max(), sv.min());
        if smin > 0.0 && smax / smin <= 10.0 {
            return p;
        }
    }
}

/// `P·J₀·P⁻¹` for a random well-conditioned `P`.
pub fn random_cs_matrix(m: usize, rng: &mut impl Rng) -> CsMatrix {
    let p = random_invertible(m, rng);
    CsMatrix::standard(m).conjugate(&p, 1e-8).expect("conjugate of the standard structure")
}

/// A random skew J-antilinear tensor (projection of uniform entries).
pub fn random_ntensor(j: &CsMatrix, rng: &mut impl Rng) -> NTensor {
    let m = j.dim();
    let raw: Vec<f64> = (0..m * m * m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    NTensor::antilinear_projection(j.clone(), &raw)
}

fn random_complex(rng: &mut impl Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// A random tensor whose image is a single complex line; for `n = 3` its
/// kernel is a complex line too.
pub fn random_dg2_tensor(j: &CsMatrix, rng: &mut impl Rng) -> NTensor {
    let n = j.dim() / 2;
    let vals: Vec<Complex64> = (0..n * n).map(|_| random_complex(rng)).collect();
    let raw = NTensor::from_complex_components(j, |p, q, r| if r == 0 { vals[p * n + q] } else { Complex64::new(0.0, 0.0) });
    // move the image off the first adapted vector
    let p = random_invertible_complex_linear(j, rng);
    raw.transform(&p, 1e-8).expect("complex-linear change of basis")
}

/// A random tensor whose image is a complex plane (`n = 3`: class DG1).
pub fn random_dg1_tensor(j: &CsMatrix, rng: &mut impl Rng) -> NTensor {
    let n = j.dim() / 2;
    let vals: Vec<Complex64> = (0..2 * n * n).map(|_| random_complex(rng)).collect();
    let raw = NTensor::from_complex_components(j, |p, q, r| if r < 2 { vals[(r * n + p) * n + q] } else { Complex64::new(0.0, 0.0) });
    let p = random_invertible_complex_linear(j, rng);
    raw.transform(&p, 1e-8).expect("complex-linear change of basis")
}

/// A random real matrix commuting with `J` (a complex-linear automorphism).
pub fn random_invertible_complex_linear(j: &CsMatrix, rng: &mut impl Rng) -> DMatrix<f64> {
    // I + G/(2|G|) has complex singular values in [1/2, 3/2]
    let n = j.dim() / 2;
    let g = DMatrix::from_fn(n, n, |_, _| random_complex(rng));
    let g = g.scale(0.5 / g.clone().svd(false, false).singular_values.max());
    let mut real = DMatrix::zeros(2 * n, 2 * n);
    for p in 0..n {
        for q in 0..n {
            let z = g[(p, q)] + if p == q { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) };
            real[(2 * p, 2 * q)] = z.re;
            real[(2 * p, 2 * q + 1)] = -z.im;
            real[(2 * p + 1, 2 * q)] = z.im;
            real[(2 * p + 1, 2 * q + 1)] = z.re;
        }
    }
    let frame = j.adapted_frame();
    let inv = frame.clone().try_inverse().expect("adapted frame is a basis");
    frame * real * inv
}

/// Random polynomial in `num_vars` variables using only `vars`, with every
/// monomial of degree `≤ degree` present and coefficients in `[−scale, scale]`.
pub fn random_poly(num_vars: usize, vars: &[usize], degree: u32, scale: f64, rng: &mut impl Rng) -> PolyExpr {
    let terms = monomials_up_to(vars.len(), degree)
        .into_iter()
        .map(|e| {
            let mut powers = vec![0; num_vars];
            for (k, &v) in vars.iter().enumerate() {
                powers[v] = e[k];
            }
            Term { coef: rng.gen_range(-scale..scale), powers }
        })
        .collect();
    PolyExpr::from_terms(num_vars, terms)
}

/// `(I + X)` and `(I − X)` for a random polynomial `X` supported on
/// rows `s` and columns `t` (disjoint), so that `X² = 0`.
fn nilpotent_pair(m: usize, s: &[usize], t: &[usize], degree: u32, rng: &mut impl Rng) -> (PolyMatrix, PolyMatrix) {
    let all: Vec<usize> = (0..m).collect();
    let mut plus: PolyMatrix = poly::constant_matrix(&DMatrix::identity(m, m), m);
    let mut minus = plus.clone();
    for &r in s {
        for &c in t {
            let x = random_poly(m, &all, degree, 0.5, rng);
            plus[r][c] = x.clone();
            minus[r][c] = x.scale(-1.0);
        }
    }
    (plus, minus)
}

/// One conjugation layer `C·(I+X)·J·(I−X)·C⁻¹`.
fn layer(j: &PolyMatrix, m: usize, degree: u32, invariant_split: bool, rng: &mut impl Rng) -> PolyMatrix {
    let mut pairs: Vec<usize> = (0..m / 2).collect();
    pairs.shuffle(rng);
    let (s, t): (Vec<usize>, Vec<usize>) = if invariant_split {
        // S a union of J₀-pairs, so X·J₀·X = 0 and the degree does not double
        let s: Vec<usize> = pairs[..m / 4].iter().flat_map(|&p| [2 * p, 2 * p + 1]).collect();
        let t = (0..m).filter(|i| !s.contains(i)).collect();
        (s, t)
    } else {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(rng);
        let s = idx[..m / 2].to_vec();
        let t = idx[m / 2..].to_vec();
        (s, t)
    };
    let (plus, minus) = nilpotent_pair(m, &s, &t, degree, rng);
    let c = random_invertible(m, rng);
    let cinv = c.clone().try_inverse().expect("invertible");
    let cp = poly::constant_matrix(&c, m);
    let cip = poly::constant_matrix(&cinv, m);
    let inner = poly::matrix_product(&poly::matrix_product(&plus, j), &minus);
    poly::matrix_product(&poly::matrix_product(&cp, &inner), &cip)
}

/// A random polynomial structure of total degree at most `degree` on
/// `[−1, 1]^m`: the standard structure conjugated by products of constant
/// matrices and unipotent polynomial matrices.
pub fn random_structure(m: usize, degree: u32, rng: &mut impl Rng) -> ChartedStructure {
    let j0 = poly::constant_matrix(CsMatrix::standard(m).matrix(), m);
    let rows = match degree {
        0 => layer(&j0, m, 0, true, rng),
        1 => layer(&j0, m, 1, true, rng),
        2 | 3 => layer(&j0, m, 1, false, rng),
        _ => {
            let e = degree / 4;
            let inner = layer(&j0, m, e, false, rng);
            layer(&inner, m, e, false, rng)
        }
    };
    ChartedStructure::new(Domain::cube(m, -1.0, 1.0), rows, 1e-8).expect("conjugates of J0 satisfy J^2 = -I")
}

/// A random polynomial diffeomorphism `L₂ ∘ σ ∘ L₁` with `σ` a shear
/// `y_T = x_T + f(x_S)` of degree `degree`, restricted to a codomain box
/// whose preimage lies inside `domain`.
pub fn random_diffeo(domain: &Domain, degree: u32, rng: &mut impl Rng) -> DiffeoPair {
    let m = domain.dim();
    let c = domain.center();
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(rng);
    let s: Vec<usize> = idx[..m / 2].to_vec();
    let t: Vec<usize> = idx[m / 2..].to_vec();
    let l1 = random_invertible(m, rng);
    let l2 = random_invertible(m, rng);
    let affine = |a: &DMatrix<f64>, shift_in: &[f64], shift_out: &[f64]| -> Vec<PolyExpr> {
        // z = a·(x − shift_in) + shift_out
        (0..m)
            .map(|r| {
                let mut p = PolyExpr::constant(m, shift_out[r]);
                for k in 0..m {
                    p = p.add(&PolyExpr::var(m, k).add(&PolyExpr::constant(m, -shift_in[k])).scale(a[(r, k)]));
                }
                p
            })
            .collect()
    };
    let zero = vec![0.0; m];
    let shear: Vec<PolyExpr> = (0..m)
        .map(|r| if t.contains(&r) { random_poly(m, &s, degree, 0.3, rng) } else { PolyExpr::zero(m) })
        .collect();
    let ident: Vec<PolyExpr> = (0..m).map(|r| PolyExpr::var(m, r)).collect();
    let fwd_shear: Vec<PolyExpr> = ident.iter().zip(&shear).map(|(a, b)| a.add(b)).collect();
    let inv_shear: Vec<PolyExpr> = ident.iter().zip(&shear).map(|(a, b)| a.sub(b)).collect();
    let l1p = affine(&l1, &c, &zero);
    let l2p = affine(&l2, &zero, &zero);
    let forward: Vec<PolyExpr> = l2p.iter().map(|p| p.compose(&fwd_shear.iter().map(|q| q.compose(&l1p)).collect::<Vec<_>>())).collect();
    let l1i = l1.clone().try_inverse().expect("invertible");
    let l2i = l2.clone().try_inverse().expect("invertible");
    let l2ip = affine(&l2i, &zero, &zero);
    let l1ip = affine(&l1i, &zero, &c);
    let inverse: Vec<PolyExpr> = l1ip.iter().map(|p| p.compose(&inv_shear.iter().map(|q| q.compose(&l2ip)).collect::<Vec<_>>())).collect();

    // shrink the codomain box until its preimage sits inside the domain
    let eval = |ps: &[PolyExpr], x: &[f64]| -> Vec<f64> { ps.iter().map(|p| p.eval(x)).collect() };
    let y0 = eval(&forward, &c);
    let inner = domain.scaled(0.95);
    let mut rho = 0.5 * domain.size();
    loop {
        let cod = Domain { min: y0.iter().map(|v| v - rho).collect(), max: y0.iter().map(|v| v + rho).collect() };
        let probe = if m <= 6 { cod.closed_grid(4) } else { cod.random_points(2000, rng) };
        if probe.iter().all(|y| inner.contains(&eval(&inverse, y))) {
            return DiffeoPair::new(domain.clone(), cod, forward, inverse, 1e-8).expect("exact polynomial inverse");
        }
        rho *= 0.7;
    }
}

/// A random complex 2-plane in `(R^6, J)`, as an orthonormal `6×4` basis.
pub fn random_complex_plane(j: &CsMatrix, k: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let vs: Vec<DVector<f64>> = (0..k).map(|_| random_vector(j.dim(), rng)).collect();
    crate::model::ComplexSubspace::complex_span(&vs, j).basis().clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{degeneracy_class, DegeneracyTag};
    use crate::Tolerances;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn complex_linear_maps_commute_with_j() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for m in [4, 6, 8] {
            let j = random_cs_matrix(m, &mut rng);
            let p = random_invertible_complex_linear(&j, &mut rng);
            let jm = j.matrix();
            assert!((jm * &p - &p * jm).amax() < 1e-10 * p.amax() * jm.amax());
            assert!(p.try_inverse().is_some());
        }
    }

    #[test]
    fn degenerate_generators_hit_their_class() {
        let tol = Tolerances::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let j = random_cs_matrix(6, &mut rng);
            assert_eq!(degeneracy_class(&random_ntensor(&j, &mut rng), &tol).tag, DegeneracyTag::Ndg);
            assert_eq!(degeneracy_class(&random_dg1_tensor(&j, &mut rng), &tol).tag, DegeneracyTag::Dg1);
            let dg2 = degeneracy_class(&random_dg2_tensor(&j, &mut rng), &tol);
            assert_eq!(dg2.tag, DegeneracyTag::Dg2);
            assert_eq!(dg2.kernel.map(|k| k.real_dim()), Some(2));
        }
    }
}
