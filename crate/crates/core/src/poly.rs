//! Sparse multivariate polynomials with real coefficients, stored as a term
//! list. These are the entries of charted J-fields and diffeomorphisms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// One monomial `coef * x_0^p_0 * ... * x_{m-1}^p_{m-1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coef: f64,
    pub powers: Vec<u32>,
}

/// A polynomial in `num_vars` real variables.
///
/// Terms are kept merged and sorted by exponent vector, so two equal
/// polynomials have identical term lists.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyExpr {
    num_vars: usize,
    terms: Vec<Term>,
}

impl PolyExpr {
    pub fn zero(num_vars: usize) -> Self {
        PolyExpr { num_vars, terms: Vec::new() }
    }

    pub fn constant(num_vars: usize, c: f64) -> Self {
        Self::from_terms(num_vars, vec![Term { coef: c, powers: vec![0; num_vars] }])
    }

    /// The coordinate function `x_var`.
    pub fn var(num_vars: usize, var: usize) -> Self {
        let mut powers = vec![0; num_vars];
        powers[var] = 1;
        Self::from_terms(num_vars, vec![Term { coef: 1.0, powers }])
    }

    pub fn monomial(coef: f64, powers: Vec<u32>) -> Self {
        let n = powers.len();
        Self::from_terms(n, vec![Term { coef, powers }])
    }

    /// Builds a polynomial from raw terms, merging duplicates and dropping
    /// zero coefficients. Panics if an exponent vector has the wrong length.
    pub fn from_terms(num_vars: usize, terms: Vec<Term>) -> Self {
        let mut acc: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for t in terms {
            assert_eq!(t.powers.len(), num_vars, "exponent vector length mismatch");
            *acc.entry(t.powers).or_insert(0.0) += t.coef;
        }
        let terms = acc
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(powers, coef)| Term { coef, powers })
            .collect();
        PolyExpr { num_vars, terms }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Total degree; the zero polynomial has degree 0.
    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|t| t.powers.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.num_vars);
        self.terms
            .iter()
            .map(|t| {
                t.powers
                    .iter()
                    .zip(x)
                    .fold(t.coef, |acc, (&p, &xi)| if p == 0 { acc } else { acc * xi.powi(p as i32) })
            })
            .sum()
    }

    /// Exact partial derivative with respect to `var`.
    pub fn partial(&self, var: usize) -> PolyExpr {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.powers[var] > 0)
            .map(|t| {
                let mut powers = t.powers.clone();
                let p = powers[var];
                powers[var] -= 1;
                Term { coef: t.coef * p as f64, powers }
            })
            .collect();
        PolyExpr::from_terms(self.num_vars, terms)
    }

    /// True when no term involves any of `vars`.
    pub fn independent_of(&self, vars: &[usize]) -> bool {
        self.terms.iter().all(|t| vars.iter().all(|&v| t.powers[v] == 0))
    }

    pub fn scale(&self, s: f64) -> PolyExpr {
        PolyExpr::from_terms(
            self.num_vars,
            self.terms.iter().map(|t| Term { coef: t.coef * s, powers: t.powers.clone() }).collect(),
        )
    }

    pub fn add(&self, other: &PolyExpr) -> PolyExpr {
        assert_eq!(self.num_vars, other.num_vars);
        let terms = self.terms.iter().chain(other.terms.iter()).cloned().collect();
        PolyExpr::from_terms(self.num_vars, terms)
    }

    pub fn sub(&self, other: &PolyExpr) -> PolyExpr {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &PolyExpr) -> PolyExpr {
        assert_eq!(self.num_vars, other.num_vars);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let powers = a.powers.iter().zip(&b.powers).map(|(p, q)| p + q).collect();
                terms.push(Term { coef: a.coef * b.coef, powers });
            }
        }
        PolyExpr::from_terms(self.num_vars, terms)
    }

    /// Substitutes `subs[i]` for `x_i`. All substitutes must share one
    /// variable count, which becomes the variable count of the result.
    pub fn compose(&self, subs: &[PolyExpr]) -> PolyExpr {
        assert_eq!(subs.len(), self.num_vars);
        let out_vars = subs.first().map(|p| p.num_vars).unwrap_or(0);
        let mut result = PolyExpr::zero(out_vars);
        // cache powers of each substitute
        let mut pow_cache: Vec<Vec<PolyExpr>> = subs.iter().map(|s| vec![PolyExpr::constant(out_vars, 1.0), s.clone()]).collect();
        for t in &self.terms {
            let mut prod = PolyExpr::constant(out_vars, t.coef);
            for (i, &p) in t.powers.iter().enumerate() {
                if p == 0 {
                    continue;
                }
                while pow_cache[i].len() <= p as usize {
                    let next = pow_cache[i].last().unwrap().mul(&subs[i]);
                    pow_cache[i].push(next);
                }
                prod = prod.mul(&pow_cache[i][p as usize]);
            }
            result = result.add(&prod);
        }
        result
    }

    /// Same polynomial viewed in a larger variable space; variable `i` of
    /// `self` becomes variable `map[i]` of the result.
    pub fn embed(&self, num_vars: usize, map: &[usize]) -> PolyExpr {
        assert_eq!(map.len(), self.num_vars);
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut powers = vec![0; num_vars];
                for (i, &p) in t.powers.iter().enumerate() {
                    powers[map[i]] += p;
                }
                Term { coef: t.coef, powers }
            })
            .collect();
        PolyExpr::from_terms(num_vars, terms)
    }
}

/// Exponent vectors of all monomials in `num_vars` variables with total
/// degree at most `degree`, in graded order.
pub fn monomials_up_to(num_vars: usize, degree: u32) -> Vec<Vec<u32>> {
    fn rec(prefix: &mut Vec<u32>, left: usize, budget: u32, out: &mut Vec<Vec<u32>>) {
        if left == 0 {
            out.push(prefix.clone());
            return;
        }
        for p in 0..=budget {
            prefix.push(p);
            rec(prefix, left - 1, budget - p, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), num_vars, degree, &mut out);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

/// A matrix of polynomials, row-major.
pub type PolyMatrix = Vec<Vec<PolyExpr>>;

/// Constant polynomial matrix from real entries.
pub fn constant_matrix(m: &nalgebra::DMatrix<f64>, num_vars: usize) -> PolyMatrix {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| PolyExpr::constant(num_vars, m[(r, c)])).collect())
        .collect()
}

pub fn matrix_product(a: &PolyMatrix, b: &PolyMatrix) -> PolyMatrix {
    let inner = b.len();
    assert!(a.iter().all(|row| row.len() == inner), "shape mismatch");
    let cols = b.first().map(|r| r.len()).unwrap_or(0);
    let nv = a[0][0].num_vars();
    (0..a.len())
        .map(|r| {
            (0..cols)
                .map(|c| {
                    (0..inner).fold(PolyExpr::zero(nv), |acc, k| {
                        if a[r][k].is_zero() || b[k][c].is_zero() {
                            acc
                        } else {
                            acc.add(&a[r][k].mul(&b[k][c]))
                        }
                    })
                })
                .collect()
        })
        .collect()
}

pub fn matrix_sum(a: &PolyMatrix, b: &PolyMatrix) -> PolyMatrix {
    a.iter().zip(b).map(|(ra, rb)| ra.iter().zip(rb).map(|(x, y)| x.add(y)).collect()).collect()
}

pub fn matrix_eval(a: &PolyMatrix, x: &[f64]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.len(), a[0].len(), |r, c| a[r][c].eval(x))
}

impl Serialize for PolyExpr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.terms.serialize(s)
    }
}

impl<'de> Deserialize<'de> for PolyExpr {
    /// The variable count is taken from the exponent vectors; an empty term
    /// list yields a zero polynomial whose variable count is fixed up by the
    /// enclosing structure.
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let terms = Vec::<Term>::deserialize(d)?;
        let n = terms.first().map(|t| t.powers.len()).unwrap_or(0);
        if terms.iter().any(|t| t.powers.len() != n) {
            return Err(serde::de::Error::custom("terms have exponent vectors of different lengths"));
        }
        Ok(PolyExpr::from_terms(n, terms))
    }
}

impl PolyExpr {
    /// Re-declares the variable count of a zero polynomial read from a file.
    pub(crate) fn with_num_vars(mut self, n: usize) -> Option<Self> {
        if self.terms.is_empty() {
            self.num_vars = n;
            Some(self)
        } else if self.num_vars == n {
            Some(self)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_product_term() {
        // c * x0 * x1, d/dx0 = c * x1
        let p = PolyExpr::monomial(3.0, vec![1, 1]);
        let d = p.partial(0);
        assert_eq!(d, PolyExpr::monomial(3.0, vec![0, 1]));
        assert_eq!(d.eval(&[7.0, 2.0]), 6.0);
        assert!(p.partial(0).partial(0).is_zero());
    }

    #[test]
    fn exact_on_dyadic_rationals() {
        // (x - y)^3 expanded, checked at dyadic points where every
        // intermediate is exactly representable
        let x = PolyExpr::var(2, 0);
        let y = PolyExpr::var(2, 1);
        let d = x.sub(&y);
        let cube = d.mul(&d).mul(&d);
        assert_eq!(cube.degree(), 3);
        assert_eq!(cube.eval(&[0.75, 0.25]), 0.125);
        assert_eq!(cube.eval(&[-0.5, 1.5]), -8.0);
    }

    #[test]
    fn compose_with_linear_substitution() {
        // p(x0, x1) = x0^2 + x1, substitute x0 = a + b, x1 = a - b
        let p = PolyExpr::monomial(1.0, vec![2, 0]).add(&PolyExpr::var(2, 1));
        let a = PolyExpr::var(2, 0);
        let b = PolyExpr::var(2, 1);
        let q = p.compose(&[a.add(&b), a.sub(&b)]);
        for pt in [[0.3, -1.2], [2.0, 0.5]] {
            let (s, t) = (pt[0] + pt[1], pt[0] - pt[1]);
            assert!((q.eval(&pt) - (s * s + t)).abs() < 1e-12);
        }
    }

    #[test]
    fn merge_cancels_terms() {
        let p = PolyExpr::var(3, 1);
        assert!(p.sub(&p).is_zero());
        assert!(PolyExpr::var(3, 2).independent_of(&[0, 1]));
        assert!(!PolyExpr::var(3, 2).independent_of(&[2]));
    }

    #[test]
    fn monomial_count_matches_binomial() {
        // C(6 + 4, 4) = 210
        assert_eq!(monomials_up_to(6, 4).len(), 210);
        assert_eq!(monomials_up_to(4, 2).len(), 15);
        assert_eq!(monomials_up_to(4, 2)[0], vec![0, 0, 0, 0]);
    }

    #[test]
    fn json_round_trip() {
        let p = PolyExpr::monomial(-1.5, vec![0, 2, 1]).add(&PolyExpr::constant(3, 0.25));
        let s = serde_json::to_string(&p).unwrap();
        let q: PolyExpr = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
    }
}
