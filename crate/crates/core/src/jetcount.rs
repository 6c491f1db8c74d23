//! Dimension bookkeeping for differential invariants of almost complex
//! structures: ranks of jet-group fibers against fibers of the structure
//! bundle's jet tower.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Rank of the order-`l` part of the jet group of diffeomorphisms of
/// `R^m`: homogeneous degree-`l` vector-valued polynomials, `m·C(m+l−1, l)`.
pub fn jet_fiber_rank(m: u64, l: u64) -> Result<u64> {
    if m < 2 || l < 1 {
        return Err(Error::Argument(format!("need m >= 2 and l >= 1, got m = {m}, l = {l}")));
    }
    Ok(m * binomial(m + l - 1, l))
}

/// Fiber dimension of the order-`l` layer of the structure-bundle tower,
/// `2n²·C(2n+l−1, l)`, where `2n² = dim GL(2n,R) − dim GL(n,C)`.
pub fn structure_fiber_rank(n: u64, l: u64) -> Result<u64> {
    if n < 2 {
        return Err(Error::Argument(format!("need n >= 2, got {n}")));
    }
    Ok(2 * n * n * binomial(2 * n + l - 1, l))
}

/// Stabilizer dimensions entering the count, as stated in the source
/// argument rather than derived here.
///
/// | n | order | value | statement |
/// |---|-------|-------|-----------|
/// | 2 | 1 | 8 | the first-order action on the structure fiber is transitive with 8-dimensional stabilizer |
/// | 2 | 2 | 8 | the second-order action is again transitive with 8-dimensional stabilizer |
/// | 2 | 3 | 0 | ranks 80 and 80: transitive |
/// | 3 | 1 | 18 | transitive with 18-dimensional stabilizer |
/// | 3 | 2 | 18 + 2 | the expected 18, plus 2 because generic orbits of GL(3,C) on linear Nijenhuis tensors have codimension 2 |
pub const STABILIZERS_N2: [u64; 3] = [8, 8, 0];
pub const STABILIZERS_N3: [u64; 2] = [18, 18];
/// Extra stabilizer dimension for n = 3 at order 2 (codimension of generic orbits).
pub const EXTRA_STABILIZER_N3: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRow {
    /// Jet order `l` of the diffeomorphism group layer.
    pub order: u64,
    /// `rank ρ_{l,l−1}`.
    pub jet_rank: u64,
    /// Fiber rank of the structure layer of order `l − 1`.
    pub structure_rank: u64,
    /// Cited stabilizer dimension at this order, when one is used.
    pub stabilizer: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountTable {
    pub n: u64,
    pub rows: Vec<CountRow>,
    /// Number of first-order invariants (exact for n ≤ 3, a lower bound above).
    pub first_order_invariants: u64,
    /// Order at which `invariant_bound` applies.
    pub bound_order: u64,
    pub invariant_bound: u64,
}

fn rows(n: u64, orders: u64, stabs: &[u64]) -> Result<Vec<CountRow>> {
    (1..=orders)
        .map(|l| {
            Ok(CountRow {
                order: l,
                jet_rank: jet_fiber_rank(2 * n, l)?,
                structure_rank: structure_fiber_rank(n, l - 1)?,
                stabilizer: stabs.get(l as usize - 1).copied(),
            })
        })
        .collect()
}

/// Lower bounds on the number of differential invariants.
///
/// * `n = 2`: none up to order 2; at order 4 the structure layer exceeds
///   the jet layer plus the accumulated stabilizer by `160 − 140 − 16 = 4`.
/// * `n = 3`: two first-order invariants; at order 3,
///   `378 − 336 − 18·2 − 2 = 4`.
/// * `n > 3`: `n²(n−1) − 2n² = n²(n−3)` first-order invariants.
pub fn invariant_count_bound(n: u64) -> Result<CountTable> {
    match n {
        0 | 1 => Err(Error::Argument(format!("need n >= 2, got {n}"))),
        2 => {
            let rows = rows(2, 4, &STABILIZERS_N2)?;
            let accumulated: u64 = STABILIZERS_N2[..2].iter().sum();
            let last = &rows[3];
            let bound = last.structure_rank - last.jet_rank - accumulated;
            Ok(CountTable { n, rows, first_order_invariants: 0, bound_order: 4, invariant_bound: bound })
        }
        3 => {
            let rows = rows(3, 3, &STABILIZERS_N3)?;
            let last = &rows[2];
            let bound = last.structure_rank - last.jet_rank - STABILIZERS_N3[0] * 2 - EXTRA_STABILIZER_N3;
            Ok(CountTable {
                n,
                rows,
                first_order_invariants: EXTRA_STABILIZER_N3,
                bound_order: 3,
                invariant_bound: bound,
            })
        }
        _ => {
            let rows = rows(n, 2, &[])?;
            let tensors = n * n * (n - 1);
            let group = 2 * n * n;
            let bound = tensors - group.min(tensors);
            Ok(CountTable { n, rows, first_order_invariants: bound, bound_order: 1, invariant_bound: bound })
        }
    }
}

impl fmt::Display for CountTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "n = {}", self.n)?;
        writeln!(f, "{:>5}  {:>10}  {:>14}  {:>10}", "order", "jet rank", "structure rank", "stabilizer")?;
        for r in &self.rows {
            let stab = r.stabilizer.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
            writeln!(f, "{:>5}  {:>10}  {:>14}  {:>10}", r.order, r.jet_rank, r.structure_rank, stab)?;
        }
        writeln!(f, "first-order invariants: {}", self.first_order_invariants)?;
        write!(f, "invariant bound at order {}: {}", self.bound_order, self.invariant_bound)
    }
}
