//! Differential invariants of almost complex structures on coordinate charts.
//!
//! The crate evaluates Nijenhuis tensors of polynomial J-fields, classifies
//! their degeneracy, builds the invariant 2-form and quadric, constructs the
//! canonical frame in real dimension 4, reconstructs complex structures from
//! webs of planes, and tests pencil and quadric hypotheses.

pub mod dim4;
pub mod error;
pub mod field;
pub mod jetcount;
pub mod linalg;
pub mod model;
pub mod pencils;
pub mod poly;
pub mod quadrics;
pub mod s6;
pub mod sample;
pub mod webs;

pub use error::{Error, Result};

use serde::Serialize;

/// Numerical thresholds shared by every module.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tolerances {
    /// Pointwise algebraic identities (`J² = −I`, antilinearity, invariance).
    pub alg: f64,
    /// Relative singular-value cut for numerical ranks.
    pub rank: f64,
    /// Field-level checks: structure validation grid, integrability verdicts.
    pub field: f64,
    /// Residuals of the finite-difference canonical frame.
    pub frame: f64,
    /// Least-squares refit residual accepted by `pullback`.
    pub fit: f64,
    /// Absolute floor under which a matrix counts as zero in rank decisions.
    pub zero: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { alg: 1e-9, rank: 1e-8, field: 1e-9, frame: 1e-4, fit: 1e-8, zero: 1e-12 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let all = [self.alg, self.rank, self.field, self.frame, self.fit, self.zero];
        if all.iter().all(|t| t.is_finite() && *t > 0.0) {
            Ok(())
        } else {
            Err(Error::Argument("tolerances must be positive and finite".into()))
        }
    }
}
