//! Exact differential algebra on jet variables.
//!
//! Polynomials ([`DiffExpr`]) and rational functions ([`RatExpr`]) in the
//! jets `u(i,j)` (`j <= 1`), the exponential `E = e^x` and the
//! pseudo-potential `g`, with coefficients in `Q[mu, s]/(s^2 - 1 - mu^2)`.
//! Total derivatives are plain rewriting rules; time derivatives of order
//! two are refused. [`Ruleset`] rewrites mixed jets on solutions.

mod expr;
mod param;
mod rational;
mod reduce;

pub use expr::{Dir, DiffExpr, GRule, JetVar, Monomial};
pub use param::{ExactParams, Param, ParamScalar, ParamValues};
pub use rational::RatExpr;
pub use reduce::{flow_residual, flux_phi, pde_residual, pde_rhs, Ruleset};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum JetError {
    #[error("second t-derivative requested for u with x-order {x_order}")]
    SecondTimeDerivative { x_order: u8 },
    #[error("derivative of the pseudo-potential g requested without a substitution rule")]
    MissingPseudoPotentialRule,
    #[error("zero denominator")]
    ZeroDenominator,
    #[error("unbound symbol {0}")]
    UnboundSymbol(String),
    #[error("s is not a root of 1 + mu^2")]
    InconsistentRoot,
}
