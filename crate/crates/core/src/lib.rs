//! Functional-inequality diagnostics for Boltzmann measures `exp(-2F) dx`.
//!
//! The crate decides, numerically and with a three-valued verdict, which of a
//! family of sufficient conditions for (tight/defective) log-Sobolev,
//! hypercontractivity and spectral-gap inequalities a potential satisfies.

pub mod criteria;
pub mod numeric;
pub mod potential;
pub mod quadrature;
pub mod spectral;
pub mod stochastic;

pub use potential::{Potential, PotentialError};
pub use quadrature::{IntegralResult, QuadratureConfig, Verdict};
