//! Decentralized intraday market coupling between independently cleared
//! power-system areas.
//!
//! Each area clears a chance-constrained DC optimal power flow
//! ([`market`]), areas exchange terms of trade on their tie-lines in
//! synchronous rounds ([`coupling`]), and the limit is compared with a
//! centralized omniscient clearing ([`benchmark`]).

// Negated float comparisons (`!(x > 0.0)`) are used on purpose so that NaN
// inputs fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod cli;
pub mod coupling;
pub mod grid;
pub mod market;
pub mod qp;
pub mod stochastic;
