//! Numerics for incremental exponential stability of two-block feedback
//! interconnections.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is pure
//! computation: vector fields and their displacement dynamics, Finsler
//! Lyapunov candidates, small-gain budgets, invariant-set search, empirical
//! contraction envelopes and the FitzHugh–Nagumo case study. File formats and
//! the command line live in the `smallgain-cli` crate.
//!
//! Sample-based checks can refute an inequality but never prove it; every
//! report in this crate says "no violation found" rather than "verified".
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dynsys;
pub mod error;
pub mod estimator;
pub mod fhn;
pub mod finsler;
pub mod invariance;
pub mod linalg;
pub mod poly;
pub mod quadrature;
pub mod sampling;
pub mod smallgain;

pub use error::{Error, Result};
