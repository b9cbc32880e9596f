//! Synthesis, bit-exact evaluation, and verification of ReLU-sine-pow2
//! approximation networks.
//!
//! The networks built here store a target function's values, quantized to M
//! binary digits per cell of a grid over the unit cube, inside dyadic sine
//! weights; a 2^x unit turns a cell's binary address into the shift that
//! reads those digits back out. Evaluating the construction naively in
//! doubles fails (the 2^x unit produces values up to 2^(2^(n1 d))), so the
//! evaluator carries an exact path where the shift is a symbolic exponent
//! and sine arguments are reduced modulo 1 in integer arithmetic. The
//! verifier checks the approximation bounds the construction promises.

pub mod builder;
pub mod dyadic;
pub mod error;
pub mod eval;
pub mod grid;
pub mod net;
pub mod serial;
pub mod target;
pub mod verify;

pub use error::{Error, Result};
