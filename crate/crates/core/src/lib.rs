//! Numerical toolkit for one-shot quantum information: dense Hermitian algebra,
//! smooth Renyi divergences, flattening and tilting constructions, and
//! Monte-Carlo simulators for covering, wiretap privacy and decoupling.
//!
//! The crate is `no_std` and only needs `alloc`.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod covering;
pub mod decoupling;
pub mod divergences;
pub mod error;
pub mod flattening;
pub mod linalg;
pub mod mc;
pub mod random;
pub mod states;
pub mod tilting;
pub mod wiretap;

pub use error::{Error, Result};
