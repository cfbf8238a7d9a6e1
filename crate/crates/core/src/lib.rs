//! Single-scale anchor-free detector for mitotic figures.
//!
//! The crate bundles a small CPU autodiff engine ([`tensor`]), the network
//! building blocks ([`blocks`]), the assembled stride-16 detector
//! ([`detector`]), data handling ([`data`]), training ([`train`]),
//! region-level inference ([`inference`]) and detection metrics ([`eval`]).

pub mod blocks;
pub mod cli;
pub mod data;
pub mod detector;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod inference;
pub mod par;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
