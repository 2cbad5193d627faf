//! Dictionary-based attention blocks for deep metric learning, on top of a
//! small double-precision reverse-mode autodiff engine.
//!
//! The guide in `book/` walks through the pieces; its examples run as
//! doc-tests of this crate.

pub mod attention;
pub mod backbone;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod harness;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use params::Parameters;
pub use tensor::{Tape, Tensor, Var};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/attention.md")]
    mod attention {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/harness.md")]
    mod harness {}
}
