pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod gcee;
pub mod geometry;
pub mod nn;
pub mod pretrain;
pub mod reid;
pub mod scalar;
pub mod seed;
pub mod synth;
pub mod temporal;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

// The book's code listings run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/synthetic-data.md")]
    mod synthetic_data {}
    #[doc = include_str!("../../../book/src/geometry.md")]
    mod geometry {}
    #[doc = include_str!("../../../book/src/encoder.md")]
    mod encoder {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
