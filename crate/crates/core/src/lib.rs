//! Handwritten math expression recognition at desk scale: LaTeX tokens and
//! position labels, synthetic and InkML data, a small reverse-mode autodiff,
//! a two-branch recognition model, training and evaluation.
//!
//! The guide in `book/` walks through each part; its code blocks run as
//! doc-tests of this crate.

pub mod checks;
pub mod counting;
pub mod dataset;
pub mod error;
pub mod latex;
pub mod metrics;
pub mod model;
pub mod posforest;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
mod book_introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tokens.md")]
mod book_tokens {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/position-forest.md")]
mod book_position_forest {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/counting.md")]
mod book_counting {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/dataset.md")]
mod book_dataset {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/autodiff.md")]
mod book_autodiff {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/model.md")]
mod book_model {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/training.md")]
mod book_training {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/evaluation.md")]
mod book_evaluation {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
