//! Training-free merging of independently trained MLPs by matching hidden
//! units in weight space and activation space at the same time.
//!
//! The pipeline is: train (or load) two models, capture activations on a
//! shared probe batch, compute per-layer permutations with a [`matcher`],
//! then average the aligned parameters with [`merger::merge`].

pub mod assignment;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod matcher;
pub mod merger;
pub mod model;
pub mod similarity;
pub mod store;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
