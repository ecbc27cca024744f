//! Contrastive joint embedding of histology patches and spatial
//! gene-expression spots, with expression prediction by weighted top-k
//! retrieval.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. File formats,
//! checkpoints and the command line live in the `stexp` companion crate.
//!
//! Layout:
//!
//! * [`tensor`], [`graph`], [`params`], [`gradcheck`]: dense tensors, a
//!   reverse-mode differentiable graph over a fixed primitive set, named
//!   parameter sets and a finite-difference gradient verifier.
//! * [`data`]: slides, preprocessing, batch sampling and a synthetic
//!   generator with planted image/expression correspondence.
//! * [`encoders`]: patch encoder, spot encoder (positional tables plus
//!   multi-head self-attention) and projection heads.
//! * [`contrastive`]: similarity, the symmetric cross-entropy loss, Adam and
//!   the training loop.
//! * [`inference`]: retrieval index, top-k query and inverse-square distance
//!   aggregation.
//! * [`evaluation`]: Pearson/MSE/MAE metrics, per-gene p-values, PCA,
//!   k-means, ARI and leave-one-out orchestration.

#![no_std]

extern crate alloc;

pub mod contrastive;
pub mod data;
pub mod encoders;
mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod graph;
pub mod inference;
pub mod params;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use params::ParamSet;
pub use tensor::{Real, Tensor};
