//! Convolutional sentiment classifiers over pre-trained word embeddings.
//!
//! The crate covers the whole pipeline: corpus cleaning and indexing
//! ([`corpus`]), embedding tables ([`embeddings`]), differentiable kernels
//! ([`nn`]), the NgramCNN architecture families ([`arch`]), training, evaluation
//! and grid search ([`trainer`]), checkpoints ([`checkpoint`]) and tag-based
//! annotation of unlabeled reviews ([`folksonomy`]).

pub mod arch;
pub mod checkpoint;
pub mod corpus;
pub mod embeddings;
pub mod error;
pub mod folksonomy;
pub mod nn;
pub mod trainer;

pub use error::{Error, Result};
