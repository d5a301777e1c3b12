//! Multinetwork InfoMax (MIM).
//!
//! Self-supervised pre-training that maximizes an InfoNCE bound between two
//! global embeddings of the same subject, one from a 1-D convolutional
//! encoder and one from a gated graph network built on self-attention, then
//! fine-tunes the whole model for graph classification on small labeled sets.
//!
//! The crate is self-contained: a small reverse-mode differentiation engine
//! ([`autodiff`]), the model components, a synthetic data generator with CSV
//! ingestion ([`data`]), and the experiment harness ([`harness`]).

pub mod attention;
pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod encoder;
pub mod error;
pub mod gnn;
pub mod harness;
pub mod layers;
pub mod model;
pub mod objective;
pub mod params;
pub mod rng;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{MimError, Result};
pub use model::{MimModel, ModelConfig};
