//! Desk-scale, from-scratch implementation of a triple-supervised end-to-end
//! speech translation model: an acoustic encoder trained with CTC, a semantic
//! encoder distilled against a frozen text encoder, and an autoregressive
//! translation decoder, all differentiated by a small reverse-mode tape.
//!
//! Everything is `f64`, single-threaded, and deterministic for a fixed seed.

pub mod batch;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod eval;
pub mod features;
pub mod gradcheck;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod probe;
pub mod trainer;
pub mod params;
pub mod teacher;
pub mod tensor;
pub mod vocab;

pub use error::{LutError, Result};
pub use graph::{Graph, NodeId, ParamBind, ValueBind};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
