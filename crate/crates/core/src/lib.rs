//! Mobility-conditioned app-usage generation.
//!
//! The crate synthesizes per-user app-usage sequences from spatio-temporal
//! trajectories with an autoregressive conditional denoising-diffusion
//! model, together with the encoders it depends on (skip-gram app vectors,
//! an urban knowledge graph factorized by TuckER, sinusoidal time
//! encodings), distribution-similarity metrics and the analysis protocols
//! used to validate generated corpora.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common case.

#![allow(clippy::needless_range_loop)]

pub mod analysis;
pub mod config;
pub mod corpus;
pub mod diffusion;
pub mod encoders;
pub mod error;
pub mod history;
pub mod metrics;
pub mod optim;
pub mod orchestrator;
pub mod pipeline;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// `f64` instantiations of the generic types.
pub type AppGenModel = orchestrator::AppGenModel<f64>;
pub type ModelCheckpoint = orchestrator::ModelCheckpoint<f64>;
pub type EmbeddingTable = encoders::EmbeddingTable<f64>;
pub type TuckerModel = encoders::TuckerModel<f64>;
pub type DenoiserParams = diffusion::DenoiserParams<f64>;
pub type NoiseSchedule = diffusion::NoiseSchedule<f64>;
pub type AttentionParams = history::AttentionParams<f64>;

/// `f32` instantiations, for memory-constrained runs.
pub type AppGenModelF32 = orchestrator::AppGenModel<f32>;
pub type EmbeddingTableF32 = encoders::EmbeddingTable<f32>;
