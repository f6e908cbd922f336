//! Sparse deformable Mamba classifier for multi-temporal, multi-band image
//! patches.
//!
//! Pipeline: [`stem`] lifts each date's bands to feature maps, then every
//! stage runs a temporal, a spectral and a spatial [`modules`] pass, each of
//! which scans only a ranked subset of its tokens. The [`model`] head reads
//! the time-averaged center pixel.

pub mod activation;
pub mod attention;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod kv;
pub mod linalg;
pub mod mamba;
pub mod model;
pub mod modules;
pub mod scalar;
pub mod scan;
pub mod scatter;
pub mod spatial;
pub mod stem;
pub mod tensor;

pub use attention::{Axis, SelectOptions, SparseSelection, TokenSequence};
pub use config::ModelConfig;
pub use error::{CoreError, Result};
pub use model::{Model, ModelParams, StageTrace};
pub use scalar::Scalar;
pub use tensor::Tensor;
