//! NetVLAD feature aggregation with vocabulary separation (shared and
//! specific visual words) and vocabulary adaptation (centroid-adaptation and
//! intra-cluster losses), trained with hand-written gradients.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the data
//! pipeline and training harness work in `f64`, exposed through the aliases
//! below.

pub mod aggregation;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod io;
pub mod label;
pub mod metrics;
pub mod model;
pub mod numkernel;
pub mod objective;
pub mod scalar;
pub mod vocabulary;

pub use error::{Error, Result};
pub use label::ClassLabel;
pub use scalar::Scalar;

pub type Matrix = numkernel::Matrix<f64>;
pub type Matrix32 = numkernel::Matrix<f32>;
pub type LocalFeatureSet = aggregation::LocalFeatureSet<f64>;
pub type Vocabulary = vocabulary::Vocabulary<f64>;
pub type VladDescriptor = aggregation::VladDescriptor<f64>;
pub type ModelParams = model::ModelParams<f64>;
pub type Checkpoint = model::Checkpoint<f64>;
