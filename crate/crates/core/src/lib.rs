//! Compression of explicit voxel-grid radiance fields.
//!
//! The pipeline removes low-importance parameters using a first-order Taylor
//! estimate of the loss change, puts back removed voxels that carry a large
//! gradient and touch the surviving grid, fine-tunes, and finally stores the
//! surviving parameters as 8-bit codes inside an LZMA-compressed container.
//!
//! A small differentiable emission-absorption renderer ([`render`]) provides
//! the loss and gradients the compression loop needs.

pub mod codec;
pub mod error;
pub mod grid;
pub mod importance;
pub mod metrics;
pub mod par;
pub mod reinclude;
pub mod render;
pub mod scheduler;
pub mod train;

pub use codec::{decode, encode, CompressionReport, EncodeOptions};
pub use error::{DecodeError, Error, Result};
pub use grid::{Connectivity, Layer, LayerKind, ParameterStore};
pub use importance::{ImportanceScores, RemovalOutcome, Scope};
pub use reinclude::ReincludeOutcome;
pub use render::{Camera, CameraSet, Image, RadianceModel, SceneShape, SceneSpec};
pub use scheduler::{CompressionConfig, CompressionResult, RoundRecord};
pub use train::{OptimizerState, TrainOptions};
