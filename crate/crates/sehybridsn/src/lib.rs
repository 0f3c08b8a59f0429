//! Spectral-spatial hyperspectral image classification, from raw cube to
//! classification map, with no external dependencies.
//!
//! The pipeline: load a reflectance cube and ground truth
//! ([`data_io`]), discard water-absorption bands, standardize and reduce
//! the spectral axis with PCA, cut labeled patches and stratified splits
//! ([`preprocess`]), train a six-layer 3D-2D convolutional network with
//! dense feature reuse and squeeze-excite channel attention ([`model`],
//! [`nn`], [`train`]), and score it with overall/average accuracy and the
//! kappa coefficient ([`metrics`]).
//!
//! Every stochastic step is keyed off explicit seeds, so whole runs are
//! reproducible bit for bit. See the `examples/` directory for one
//! runnable walk-through per capability, or the `sehybridsn` binary for
//! the `prepare`/`train`/`eval`/`map`/`selfcheck` commands.

#![allow(clippy::needless_range_loop)]
#![allow(clippy::type_complexity)]
#![allow(clippy::large_enum_variant)]

pub mod cli;
pub mod data_io;
pub mod error;
pub mod json;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod parallel;
pub mod preprocess;
pub mod rng;
pub mod selfcheck;
pub mod synthetic;
pub mod tensor;
pub mod train;

pub use data_io::{DatasetManifest, GroundTruthMap, HyperspectralCube};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use model::{HybridSnBaseline, ModelVariant, Network, SeHybridSnConfig, SeHybridSnModel};
pub use preprocess::{PcaModel, Role, SplitAssignment};
pub use tensor::{Scalar, Tensor};
pub use train::{AggregateReport, TrainConfig, TrainReport};
