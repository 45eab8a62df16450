//! Semi-supervised classification by mixing labeled and unlabeled data at
//! the input and at hidden layers of a network.
//!
//! The crate is self-contained: [`autodiff`] provides the tensor arithmetic
//! and reverse-mode gradients, [`network`] the layered model with its
//! encoder/decoder split, [`mixing`] the Beta-distributed interpolation
//! machinery, and [`ssl`] the training procedure built on top of them.
//! [`data`] and [`metrics`] cover dataset generation and evaluation.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metrics;
pub mod mixing;
pub mod network;
#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod rng;
pub mod ssl;
pub mod tensor;

pub use autodiff::{Adam, Gradients, Optimizer, ParamStore, Tape, Var};
pub use data::{AugmentPolicy, Dataset, SplitSpec, Splits, Task};
pub use error::{Error, Result};
pub use metrics::{BoundaryRaster, Extent, ReliabilityBins};
pub use mixing::{LayerSet, MixBatch, MixCoefficient, Origin, PairedBatch};
pub use network::{Architecture, LayerSpec, LayeredNetwork};
pub use ssl::{SslConfig, TrainHistory};
pub use tensor::Tensor;
