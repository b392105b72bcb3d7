//! IRX-1D: Inception, residual and Xception blocks built from kernel-size-1
//! convolutions, for patch-based classification of multiband rasters.
//!
//! The crate carries its own small tensor engine with hand-written
//! gradients, the block and model definitions, raster ingestion, Adagrad
//! training, accuracy assessment and a Gaussian-process hyperparameter
//! search for the 2-D CNN baselines.

pub mod blocks;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod explog;
pub mod geodata;
pub mod gradcheck;
pub mod hpo;
pub mod layers;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod zoo;

pub use error::{Error, Result};
pub use tensor::{Precision, Real, Tensor};
