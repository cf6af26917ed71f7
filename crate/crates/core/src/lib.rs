//! Gradient-based input transfer for segmentation networks.
//!
//! A segmentation network is trained, its inputs are perturbed by gradient
//! descent until the prediction matches the ground truth, and a translator
//! learns to map raw images to those perturbed inputs.

pub mod error;
pub mod tensor;
pub mod label;
pub mod graph;
pub mod params;
pub mod optim;
pub mod train;
pub mod segnet;
pub mod data;
pub mod fsutil;
pub mod kde;
pub mod metrics;
pub mod losses;
pub mod perturb;
pub mod translator;
pub mod checkpoint;
pub mod serial;
pub mod pipeline;
pub(crate) mod binary;

pub use error::{Error, Result};
pub use label::LabelMap;
pub use tensor::Tensor;
