//! Aligned event tensors and two-branch event frame classification.
//!
//! The pipeline runs event ingestion, timestamp quantization, accumulative
//! voxelization and aligned compression (see [`encoder`]), then a shared
//! per-frame CNN feeding a frame branch and a video branch whose logits are
//! merged by accuracy-weighted synthesis (see [`efn`]).

pub mod bench;
pub mod dataset;
pub mod encoder;
pub mod efn;
pub mod error;
pub mod event;
pub mod nn;
pub mod synth;
pub mod tensor_io;
pub mod viz;

pub use error::{Error, Result};
