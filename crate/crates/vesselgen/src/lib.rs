//! Generation of sparse two-channel artery/vein vessel masks with a small
//! denoising diffusion model, trained with a pixelwise-exponentially
//! weighted loss that keeps sparse vessel structure from being ignored, plus
//! a procedural vessel-tree data generator and structural realism metrics.
//!
//! See the `examples/` directory for one runnable program per capability and
//! the `vesselgen` binary for the file-oriented command-line interface.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod mask;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use mask::{AvMask, Bitmap};
pub use schedule::{NoiseSchedule, ScheduleConfig};
pub use tensor::Tensor;
