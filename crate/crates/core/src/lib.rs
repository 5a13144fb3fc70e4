// SPDX-License-Identifier: MIT OR Apache-2.0

//! Slider sweeps over diffusion backbones and the metrics used to grade them.

pub mod astd;
pub mod backends;
pub mod error;
pub mod guidance;
pub mod harness;
pub mod metrics;
pub mod protocol;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod scoring;
pub mod tensor;
pub mod types;

pub use error::{FslError, Result};
pub use tensor::LatentTensor;
pub use types::{
    validate_grid, ConceptTriplet, GuidanceMode, SamplerKind, ScaleGrid, ScheduleKind,
    SliderConfig, SweepResult,
};
