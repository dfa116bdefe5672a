//! Diffusion-process engine for factorized text-to-video generation.
//!
//! Noise schedules with zero-terminal-SNR rescaling, prediction conversions,
//! frame conditioning, multi-branch classifier-free guidance, deterministic
//! DDIM sampling, data curation and pairwise-vote evaluation statistics.

#[cfg(feature = "cli")]
pub mod cli;
pub mod conditioning;
pub mod curation;
pub mod denoiser;
pub mod error;
pub mod guidance;
pub mod juice;
pub mod latent;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use latent::{LatentVideo, Shape};
pub use schedule::{NoiseSchedule, PredictionKind};
