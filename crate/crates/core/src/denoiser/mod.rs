//! The denoiser contract and two implementations: an exact Gaussian
//! posterior-mean oracle and a small trainable factorized spatial/temporal net.

mod oracle;
mod toy;

pub use oracle::{gaussian_oracle_denoise, GaussianOracle, Prior};
pub use toy::{
    synthetic_static_videos, toy_forward, toy_train_step, ToyConfig, ToyFactorizedNet, ToyGrads, TrainingExample,
};

use serde::{Deserialize, Serialize};

use crate::conditioning::ConditioningPack;
use crate::error::{Error, Result};
use crate::latent::LatentVideo;
use crate::schedule::{NoiseSchedule, PredictionKind};

/// Opaque stand-in for text/image conditioning embeddings; selects a CFG branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CondHandle {
    Absent,
    ImageOnly,
    TextOnly,
    Full,
}

impl CondHandle {
    pub const ALL: [CondHandle; 4] =
        [CondHandle::Absent, CondHandle::ImageOnly, CondHandle::TextOnly, CondHandle::Full];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Everything a denoiser sees for one evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DenoiserRequest<'a> {
    pub x_t: &'a LatentVideo,
    pub pack: &'a ConditioningPack,
    pub t: usize,
    pub cond: CondHandle,
}

impl<'a> DenoiserRequest<'a> {
    pub fn new(x_t: &'a LatentVideo, pack: &'a ConditioningPack, t: usize, cond: CondHandle) -> Result<Self> {
        x_t.ensure_same_shape(pack.cond_latent())?;
        Ok(Self { x_t, pack, t, cond })
    }
}

/// A model that predicts, at timestep `t`, one of `ε`, `x₀` or `v` for a noised
/// latent. Implementations must be safe for concurrent read-only use.
pub trait Denoiser: Sync {
    fn denoise(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule, kind: PredictionKind) -> Result<LatentVideo>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, req: &DenoiserRequest<'_>, sched: &NoiseSchedule, kind: PredictionKind) -> Result<LatentVideo> {
        (**self).denoise(req, sched, kind)
    }
}

pub(crate) fn check_request(req: &DenoiserRequest<'_>) -> Result<()> {
    req.x_t.ensure_same_shape(req.pack.cond_latent())?;
    if !req.x_t.all_finite() {
        return Err(Error::InvalidShape("denoiser input contains non-finite values".into()));
    }
    Ok(())
}
