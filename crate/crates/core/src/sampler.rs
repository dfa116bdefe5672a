//! Deterministic DDIM sampling and the two-step factorized generation pipeline.

use serde::{Deserialize, Serialize};

use crate::conditioning::{make_image_conditioning, make_past_frames_conditioning, ConditioningPack};
use crate::denoiser::{CondHandle, Denoiser, DenoiserRequest};
use crate::error::{Error, Result};
use crate::guidance::{compose_branches, Branches, GuidanceSpec};
use crate::latent::{LatentVideo, Shape};
use crate::rng;
use crate::schedule::{convert_prediction, NoiseSchedule, PredictionKind};

/// How inference timesteps are drawn from the training schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestepSelection {
    /// `round(N − k·N/steps)` for `k = 0..steps`; always starts at the terminal step.
    Trailing,
    /// `round(linspace(N, 1, steps))`.
    Linspace,
}

impl std::str::FromStr for TimestepSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "trailing" => Ok(Self::Trailing),
            "linspace" => Ok(Self::Linspace),
            other => Err(Error::InvalidSampler(format!("unknown timestep selection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub num_inference_steps: usize,
    pub prediction_kind: PredictionKind,
    pub timestep_selection: TimestepSelection,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            num_inference_steps: 250,
            prediction_kind: PredictionKind::V,
            timestep_selection: TimestepSelection::Trailing,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// Inference timesteps, largest first, each in `1..=N` and strictly decreasing.
pub fn select_timesteps(sched: &NoiseSchedule, steps: usize, selection: TimestepSelection) -> Result<Vec<usize>> {
    let n = sched.num_steps();
    if steps == 0 || steps > n {
        return Err(Error::InvalidSampler(format!("inference steps must be in 1..={n}, got {steps}")));
    }
    let ts: Vec<usize> = match selection {
        TimestepSelection::Trailing => {
            let stride = n as f64 / steps as f64;
            (0..steps).map(|k| (n as f64 - k as f64 * stride).round() as usize).collect()
        }
        TimestepSelection::Linspace if steps == 1 => vec![n],
        TimestepSelection::Linspace => {
            let stride = (n - 1) as f64 / (steps - 1) as f64;
            (0..steps).map(|k| (n as f64 - k as f64 * stride).round() as usize).collect()
        }
    };
    debug_assert!(ts.windows(2).all(|w| w[0] > w[1]) && ts.iter().all(|&t| (1..=n).contains(&t)));
    Ok(ts)
}

fn nonfinite(step: usize, t: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFiniteValue(_) => Error::NonFinite { step, t },
        other => other,
    }
}

/// Runs deterministic DDIM from seeded unit Gaussian noise and returns the
/// final clean-sample estimate.
pub fn ddim_sample(
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    pack: &ConditioningPack,
    guidance: &GuidanceSpec,
    shape: Shape,
) -> Result<LatentVideo> {
    guidance.validate()?;
    if cfg.prediction_kind == PredictionKind::V
        && cfg.timestep_selection == TimestepSelection::Trailing
        && !sched.zero_terminal()
    {
        return Err(Error::InvalidSampler(
            "v-prediction with trailing timesteps requires a zero-terminal-SNR schedule".into(),
        ));
    }
    if pack.shape() != shape {
        return Err(Error::ShapeMismatch { expected: shape.as_array(), got: pack.shape().as_array() });
    }
    let timesteps = select_timesteps(sched, cfg.num_inference_steps, cfg.timestep_selection)?;
    let mut r = rng::seeded(cfg.seed);
    let mut x = LatentVideo::from_vec(shape, rng::normal_vec(&mut r, shape.len()))?;
    let st = guidance.strategy;

    for (step, &t) in timesteps.iter().enumerate() {
        let on_err = nonfinite(step, t);
        let query = |needed: bool, cond: CondHandle| -> Result<Option<LatentVideo>> {
            if !needed {
                return Ok(None);
            }
            let req = DenoiserRequest::new(&x, pack, t, cond)?;
            denoiser.denoise(&req, sched, cfg.prediction_kind).map(Some)
        };
        let uncond = query(st.needs_uncond(), CondHandle::Absent).map_err(&on_err)?;
        let image = query(st.needs_image_only(), CondHandle::ImageOnly).map_err(&on_err)?;
        let text_only = query(st.needs_text_only(), CondHandle::TextOnly).map_err(&on_err)?;
        let full = query(st.needs_full(), CondHandle::Full).map_err(&on_err)?;
        let pred = compose_branches(
            guidance,
            Branches {
                uncond: uncond.as_ref(),
                image: image.as_ref(),
                text_only: text_only.as_ref(),
                full: full.as_ref(),
            },
        )
        .map_err(&on_err)?;
        let (x0_hat, eps_hat) = convert_prediction(sched, t, &x, &pred, cfg.prediction_kind).map_err(&on_err)?;

        let next_t = timesteps.get(step + 1).copied().unwrap_or(0);
        if next_t == 0 {
            return Ok(x0_hat);
        }
        let (s, n) = sched.coefs(next_t)?;
        let data = x0_hat.data().iter().zip(eps_hat.data()).map(|(a, e)| s * a + n * e).collect();
        x = LatentVideo::from_vec(shape, data).map_err(&on_err)?;
    }
    unreachable!("timestep list is never empty")
}

/// Samples once per seed; results are in seed order and independent of thread count.
pub fn sample_many(
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    pack: &ConditioningPack,
    guidance: &GuidanceSpec,
    shape: Shape,
    seeds: &[u64],
) -> Result<Vec<LatentVideo>> {
    let run = |&seed: &u64| ddim_sample(&cfg.with_seed(seed), sched, denoiser, pack, guidance, shape);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        seeds.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        seeds.iter().map(run).collect()
    }
}

/// Output of the two-step text→image→video pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedOutput {
    pub image: LatentVideo,
    pub pack: ConditioningPack,
    pub video: LatentVideo,
}

/// Samples a single frame with text-only guidance, then samples the full video
/// conditioned on it. The video's first frame is not clamped to the image.
#[allow(clippy::too_many_arguments)]
pub fn generate_factorized(
    cfg_image: &SamplerConfig,
    cfg_video: &SamplerConfig,
    sched: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    guidance_image: &GuidanceSpec,
    guidance_video: &GuidanceSpec,
    shape: Shape,
) -> Result<FactorizedOutput> {
    if shape.frames < 2 {
        return Err(Error::InvalidSampler(format!("video needs at least 2 frames, got {}", shape.frames)));
    }
    let image_shape = shape.with_frames(1);
    let image = ddim_sample(
        cfg_image,
        sched,
        denoiser,
        &ConditioningPack::unconditioned(image_shape),
        guidance_image,
        image_shape,
    )?;
    let pack = make_image_conditioning(&image, shape.frames)?;
    let video = ddim_sample(cfg_video, sched, denoiser, &pack, guidance_video, shape)?;
    Ok(FactorizedOutput { image, pack, video })
}

/// Generates a longer video conditioned on existing leading frames.
pub fn extend_video(
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    denoiser: &dyn Denoiser,
    past: &LatentVideo,
    guidance: &GuidanceSpec,
    target_frames: usize,
) -> Result<(ConditioningPack, LatentVideo)> {
    let pack = make_past_frames_conditioning(past, target_frames)?;
    let video = ddim_sample(cfg, sched, denoiser, &pack, guidance, pack.shape())?;
    Ok((pack, video))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::GaussianOracle;
    use crate::guidance::{default_image_spec, default_video_spec};

    fn zt() -> NoiseSchedule {
        NoiseSchedule::quad(1000, 8.5e-4, 1.2e-2).unwrap().rescale_zero_terminal_snr().unwrap()
    }

    #[test]
    fn trailing_and_linspace_grids() {
        let s = zt();
        let tr = select_timesteps(&s, 250, TimestepSelection::Trailing).unwrap();
        assert_eq!(tr.len(), 250);
        assert_eq!((tr[0], tr[1], tr[249]), (1000, 996, 4));
        let ls = select_timesteps(&s, 250, TimestepSelection::Linspace).unwrap();
        assert_eq!((ls[0], ls[249]), (1000, 1));
        assert_eq!(select_timesteps(&s, 1, TimestepSelection::Trailing).unwrap(), vec![1000]);
        assert_eq!(
            select_timesteps(&s, 1000, TimestepSelection::Trailing).unwrap(),
            (1..=1000).rev().collect::<Vec<_>>()
        );
        assert!(select_timesteps(&s, 0, TimestepSelection::Trailing).is_err());
        assert!(select_timesteps(&s, 1001, TimestepSelection::Linspace).is_err());
    }

    #[test]
    fn one_step_returns_mu() {
        let oracle = GaussianOracle::isotropic(2.0, 0.25).unwrap();
        let shape = Shape::new(1, 1, 2, 2).unwrap();
        let cfg = SamplerConfig { num_inference_steps: 1, ..Default::default() };
        let out =
            ddim_sample(&cfg, &zt(), &oracle, &ConditioningPack::unconditioned(shape), &default_video_spec(), shape)
                .unwrap();
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn eps_at_zero_terminal_step_fails() {
        let oracle = GaussianOracle::isotropic(0.0, 1.0).unwrap();
        let shape = Shape::new(1, 1, 1, 1).unwrap();
        let cfg = SamplerConfig { num_inference_steps: 10, prediction_kind: PredictionKind::Eps, ..Default::default() };
        let err =
            ddim_sample(&cfg, &zt(), &oracle, &ConditioningPack::unconditioned(shape), &default_image_spec(), shape);
        assert!(matches!(err, Err(Error::ZeroSignal { t: 1000 })));
    }

    #[test]
    fn v_trailing_requires_zero_terminal() {
        let plain = NoiseSchedule::quad(1000, 8.5e-4, 1.2e-2).unwrap();
        let oracle = GaussianOracle::isotropic(0.0, 1.0).unwrap();
        let shape = Shape::new(1, 1, 1, 1).unwrap();
        let pack = ConditioningPack::unconditioned(shape);
        let cfg = SamplerConfig { num_inference_steps: 10, ..Default::default() };
        assert!(matches!(
            ddim_sample(&cfg, &plain, &oracle, &pack, &default_video_spec(), shape),
            Err(Error::InvalidSampler(_))
        ));
        let eps = SamplerConfig { prediction_kind: PredictionKind::Eps, ..cfg };
        assert!(ddim_sample(&eps, &plain, &oracle, &pack, &default_video_spec(), shape).is_ok());
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let oracle = GaussianOracle::isotropic(0.5, 2.0).unwrap();
        let shape = Shape::new(2, 1, 2, 2).unwrap();
        let pack = ConditioningPack::unconditioned(shape);
        let cfg = SamplerConfig { num_inference_steps: 20, seed: 11, ..Default::default() };
        let a = ddim_sample(&cfg, &zt(), &oracle, &pack, &default_video_spec(), shape).unwrap();
        let b = ddim_sample(&cfg, &zt(), &oracle, &pack, &default_video_spec(), shape).unwrap();
        assert_eq!(a, b);
        let c = ddim_sample(&cfg.with_seed(12), &zt(), &oracle, &pack, &default_video_spec(), shape).unwrap();
        assert_ne!(a, c);
        let many = sample_many(&cfg, &zt(), &oracle, &pack, &default_video_spec(), shape, &[11, 12]).unwrap();
        assert_eq!(many, vec![a, c]);
    }

    #[test]
    fn pack_shape_must_match() {
        let oracle = GaussianOracle::isotropic(0.0, 1.0).unwrap();
        let shape = Shape::new(2, 1, 2, 2).unwrap();
        let pack = ConditioningPack::unconditioned(shape.with_frames(3));
        assert!(ddim_sample(&SamplerConfig::default(), &zt(), &oracle, &pack, &default_video_spec(), shape).is_err());
    }

    #[test]
    fn factorized_structure() {
        let oracle = GaussianOracle::isotropic(0.0, 1.0).unwrap();
        let shape = Shape::new(4, 2, 4, 4).unwrap();
        let cfg = SamplerConfig { num_inference_steps: 25, ..Default::default() };
        let out = generate_factorized(
            &cfg,
            &cfg.with_seed(1),
            &zt(),
            &oracle,
            &default_image_spec(),
            &default_video_spec(),
            shape,
        )
        .unwrap();
        assert_eq!(out.image.shape(), shape.with_frames(1));
        assert_eq!(out.video.shape(), shape);
        assert_eq!(out.pack.frame_mask().data().iter().sum::<f64>(), 16.0);
        assert_eq!(out.pack.cond_latent().frame(0), out.image.frame(0));
        assert!(generate_factorized(
            &cfg,
            &cfg,
            &zt(),
            &oracle,
            &default_image_spec(),
            &default_video_spec(),
            shape.with_frames(1)
        )
        .is_err());
    }
}
