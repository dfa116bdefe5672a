//! Masked frame conditioning: first-frame image conditioning, past-frame
//! extension, zero-interleaving for frame interpolation, and the 16-frame
//! stitching protocol.

use crate::error::{Error, Result};
use crate::latent::{LatentVideo, Shape};
use crate::rng;
use crate::schedule::NoiseSchedule;

/// Frames consumed by the interpolation model.
pub const INTERP_INPUT_FRAMES: usize = 8;
/// Frames produced by the interpolation model.
pub const INTERP_OUTPUT_FRAMES: usize = 37;
/// Output spacing between consecutive original frames.
pub const INTERP_STRIDE: usize = 4;
/// Generated frames before the first original.
pub const INTERP_LEAD: usize = 4;
/// Frames kept from the first interpolated half (the last 5 are dropped).
pub const STITCH_KEEP_FIRST: usize = 32;
/// Frames dropped from the start of the second interpolated half.
pub const STITCH_DROP_SECOND: usize = 4;
/// Length of a stitched video.
pub const STITCHED_FRAMES: usize = STITCH_KEEP_FIRST + INTERP_OUTPUT_FRAMES - STITCH_DROP_SECOND;

/// Output index of original frame `j` after interleaving.
pub const fn interleaved_index(j: usize) -> usize {
    INTERP_LEAD + INTERP_STRIDE * j
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditioningKind {
    /// No conditioning frames; used for text-to-image sampling.
    Unconditioned,
    FirstFrame,
    PastFrames(usize),
    Interleaved,
}

impl ConditioningKind {
    /// The per-frame presence pattern this kind implies for `frames` frames.
    pub fn expected_mask(&self, frames: usize) -> Vec<bool> {
        (0..frames)
            .map(|i| match *self {
                ConditioningKind::Unconditioned => false,
                ConditioningKind::FirstFrame => i == 0,
                ConditioningKind::PastFrames(k) => i < k,
                ConditioningKind::Interleaved => {
                    i >= INTERP_LEAD
                        && (i - INTERP_LEAD).is_multiple_of(INTERP_STRIDE)
                        && (i - INTERP_LEAD) / INTERP_STRIDE < INTERP_INPUT_FRAMES
                }
            })
            .collect()
    }
}

/// Conditioning latent plus a binary per-frame presence mask, stored at full
/// `T x 1 x H x W` resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningPack {
    cond_latent: LatentVideo,
    frame_mask: LatentVideo,
    kind: ConditioningKind,
}

impl ConditioningPack {
    /// Builds a pack from a latent and per-frame flags, zeroing unmasked frames.
    fn build(source: &LatentVideo, present: &[bool], kind: ConditioningKind) -> Self {
        let shape = source.shape();
        debug_assert_eq!(present.len(), shape.frames);
        let mut cond_latent = LatentVideo::zeros(shape);
        let mut frame_mask = LatentVideo::zeros(shape.with_channels(1));
        for (t, &on) in present.iter().enumerate() {
            if on {
                cond_latent.frame_mut(t).copy_from_slice(source.frame(t));
                frame_mask.frame_mut(t).fill(1.0);
            }
        }
        Self { cond_latent, frame_mask, kind }
    }

    /// A pack with no conditioning frames.
    pub fn unconditioned(shape: Shape) -> Self {
        Self {
            cond_latent: LatentVideo::zeros(shape),
            frame_mask: LatentVideo::zeros(shape.with_channels(1)),
            kind: ConditioningKind::Unconditioned,
        }
    }

    /// Reassembles a pack from its parts, checking every structural invariant.
    pub fn from_parts(cond_latent: LatentVideo, frame_mask: LatentVideo, kind: ConditioningKind) -> Result<Self> {
        let pack = Self { cond_latent, frame_mask, kind };
        pack.validate()?;
        Ok(pack)
    }

    pub fn cond_latent(&self) -> &LatentVideo {
        &self.cond_latent
    }

    pub fn frame_mask(&self) -> &LatentVideo {
        &self.frame_mask
    }

    pub fn kind(&self) -> ConditioningKind {
        self.kind
    }

    pub fn shape(&self) -> Shape {
        self.cond_latent.shape()
    }

    /// Per-frame presence flags.
    pub fn present_frames(&self) -> Vec<bool> {
        (0..self.shape().frames).map(|t| self.frame_mask.frame(t)[0] == 1.0).collect()
    }

    /// Indices of frames carrying conditioning.
    pub fn conditioned_indices(&self) -> Vec<usize> {
        self.present_frames().iter().enumerate().filter_map(|(i, &p)| p.then_some(i)).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.cond_latent.shape();
        if self.frame_mask.shape() != shape.with_channels(1) {
            return Err(Error::ShapeMismatch {
                expected: shape.with_channels(1).as_array(),
                got: self.frame_mask.shape().as_array(),
            });
        }
        let present = self.kind.expected_mask(shape.frames);
        for (t, &on) in present.iter().enumerate() {
            let target = if on { 1.0 } else { 0.0 };
            if self.frame_mask.frame(t).iter().any(|&m| m != target) {
                return Err(Error::InvalidConditioning(format!("mask of frame {t} does not match {:?}", self.kind)));
            }
            if !on && self.cond_latent.frame(t).iter().any(|&v| v != 0.0) {
                return Err(Error::InvalidConditioning(format!("unmasked frame {t} is not zero")));
            }
        }
        if !self.cond_latent.all_finite() {
            return Err(Error::InvalidConditioning("non-finite conditioning value".into()));
        }
        Ok(())
    }

    /// Concatenates `[x_t | cond_latent | mask]` channel-wise, giving `2C + 1`
    /// channels per frame.
    pub fn denoiser_input(&self, x_t: &LatentVideo) -> Result<LatentVideo> {
        x_t.ensure_same_shape(&self.cond_latent)?;
        LatentVideo::concat_channels(&[x_t, &self.cond_latent, &self.frame_mask])
    }
}

/// Zero-pads a single-frame image latent to `target_frames` frames.
pub fn make_image_conditioning(image_latent: &LatentVideo, target_frames: usize) -> Result<ConditioningPack> {
    if image_latent.shape().frames != 1 {
        return Err(Error::InvalidConditioning(format!(
            "image latent must have exactly one frame, got {}",
            image_latent.shape().frames
        )));
    }
    if target_frames == 0 {
        return Err(Error::InvalidConditioning("target_frames must be positive".into()));
    }
    let shape = image_latent.shape().with_frames(target_frames);
    let mut padded = LatentVideo::zeros(shape);
    padded.frame_mut(0).copy_from_slice(image_latent.frame(0));
    let present = ConditioningKind::FirstFrame.expected_mask(target_frames);
    Ok(ConditioningPack::build(&padded, &present, ConditioningKind::FirstFrame))
}

/// Conditions a `target_frames` video on its first `past.frames` frames.
/// A single past frame is the image-conditioning case.
pub fn make_past_frames_conditioning(past: &LatentVideo, target_frames: usize) -> Result<ConditioningPack> {
    let k = past.shape().frames;
    if k >= target_frames {
        return Err(Error::InvalidConditioning(format!(
            "past has {k} frames; target must be longer, got {target_frames}"
        )));
    }
    if k == 1 {
        return make_image_conditioning(past, target_frames);
    }
    let shape = past.shape().with_frames(target_frames);
    let mut padded = LatentVideo::zeros(shape);
    for t in 0..k {
        padded.frame_mut(t).copy_from_slice(past.frame(t));
    }
    let kind = ConditioningKind::PastFrames(k);
    Ok(ConditioningPack::build(&padded, &kind.expected_mask(target_frames), kind))
}

/// Places 8 low-fps frames at indices `4 + 4j` of a 37-frame zero tensor.
pub fn interleave_for_interpolation(low_fps: &LatentVideo) -> Result<ConditioningPack> {
    let frames = low_fps.shape().frames;
    if frames != INTERP_INPUT_FRAMES {
        return Err(Error::InvalidConditioning(format!(
            "interpolation expects {INTERP_INPUT_FRAMES} input frames, got {frames}"
        )));
    }
    let shape = low_fps.shape().with_frames(INTERP_OUTPUT_FRAMES);
    let mut spread = LatentVideo::zeros(shape);
    for j in 0..INTERP_INPUT_FRAMES {
        spread.frame_mut(interleaved_index(j)).copy_from_slice(low_fps.frame(j));
    }
    let kind = ConditioningKind::Interleaved;
    Ok(ConditioningPack::build(&spread, &kind.expected_mask(INTERP_OUTPUT_FRAMES), kind))
}

/// Joins two interpolated 37-frame halves into 65 frames: the first half's
/// frames `0..32` followed by the second half's frames `4..37`.
pub fn stitch_interpolated_halves(first: &LatentVideo, second: &LatentVideo) -> Result<LatentVideo> {
    for v in [first, second] {
        if v.shape().frames != INTERP_OUTPUT_FRAMES {
            return Err(Error::InvalidConditioning(format!(
                "stitching expects {INTERP_OUTPUT_FRAMES}-frame halves, got {}",
                v.shape().frames
            )));
        }
    }
    first.ensure_same_shape(second)?;
    let head = first.frames(0..STITCH_KEEP_FIRST)?;
    let tail = second.frames(STITCH_DROP_SECOND..INTERP_OUTPUT_FRAMES)?;
    LatentVideo::concat_frames(&[&head, &tail])
}

/// Replaces each conditioning frame with `s[t]·frame + n[t]·ε`, `ε` drawn from
/// the seeded stream in frame order. Unmasked frames stay zero; `t = 0` is the
/// identity.
pub fn noise_augment(
    pack: &ConditioningPack,
    sched: &NoiseSchedule,
    t: usize,
    rng_seed: u64,
) -> Result<ConditioningPack> {
    let (s, n) = sched.coefs(t)?;
    if t == 0 {
        return Ok(pack.clone());
    }
    let mut rng = rng::seeded(rng_seed);
    let mut cond = pack.cond_latent.clone();
    for (frame, on) in pack.present_frames().into_iter().enumerate() {
        if !on {
            continue;
        }
        for v in cond.frame_mut(frame) {
            *v = s * *v + n * rng::standard_normal(&mut rng);
        }
    }
    Ok(ConditioningPack { cond_latent: cond, frame_mask: pack.frame_mask.clone(), kind: pack.kind })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn latent(t: usize, c: usize, h: usize, w: usize, value: f64) -> LatentVideo {
        LatentVideo::filled(Shape::new(t, c, h, w).unwrap(), value)
    }

    fn ramp(t: usize, c: usize, h: usize, w: usize) -> LatentVideo {
        LatentVideo::from_fn(Shape::new(t, c, h, w).unwrap(), |f, ch, y, x| {
            (f * 1000 + ch * 100 + y * 10 + x) as f64 + 0.25
        })
    }

    #[test]
    fn image_conditioning_zero_pads() {
        let pack = make_image_conditioning(&latent(1, 2, 4, 4, 3.0), 4).unwrap();
        assert!(pack.cond_latent().frame(0).iter().all(|&v| v == 3.0));
        for t in 1..4 {
            assert!(pack.cond_latent().frame(t).iter().all(|&v| v == 0.0));
        }
        assert_eq!(pack.kind(), ConditioningKind::FirstFrame);
        pack.validate().unwrap();
    }

    #[test]
    fn image_conditioning_mask_and_channels() {
        let pack = make_image_conditioning(&latent(1, 8, 64, 64, 0.5), 8).unwrap();
        assert_eq!(pack.frame_mask().shape().as_array(), [8, 1, 64, 64]);
        assert_eq!(pack.frame_mask().data().iter().sum::<f64>(), 64.0 * 64.0);
        let x_t = latent(8, 8, 64, 64, 0.0);
        assert_eq!(pack.denoiser_input(&x_t).unwrap().shape().channels, 17);
    }

    #[test]
    fn image_conditioning_errors() {
        assert!(make_image_conditioning(&latent(2, 1, 2, 2, 1.0), 4).is_err());
        assert!(make_image_conditioning(&latent(1, 1, 2, 2, 1.0), 0).is_err());
    }

    #[test]
    fn past_frames() {
        let pack = make_past_frames_conditioning(&ramp(16, 2, 2, 2), 32).unwrap();
        assert_eq!(pack.conditioned_indices(), (0..16).collect::<Vec<_>>());
        assert_eq!(pack.kind(), ConditioningKind::PastFrames(16));
        assert!(make_past_frames_conditioning(&ramp(4, 1, 2, 2), 4).is_err());
        let one = ramp(1, 2, 3, 3);
        assert_eq!(make_past_frames_conditioning(&one, 5).unwrap(), make_image_conditioning(&one, 5).unwrap());
    }

    #[test]
    fn interleave_places_originals() {
        let input = ramp(8, 2, 3, 3);
        let pack = interleave_for_interpolation(&input).unwrap();
        assert_eq!(pack.shape().frames, 37);
        assert_eq!(pack.conditioned_indices(), vec![4, 8, 12, 16, 20, 24, 28, 32]);
        for j in 0..8 {
            assert_eq!(pack.cond_latent().frame(4 + 4 * j), input.frame(j));
        }
        assert!(interleave_for_interpolation(&ramp(7, 1, 2, 2)).is_err());
        assert!(interleave_for_interpolation(&ramp(9, 1, 2, 2)).is_err());
    }

    #[test]
    fn stitch_lengths_and_endpoints() {
        let a = ramp(37, 1, 2, 2);
        let b = LatentVideo::from_fn(a.shape(), |f, c, y, x| -a.get(f, c, y, x));
        let out = stitch_interpolated_halves(&a, &b).unwrap();
        assert_eq!(out.shape().frames, 65);
        assert_eq!(out.frame(0), a.frame(0));
        assert_eq!(out.frame(31), a.frame(31));
        assert_eq!(out.frame(32), b.frame(4));
        assert_eq!(out.frame(64), b.frame(36));
        assert!(stitch_interpolated_halves(&a, &ramp(36, 1, 2, 2)).is_err());
        assert!(stitch_interpolated_halves(&a, &ramp(37, 2, 2, 2)).is_err());
    }

    #[test]
    fn noise_augment_masks_and_identity() {
        let sched = NoiseSchedule::quad(1000, 8.5e-4, 1.2e-2).unwrap();
        let pack = make_image_conditioning(&latent(1, 2, 3, 3, 1.0), 4).unwrap();
        assert_eq!(noise_augment(&pack, &sched, 0, 9).unwrap(), pack);
        for t in [1, 100, 250, 1000] {
            let aug = noise_augment(&pack, &sched, t, 9).unwrap();
            aug.validate().unwrap();
            assert_ne!(aug.cond_latent().frame(0), pack.cond_latent().frame(0));
            for f in 1..4 {
                assert!(aug.cond_latent().frame(f).iter().all(|&v| v == 0.0));
            }
        }
        assert!(noise_augment(&pack, &sched, 1001, 9).is_err());
    }

    #[test]
    fn from_parts_rejects_leaks() {
        let pack = make_image_conditioning(&latent(1, 1, 2, 2, 1.0), 3).unwrap();
        let mut leaked = pack.cond_latent().clone();
        leaked.frame_mut(2)[0] = 1.0;
        assert!(ConditioningPack::from_parts(leaked, pack.frame_mask().clone(), pack.kind()).is_err());
        assert!(ConditioningPack::from_parts(
            pack.cond_latent().clone(),
            pack.frame_mask().clone(),
            ConditioningKind::PastFrames(2)
        )
        .is_err());
    }
}
