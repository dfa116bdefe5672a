//! Classifier-free guidance over image and text conditioning.
//!
//! Notation: `X(∅)` unconditional, `X(I)` image only, `X(p)` text only,
//! `X(I,p)` image and text.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentVideo;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// `X(∅) + w_i·(X(I) − X(∅)) + w_p·(X(I,p) − X(I))`
    ImageFirst,
    /// `X(∅) + w_p·(X(p) − X(∅)) + w_i·(X(I,p) − X(p))`
    TextFirst,
    /// `X(∅) + w_i·(X(I) − X(∅)) + w_p·(X(p) − X(∅))`
    Additive,
    /// `X(I,p) + (w_i−1)·(X(I,p) − X(p)) + (w_p−1)·(X(I,p) − X(I))`
    Residual,
    /// `X(∅) + w_p·(X(p) − X(∅))`, single-conditioning guidance for images.
    TextOnly,
}

impl Strategy {
    pub const ALL: [Strategy; 5] =
        [Strategy::ImageFirst, Strategy::TextFirst, Strategy::Additive, Strategy::Residual, Strategy::TextOnly];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::ImageFirst => "image_first",
            Strategy::TextFirst => "text_first",
            Strategy::Additive => "additive",
            Strategy::Residual => "residual",
            Strategy::TextOnly => "text_only",
        }
    }

    pub fn needs_text_only(&self) -> bool {
        !matches!(self, Strategy::ImageFirst)
    }

    pub fn needs_image_only(&self) -> bool {
        !matches!(self, Strategy::TextFirst | Strategy::TextOnly)
    }

    pub fn needs_full(&self) -> bool {
        !matches!(self, Strategy::Additive | Strategy::TextOnly)
    }

    pub fn needs_uncond(&self) -> bool {
        !matches!(self, Strategy::Residual)
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::InvalidGuidance(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSpec {
    pub w_image: f64,
    pub w_text: f64,
    pub strategy: Strategy,
}

impl GuidanceSpec {
    pub fn new(w_image: f64, w_text: f64, strategy: Strategy) -> Result<Self> {
        let spec = Self { w_image, w_text, strategy };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("w_image", self.w_image), ("w_text", self.w_text)] {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidGuidance(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        Ok(())
    }
}

/// Video generation and interpolation defaults: `w_image = 2.0`, `w_text = 7.5`.
pub fn default_video_spec() -> GuidanceSpec {
    GuidanceSpec { w_image: 2.0, w_text: 7.5, strategy: Strategy::ImageFirst }
}

/// Text-to-image default: a single text scale of 7.5.
pub fn default_image_spec() -> GuidanceSpec {
    GuidanceSpec { w_image: 0.0, w_text: 7.5, strategy: Strategy::TextOnly }
}

/// Predictions from each conditioning branch, all of one shape.
#[derive(Debug, Clone, Copy)]
pub struct Branches<'a> {
    pub uncond: Option<&'a LatentVideo>,
    pub image: Option<&'a LatentVideo>,
    pub text_only: Option<&'a LatentVideo>,
    pub full: Option<&'a LatentVideo>,
}

/// Scalar form of [`compose_guided`]; branch values a strategy does not use are ignored.
///
/// The ordered strategies are evaluated in coefficient form, e.g.
/// `(1−w_i)·X(∅) + (w_i−w_p)·X(I) + w_p·X(I,p)`, so that weights `(1,1)` and
/// `(0,0)` reproduce `X(I,p)` and `X(∅)` exactly in floating point.
pub fn compose_scalar(spec: &GuidanceSpec, uncond: f64, image: f64, text_only: f64, full: f64) -> f64 {
    let (wi, wp) = (spec.w_image, spec.w_text);
    match spec.strategy {
        Strategy::ImageFirst => (1.0 - wi) * uncond + (wi - wp) * image + wp * full,
        Strategy::TextFirst => (1.0 - wp) * uncond + (wp - wi) * text_only + wi * full,
        Strategy::Additive => (1.0 - wi - wp) * uncond + wi * image + wp * text_only,
        Strategy::Residual => full + (wi - 1.0) * (full - text_only) + (wp - 1.0) * (full - image),
        Strategy::TextOnly => (1.0 - wp) * uncond + wp * text_only,
    }
}

/// Combines the branch predictions into one guided prediction.
pub fn compose_guided(
    spec: &GuidanceSpec,
    x_uncond: &LatentVideo,
    x_image: &LatentVideo,
    x_text_only: Option<&LatentVideo>,
    x_full: &LatentVideo,
) -> Result<LatentVideo> {
    compose_branches(
        spec,
        Branches { uncond: Some(x_uncond), image: Some(x_image), text_only: x_text_only, full: Some(x_full) },
    )
}

/// Like [`compose_guided`], but only the branches the strategy reads must be present.
pub fn compose_branches(spec: &GuidanceSpec, b: Branches<'_>) -> Result<LatentVideo> {
    spec.validate()?;
    let st = spec.strategy;
    if st.needs_text_only() && b.text_only.is_none() {
        return Err(Error::MissingTextOnly(st.name()));
    }
    let checks = [
        (st.needs_uncond(), b.uncond, "unconditional"),
        (st.needs_image_only(), b.image, "image-conditioned"),
        (st.needs_full(), b.full, "fully conditioned"),
    ];
    for (required, present, what) in checks {
        if required && present.is_none() {
            return Err(Error::InvalidGuidance(format!("strategy {} requires the {what} prediction", st.name())));
        }
    }
    let present: Vec<&LatentVideo> = [b.uncond, b.image, b.text_only, b.full].into_iter().flatten().collect();
    let reference = present[0];
    for p in &present[1..] {
        reference.ensure_same_shape(p)?;
    }
    let len = reference.data().len();
    let pick = |v: Option<&LatentVideo>, i: usize| v.map_or(0.0, |v| v.data()[i]);
    let data = (0..len)
        .map(|i| compose_scalar(spec, pick(b.uncond, i), pick(b.image, i), pick(b.text_only, i), pick(b.full, i)))
        .collect();
    LatentVideo::from_vec(reference.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::Shape;

    fn scalar(v: f64) -> LatentVideo {
        LatentVideo::filled(Shape::new(1, 1, 1, 1).unwrap(), v)
    }

    #[test]
    fn worked_example() {
        let spec = GuidanceSpec::new(2.0, 7.5, Strategy::ImageFirst).unwrap();
        let out = compose_guided(&spec, &scalar(0.0), &scalar(1.0), None, &scalar(3.0)).unwrap();
        assert_eq!(out.data(), &[17.0]);
    }

    #[test]
    fn defaults() {
        let v = default_video_spec();
        assert_eq!((v.w_image, v.w_text, v.strategy), (2.0, 7.5, Strategy::ImageFirst));
        let i = default_image_spec();
        assert_eq!((i.w_text, i.strategy), (7.5, Strategy::TextOnly));
        let json = serde_json::to_string(&v).unwrap();
        assert_eq!(json, r#"{"w_image":2.0,"w_text":7.5,"strategy":"image_first"}"#);
        assert_eq!(serde_json::from_str::<GuidanceSpec>(&json).unwrap(), v);
    }

    #[test]
    fn missing_text_only_and_bad_weights() {
        let (a, b) = (scalar(1.0), scalar(2.0));
        for st in [Strategy::TextFirst, Strategy::Additive, Strategy::Residual, Strategy::TextOnly] {
            let spec = GuidanceSpec::new(1.0, 1.0, st).unwrap();
            assert!(matches!(compose_guided(&spec, &a, &b, None, &b), Err(Error::MissingTextOnly(_))));
        }
        assert!(GuidanceSpec::new(-1.0, 1.0, Strategy::ImageFirst).is_err());
        assert!(GuidanceSpec::new(1.0, f64::NAN, Strategy::ImageFirst).is_err());
    }

    #[test]
    fn shape_mismatch() {
        let spec = default_video_spec();
        let odd = LatentVideo::zeros(Shape::new(2, 1, 1, 1).unwrap());
        assert!(matches!(
            compose_guided(&spec, &scalar(0.0), &odd, None, &scalar(0.0)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn parse_strategy() {
        assert_eq!("image-first".parse::<Strategy>().unwrap(), Strategy::ImageFirst);
        assert_eq!("RESIDUAL".parse::<Strategy>().unwrap(), Strategy::Residual);
        assert!("both".parse::<Strategy>().is_err());
    }
}
