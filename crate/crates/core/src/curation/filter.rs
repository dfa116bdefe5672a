use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::manifest::ManifestEntry;

/// Thresholds of the high-quality finetuning filter. All comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HqThresholds {
    pub clip_min: f64,
    pub aesthetic_min: f64,
    pub motion_min: f64,
    /// Consecutive transitions per motion window.
    pub window: usize,
}

impl Default for HqThresholds {
    fn default() -> Self {
        Self { clip_min: 0.25, aesthetic_min: 5.7, motion_min: 0.5, window: 6 }
    }
}

/// Smallest sum over all runs of `window` consecutive scores.
pub fn min_window_sum(scores: &[f64], window: usize) -> Result<f64> {
    if window == 0 {
        return Err(Error::InvalidEntry("window must be positive".into()));
    }
    if scores.len() < window {
        return Err(Error::InvalidEntry(format!("{} motion scores cannot fill a window of {window}", scores.len())));
    }
    let mut sum: f64 = scores[..window].iter().sum();
    let mut best = sum;
    for i in window..scores.len() {
        sum += scores[i] - scores[i - window];
        best = best.min(sum);
    }
    Ok(best)
}

/// `clip > clip_min ∧ aesthetic > aesthetic_min ∧ every window of `window`
/// consecutive transition scores sums above `motion_min`.
pub fn hq_filter(entry: &ManifestEntry, th: &HqThresholds) -> Result<bool> {
    let clip = entry.clip_score.ok_or(Error::IncompleteEntry("clip_score"))?;
    let aesthetic = entry.aesthetic_score.ok_or(Error::IncompleteEntry("aesthetic_score"))?;
    let motion = entry.motion_scores.as_deref().ok_or(Error::IncompleteEntry("motion_scores"))?;
    if !clip.is_finite() || !aesthetic.is_finite() || motion.iter().any(|m| !m.is_finite() || *m < 0.0) {
        return Err(Error::InvalidEntry(format!(
            "{}: scores must be finite and motion non-negative",
            entry.video_path
        )));
    }
    min_window_sum(motion, th.window)?;
    let motion_ok = motion.windows(th.window).all(|w| w.iter().sum::<f64>() > th.motion_min);
    Ok(clip > th.clip_min && aesthetic > th.aesthetic_min && motion_ok)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(clip: f64, aesthetic: f64, motion: Vec<f64>) -> ManifestEntry {
        ManifestEntry {
            video_path: "v.rgbv".into(),
            clip_score: Some(clip),
            aesthetic_score: Some(aesthetic),
            motion_scores: Some(motion),
            ..Default::default()
        }
    }

    #[test]
    fn thresholds_are_strict() {
        let th = HqThresholds::default();
        assert!(hq_filter(&entry(0.30, 6.0, vec![0.1; 12]), &th).unwrap());
        assert!(!hq_filter(&entry(0.25, 6.0, vec![0.1; 12]), &th).unwrap());
        assert!(!hq_filter(&entry(0.30, 5.7, vec![0.1; 12]), &th).unwrap());
        let mut m = vec![0.2; 12];
        m[4..10].copy_from_slice(&[0.4 / 6.0; 6]);
        assert!(!hq_filter(&entry(0.30, 6.0, m), &th).unwrap());
    }

    #[test]
    fn missing_fields_are_incomplete() {
        let th = HqThresholds::default();
        let mut e = entry(0.3, 6.0, vec![0.1; 6]);
        e.aesthetic_score = None;
        assert!(matches!(hq_filter(&e, &th), Err(Error::IncompleteEntry("aesthetic_score"))));
        let mut e = entry(0.3, 6.0, vec![0.1; 6]);
        e.motion_scores = None;
        assert!(matches!(hq_filter(&e, &th), Err(Error::IncompleteEntry("motion_scores"))));
        assert!(matches!(hq_filter(&entry(0.3, 6.0, vec![0.1; 5]), &th), Err(Error::InvalidEntry(_))));
        assert!(hq_filter(&entry(0.3, 6.0, vec![0.1; 6]), &th).is_ok());
    }

    proptest! {
        #[test]
        fn window_rule_matches_enumeration(
            scores in proptest::collection::vec(0.0f64..0.3, 6..40),
            clip in 0.2f64..0.3,
            aesthetic in 5.5f64..6.0,
        ) {
            let th = HqThresholds::default();
            let got = hq_filter(&entry(clip, aesthetic, scores.clone()), &th).unwrap();
            let mut all_windows = true;
            for j in 0..=scores.len() - 6 {
                let s: f64 = (j..j + 6).map(|i| scores[i]).sum();
                all_windows &= s > 0.5;
            }
            prop_assert_eq!(got, clip > 0.25 && aesthetic > 5.7 && all_windows);
        }
    }
}
