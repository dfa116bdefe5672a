//! Motion scoring by block matching and the high-quality finetuning filter.

mod filter;
mod manifest;
mod motion;
mod video;

pub use filter::{hq_filter, min_window_sum, HqThresholds};
pub use manifest::{
    curate_entries, curate_entry, read_manifest, run_curation, write_manifest, CurationOptions, CurationSummary,
    ManifestEntry,
};
pub use motion::{block_matches, motion_score, motion_scores, BlockMatch, DEFAULT_BLOCK, DEFAULT_RADIUS};
pub use video::{synthetic_pan, Frame, FrameDecoder, FrameSequence, RawVideoDecoder};
