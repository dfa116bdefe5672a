use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::filter::{hq_filter, HqThresholds};
use super::motion::{motion_scores, DEFAULT_BLOCK, DEFAULT_RADIUS};
use super::video::FrameDecoder;

/// One JSONL manifest line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motion_scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub keep: Option<bool>,
    /// Why the entry could not be decided.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationOptions {
    pub block: usize,
    pub radius: usize,
    pub thresholds: HqThresholds,
}

impl Default for CurationOptions {
    fn default() -> Self {
        Self { block: DEFAULT_BLOCK, radius: DEFAULT_RADIUS, thresholds: HqThresholds::default() }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurationSummary {
    pub total: usize,
    pub kept: usize,
    pub rejected: usize,
    pub incomplete: usize,
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry =
            serde_json::from_str(&line).map_err(|e| Error::InvalidEntry(format!("manifest line {}: {e}", i + 1)))?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(entries: &[ManifestEntry], mut out: W) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Decodes the entry's video, fills its motion scores and decides `keep`.
/// Any failure leaves `keep` unset and records the reason.
pub fn curate_entry(
    entry: &ManifestEntry,
    base: &Path,
    opts: &CurationOptions,
    decoder: &dyn FrameDecoder,
) -> ManifestEntry {
    let mut out = ManifestEntry { keep: None, error: None, ..entry.clone() };
    let path = base.join(&entry.video_path);
    let result =
        decoder.decode(&path).and_then(|seq| motion_scores(&seq, opts.block, opts.radius)).and_then(|scores| {
            out.motion_scores = Some(scores);
            hq_filter(&out, &opts.thresholds)
        });
    match result {
        Ok(keep) => out.keep = Some(keep),
        Err(e) => out.error = Some(e.to_string()),
    }
    out
}

/// Curates entries in order; relative video paths resolve against `base`.
pub fn curate_entries(
    entries: &[ManifestEntry],
    base: &Path,
    opts: &CurationOptions,
    decoder: &dyn FrameDecoder,
) -> (Vec<ManifestEntry>, CurationSummary) {
    let run = |e: &ManifestEntry| curate_entry(e, base, opts, decoder);
    #[cfg(feature = "parallel")]
    let out: Vec<ManifestEntry> = {
        use rayon::prelude::*;
        entries.par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let out: Vec<ManifestEntry> = entries.iter().map(run).collect();

    let mut summary = CurationSummary { total: out.len(), ..Default::default() };
    for e in &out {
        match e.keep {
            Some(true) => summary.kept += 1,
            Some(false) => summary.rejected += 1,
            None => summary.incomplete += 1,
        }
    }
    (out, summary)
}

pub fn run_curation(
    manifest_in: impl AsRef<Path>,
    manifest_out: impl AsRef<Path>,
    opts: &CurationOptions,
    decoder: &dyn FrameDecoder,
) -> Result<CurationSummary> {
    let manifest_in = manifest_in.as_ref();
    let entries = read_manifest(std::io::BufReader::new(std::fs::File::open(manifest_in)?))?;
    let base: PathBuf = manifest_in.parent().map(Path::to_path_buf).unwrap_or_default();
    let (out, summary) = curate_entries(&entries, &base, opts, decoder);
    write_manifest(&out, std::io::BufWriter::new(std::fs::File::create(manifest_out)?))?;
    Ok(summary)
}
