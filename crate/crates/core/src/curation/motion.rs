use crate::error::{Error, Result};

use super::video::{Frame, FrameSequence};

pub const DEFAULT_BLOCK: usize = 16;
pub const DEFAULT_RADIUS: usize = 7;

/// Best displacement for one tile of `next` against `prev`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockMatch {
    pub dx: i64,
    pub dy: i64,
    pub sad: u64,
}

fn clamp_table(len: usize, padded: usize, radius: usize) -> Vec<usize> {
    // Entry k corresponds to coordinate k - radius.
    (0..padded + 2 * radius).map(|k| (k as i64 - radius as i64).clamp(0, len as i64 - 1) as usize).collect()
}

fn check(prev: &Frame, next: &Frame, block: usize, radius: usize) -> Result<()> {
    if prev.width() != next.width() || prev.height() != next.height() {
        return Err(Error::InvalidFrames(format!(
            "frame sizes differ: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    if block == 0 || radius == 0 {
        return Err(Error::InvalidFrames("block and radius must be positive".into()));
    }
    Ok(())
}

/// Exhaustive block matching. `next` is edge-padded to a multiple of `block`;
/// reference pixels outside `prev` are clamped to its border. Ties go to the
/// smallest |d|², then to the first displacement in row-major order.
pub fn block_matches(prev: &Frame, next: &Frame, block: usize, radius: usize) -> Result<Vec<BlockMatch>> {
    check(prev, next, block, radius)?;
    let (w, h) = (next.width(), next.height());
    let (tiles_x, tiles_y) = (w.div_ceil(block), h.div_ceil(block));
    let (xs, ys) = (clamp_table(w, tiles_x * block, radius), clamp_table(h, tiles_y * block, radius));
    let (p, n) = (prev.rgb(), next.rgb());
    let r = radius as i64;
    let mut out = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let (y0, x0) = (ty * block, tx * block);
            let mut best = BlockMatch { dx: 0, dy: 0, sad: u64::MAX };
            let mut best_mag = i64::MAX;
            for dy in -r..=r {
                for dx in -r..=r {
                    let mut sad = 0u64;
                    'rows: for y in y0..y0 + block {
                        let ny = ys[y + radius];
                        let py = ys[(y as i64 + dy + r) as usize];
                        for x in x0..x0 + block {
                            let ni = (ny * w + xs[x + radius]) * 3;
                            let pi = (py * w + xs[(x as i64 + dx + r) as usize]) * 3;
                            for c in 0..3 {
                                sad += n[ni + c].abs_diff(p[pi + c]) as u64;
                            }
                        }
                        if sad > best.sad {
                            break 'rows;
                        }
                    }
                    let mag = dx * dx + dy * dy;
                    if sad < best.sad || (sad == best.sad && mag < best_mag) {
                        best = BlockMatch { dx, dy, sad };
                        best_mag = mag;
                    }
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Mean over tiles of `(dx² + dy²) / block²`.
pub fn motion_score(prev: &Frame, next: &Frame, block: usize, radius: usize) -> Result<f64> {
    let matches = block_matches(prev, next, block, radius)?;
    let energy: i64 = matches.iter().map(|m| m.dx * m.dx + m.dy * m.dy).sum();
    Ok(energy as f64 / (block * block) as f64 / matches.len() as f64)
}

/// One score per transition `f_i → f_{i+1}`.
pub fn motion_scores(seq: &FrameSequence, block: usize, radius: usize) -> Result<Vec<f64>> {
    if seq.len() < 2 {
        return Err(Error::InvalidFrames("motion scoring needs at least 2 frames".into()));
    }
    let pairs: Vec<(&Frame, &Frame)> = seq.frames().windows(2).map(|w| (&w[0], &w[1])).collect();
    let score = |&(a, b): &(&Frame, &Frame)| motion_score(a, b, block, radius);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        pairs.par_iter().map(score).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        pairs.iter().map(score).collect()
    }
}
