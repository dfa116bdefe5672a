use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// One RGB frame, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    rgb: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, rgb: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidFrames("frame dimensions must be positive".into()));
        }
        if rgb.len() != width * height * 3 {
            return Err(Error::InvalidFrames(format!(
                "{width}x{height} frame needs {} bytes, got {}",
                width * height * 3,
                rgb.len()
            )));
        }
        Ok(Self { width, height, rgb })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Result<Self> {
        Self::new(width, height, color.repeat(width * height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self) -> &[u8] {
        &self.rgb
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Decoded video: frames of equal size plus a positive frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
    fps: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::InvalidFrames(format!("fps must be positive, got {fps}")));
        }
        let first = frames.first().ok_or_else(|| Error::InvalidFrames("no frames".into()))?;
        let (w, h) = (first.width, first.height);
        if let Some(i) = frames.iter().position(|f| f.width != w || f.height != h) {
            return Err(Error::InvalidFrames(format!("frame {i} is not {w}x{h}")));
        }
        Ok(Self { frames, fps })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }
}

/// Source of decoded frames for a manifest path.
pub trait FrameDecoder: Sync {
    fn decode(&self, path: &Path) -> Result<FrameSequence>;
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHeader {
    width: usize,
    height: usize,
    frames: usize,
    fps: f64,
}

/// Uncompressed `.rgbv` files: one JSON header line
/// `{"width":W,"height":H,"frames":N,"fps":F}` followed by N·H·W·3 bytes.
#[derive(Debug, Clone, Copy, Default)]
pub struct RawVideoDecoder;

impl RawVideoDecoder {
    pub fn read<R: Read>(input: R) -> Result<FrameSequence> {
        let mut r = BufReader::new(input);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("rgbv header must end with a newline".into()));
        }
        let h: RawHeader = serde_json::from_slice(&line)?;
        if h.frames == 0 {
            return Err(Error::InvalidFrames("no frames".into()));
        }
        let frame_bytes = h
            .width
            .checked_mul(h.height)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| Error::Format("frame size overflows".into()))?;
        let mut frames = Vec::with_capacity(h.frames);
        for i in 0..h.frames {
            let mut buf = vec![0u8; frame_bytes];
            r.read_exact(&mut buf).map_err(|_| Error::Format(format!("rgbv payload truncated in frame {i}")))?;
            frames.push(Frame::new(h.width, h.height, buf)?);
        }
        if r.fill_buf()?.is_empty() {
            FrameSequence::new(frames, h.fps)
        } else {
            Err(Error::Format("trailing bytes after rgbv payload".into()))
        }
    }

    pub fn write<W: Write>(seq: &FrameSequence, mut out: W) -> Result<()> {
        let h = RawHeader { width: seq.width(), height: seq.height(), frames: seq.len(), fps: seq.fps };
        serde_json::to_writer(&mut out, &h)?;
        out.write_all(b"\n")?;
        for f in &seq.frames {
            out.write_all(&f.rgb)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(seq: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
        Self::write(seq, std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

impl FrameDecoder for RawVideoDecoder {
    fn decode(&self, path: &Path) -> Result<FrameSequence> {
        Self::read(std::fs::File::open(path)?)
    }
}

/// A random RGB texture translated by `(dx, dy)` pixels per frame.
pub fn synthetic_pan(width: usize, height: usize, frames: usize, dx: i64, dy: i64, seed: u64) -> Result<FrameSequence> {
    use rand::Rng as _;
    if frames == 0 {
        return Err(Error::InvalidFrames("no frames".into()));
    }
    let span = frames as i64 - 1;
    let (tw, th) =
        (width + (dx.unsigned_abs() as usize) * span as usize, height + (dy.unsigned_abs() as usize) * span as usize);
    let mut r = rng::seeded(seed);
    let texture: Vec<u8> = (0..tw * th * 3).map(|_| r.random()).collect();
    let origin = |d: i64, t: i64| if d >= 0 { (span - t) * d } else { -t * d };
    let out = (0..frames as i64)
        .map(|t| {
            let (ox, oy) = (origin(dx, t) as usize, origin(dy, t) as usize);
            let mut rgb = Vec::with_capacity(width * height * 3);
            for y in 0..height {
                let row = ((y + oy) * tw + ox) * 3;
                rgb.extend_from_slice(&texture[row..row + width * 3]);
            }
            Frame::new(width, height, rgb)
        })
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(out, 24.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgbv_round_trip_and_rejects_damage() {
        let seq = synthetic_pan(5, 3, 4, 1, 0, 2).unwrap();
        let mut buf = Vec::new();
        RawVideoDecoder::write(&seq, &mut buf).unwrap();
        assert!(buf.starts_with(br#"{"width":5,"height":3,"frames":4,"fps":24.0}"#));
        assert_eq!(RawVideoDecoder::read(&buf[..]).unwrap(), seq);
        assert!(RawVideoDecoder::read(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(RawVideoDecoder::read(&extra[..]).is_err());
    }

    #[test]
    fn pan_moves_content() {
        let seq = synthetic_pan(6, 4, 3, 2, -1, 5).unwrap();
        let (a, b) = (&seq.frames()[0], &seq.frames()[1]);
        // Content at (y, x) in frame t appears at (y + dy, x + dx) in frame t + 1.
        for y in 1..4 {
            for x in 0..4 {
                assert_eq!(b.pixel(y - 1, x + 2), a.pixel(y, x));
            }
        }
    }

    #[test]
    fn sequence_validation() {
        let a = Frame::filled(2, 2, [1, 2, 3]).unwrap();
        let b = Frame::filled(3, 2, [1, 2, 3]).unwrap();
        assert!(FrameSequence::new(vec![a.clone(), b], 24.0).is_err());
        assert!(FrameSequence::new(vec![a], 0.0).is_err());
        assert!(Frame::new(2, 2, vec![0; 11]).is_err());
    }
}
