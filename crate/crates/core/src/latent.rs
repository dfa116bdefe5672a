//! Dense `T x C x H x W` latent tensors and their on-disk format.
//!
//! The file format is a single-line JSON header terminated by `\n`, followed
//! by `T*C*H*W` little-endian `f32` values in row-major
//! `(frame, channel, height, width)` order:
//!
//! ```text
//! {"shape":[T,C,H,W],"dtype":"f32","order":"row-major","endian":"little"}\n<raw bytes>
//! ```
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions of a latent video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if frames == 0 || channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "all dimensions must be positive, got [{frames}, {channels}, {height}, {width}]"
            )));
        }
        Ok(Self { frames, channels, height, width })
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.frames, self.channels, self.height, self.width]
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of spatial cells in one channel plane.
    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    /// Number of values in one frame.
    pub fn frame_len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn with_frames(&self, frames: usize) -> Self {
        Self { frames, ..*self }
    }

    pub fn with_channels(&self, channels: usize) -> Self {
        Self { channels, ..*self }
    }
}

/// A real-valued latent video stored contiguously in row-major
/// `(frame, channel, height, width)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    shape: Shape,
    data: Vec<f64>,
}

impl LatentVideo {
    pub fn zeros(shape: Shape) -> Self {
        Self { shape, data: vec![0.0; shape.len()] }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self { shape, data: vec![value; shape.len()] }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match shape {:?} ({} values)",
                data.len(),
                shape.as_array(),
                shape.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self { shape, data })
    }

    /// Builds a latent by evaluating `f(frame, channel, y, x)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for t in 0..shape.frames {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(t, c, y, x));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * self.shape.channels + c) * self.shape.height + y) * self.shape.width + x
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(t, c, y, x)]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.shape.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    /// Copies frames `range` into a new latent.
    pub fn frames(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.shape.frames {
            return Err(Error::InvalidShape(format!("frame range {range:?} invalid for {} frames", self.shape.frames)));
        }
        let n = self.shape.frame_len();
        Ok(Self {
            shape: self.shape.with_frames(range.len()),
            data: self.data[range.start * n..range.end * n].to_vec(),
        })
    }

    /// Concatenates latents along the frame axis.
    pub fn concat_frames(parts: &[&LatentVideo]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape("nothing to concatenate".into()))?;
        let base = first.shape;
        let mut data = Vec::new();
        let mut frames = 0;
        for p in parts {
            if p.shape.with_frames(base.frames) != base {
                return Err(Error::ShapeMismatch {
                    expected: base.with_frames(p.shape.frames).as_array(),
                    got: p.shape.as_array(),
                });
            }
            frames += p.shape.frames;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: base.with_frames(frames), data })
    }

    /// Concatenates latents along the channel axis, frame by frame.
    pub fn concat_channels(parts: &[&LatentVideo]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidShape("nothing to concatenate".into()))?;
        let base = first.shape;
        let mut channels = 0;
        for p in parts {
            if p.shape.with_channels(base.channels) != base {
                return Err(Error::ShapeMismatch {
                    expected: base.with_channels(p.shape.channels).as_array(),
                    got: p.shape.as_array(),
                });
            }
            channels += p.shape.channels;
        }
        let shape = base.with_channels(channels);
        let mut data = Vec::with_capacity(shape.len());
        for t in 0..base.frames {
            for p in parts {
                data.extend_from_slice(p.frame(t));
            }
        }
        Ok(Self { shape, data })
    }

    pub fn ensure_same_shape(&self, other: &LatentVideo) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { expected: self.shape.as_array(), got: other.shape.as_array() });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &LatentVideo) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Writes the latent in the header + raw little-endian `f32` format.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = LatentHeader {
            shape: self.shape.as_array(),
            dtype: "f32".into(),
            order: "row-major".into(),
            endian: "little".into(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)?;
        if line.last() != Some(&b'\n') {
            return Err(Error::Format("latent header is not newline-terminated".into()));
        }
        let header: LatentHeader = serde_json::from_slice(&line)?;
        if header.dtype != "f32" || header.order != "row-major" || header.endian != "little" {
            return Err(Error::Format(format!(
                "unsupported latent encoding {}/{}/{}",
                header.dtype, header.order, header.endian
            )));
        }
        let [t, c, h, w] = header.shape;
        let shape = Shape::new(t, c, h, w)?;
        let mut raw = vec![0u8; shape.len() * 4];
        r.read_exact(&mut raw).map_err(|e| Error::Format(format!("truncated latent payload: {e}")))?;
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::Format("trailing bytes after latent payload".into()));
        }
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64).collect();
        Self::from_vec(shape, data)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LatentHeader {
    shape: [usize; 4],
    dtype: String,
    order: String,
    endian: String,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_is_bit_exact() {
        let v = LatentVideo::filled(Shape::new(1, 1, 1, 2).unwrap(), 1.5);
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let expected_header = br#"{"shape":[1,1,1,2],"dtype":"f32","order":"row-major","endian":"little"}"#;
        assert_eq!(&buf[..expected_header.len()], expected_header);
        assert_eq!(buf[expected_header.len()], b'\n');
        assert_eq!(&buf[expected_header.len() + 1..], &[0, 0, 0xc0, 0x3f, 0, 0, 0xc0, 0x3f]);
    }

    #[test]
    fn rejects_truncated_and_trailing() {
        let v = LatentVideo::zeros(Shape::new(2, 1, 2, 2).unwrap());
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        assert!(LatentVideo::read_from(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(LatentVideo::read_from(&extra[..]).is_err());
    }

    #[test]
    fn rejects_bad_lengths_and_nan() {
        let s = Shape::new(1, 1, 2, 2).unwrap();
        assert!(LatentVideo::from_vec(s, vec![0.0; 3]).is_err());
        assert!(LatentVideo::from_vec(s, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Shape::new(0, 1, 1, 1).is_err());
    }

    #[test]
    fn channel_concat_interleaves_per_frame() {
        let s = Shape::new(2, 1, 1, 2).unwrap();
        let a = LatentVideo::from_vec(s, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = LatentVideo::from_vec(s, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = LatentVideo::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape().channels, 2);
        assert_eq!(c.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }

    proptest! {
        #[test]
        fn f32_values_survive_file_round_trip(
            dims in (1usize..4, 1usize..4, 1usize..4, 1usize..4),
            seed in any::<u64>(),
        ) {
            let shape = Shape::new(dims.0, dims.1, dims.2, dims.3).unwrap();
            let mut k = seed;
            let v = LatentVideo::from_fn(shape, |_, _, _, _| {
                k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((k >> 40) as f32 / 1000.0 - 8000.0) as f64
            });
            let mut buf = Vec::new();
            v.write_to(&mut buf).unwrap();
            let back = LatentVideo::read_from(&buf[..]).unwrap();
            prop_assert_eq!(back, v);
        }
    }
}
