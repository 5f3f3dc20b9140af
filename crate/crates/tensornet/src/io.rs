//! The ATLG raw array format: a 16-byte header (magic `ATLG`, then `u32`
//! width, height and channel count, all little-endian) followed by
//! `width · height · channels` little-endian `f32` values in planar
//! (channel-major, then row-major) order.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::TensorError;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ATLG";

/// A planar `f32` array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub data: Vec<f32>,
}

impl RawArray {
    pub fn expected_len(&self) -> usize {
        self.width as usize * self.height as usize * self.channels as usize
    }

    pub fn write_to(&self, mut w: impl Write) -> io::Result<()> {
        if self.data.len() != self.expected_len() {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "ATLG payload length does not match header"));
        }
        let mut buf = Vec::with_capacity(16 + 4 * self.data.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.width.to_le_bytes());
        buf.extend_from_slice(&self.height.to_le_bytes());
        buf.extend_from_slice(&self.channels.to_le_bytes());
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> io::Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "missing ATLG magic"));
        }
        let field = |k: usize| u32::from_le_bytes(header[4 * k..4 * k + 4].try_into().unwrap());
        let (width, height, channels) = (field(1), field(2), field(3));
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let len = width as usize * height as usize * channels as usize;
        if body.len() != 4 * len {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("ATLG payload has {} bytes, header implies {}", body.len(), 4 * len),
            ));
        }
        let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        let mut f = io::BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()
    }

    pub fn load(path: impl AsRef<Path>) -> io::Result<Self> {
        Self::read_from(io::BufReader::new(fs::File::open(path)?))
    }

    /// Header for a tensor: `[C, H, W]`, `[H, W]` and `[N]` map to
    /// (width, height, channels) = (W, H, C), (W, H, 1) and (N, 1, 1).
    pub fn from_tensor(t: &Tensor) -> Result<Self, TensorError> {
        let (width, height, channels) = match *t.shape() {
            [c, h, w] => (w, h, c),
            [h, w] => (w, h, 1),
            [n] => (n, 1, 1),
            [] => (1, 1, 1),
            _ => {
                return Err(TensorError::InvalidArgument(format!(
                    "cannot dump a rank-{} tensor as ATLG",
                    t.shape().len()
                )))
            }
        };
        let to_u32 = |v: usize| u32::try_from(v).map_err(|_| TensorError::InvalidArgument(format!("extent {v} exceeds u32")));
        Ok(Self {
            width: to_u32(width)?,
            height: to_u32(height)?,
            channels: to_u32(channels)?,
            data: t.data().iter().map(|&v| v as f32).collect(),
        })
    }

    /// `[C, H, W]` tensor with the values widened to `f64`.
    pub fn to_tensor(&self) -> Tensor {
        let shape = vec![self.channels as usize, self.height as usize, self.width as usize];
        Tensor::from_vec(shape, self.data.iter().map(|&v| v as f64).collect()).expect("length checked on read")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let a = RawArray {
            width: 2,
            height: 1,
            channels: 1,
            data: vec![1.0, -0.5],
        };
        let mut buf = Vec::new();
        a.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"ATLG");
        assert_eq!(&buf[4..8], &2u32.to_le_bytes());
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
        assert_eq!(&buf[12..16], &1u32.to_le_bytes());
        assert_eq!(&buf[16..20], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 24);
        assert_eq!(RawArray::read_from(buf.as_slice()).unwrap(), a);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let mut buf = Vec::new();
        buf.extend_from_slice(b"ATLG");
        for v in [2u32, 2, 1] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&[0u8; 8]);
        assert!(RawArray::read_from(buf.as_slice()).is_err());
    }

    #[test]
    fn tensor_dump_shapes() {
        let t = Tensor::zeros(&[2, 3, 4]);
        let a = RawArray::from_tensor(&t).unwrap();
        assert_eq!((a.width, a.height, a.channels), (4, 3, 2));
        assert_eq!(a.to_tensor().shape(), &[2, 3, 4]);
    }
}
