//! Binary 8-bit grayscale PGM (P5) encoding and decoding.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Largest accepted width or height when decoding.
pub const MAX_SIDE: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Format(format!(
                "{} bytes for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Quantizes `values` linearly from `[lo, hi]` to `[0, 255]`, clamping.
    pub fn from_values(values: &Array2<f64>, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if !(hi > lo) {
            return Err(Error::InvalidParameter(format!("empty value range [{lo}, {hi}]")));
        }
        let (h, w) = values.dim();
        let data = values
            .iter()
            .map(|&v| {
                let u = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
                // NaN clamps to NaN and `as u8` saturates it to 0.
                (u * 255.0).round() as u8
            })
            .collect();
        Self::new(w, h, data)
    }

    /// Inverse of [`GrayImage::from_values`] up to quantization.
    pub fn to_values(&self, range: (f64, f64)) -> Array2<f64> {
        let (lo, hi) = range;
        Array2::from_shape_fn((self.height, self.width), |(y, x)| {
            lo + (hi - lo) * self.data[y * self.width + x] as f64 / 255.0
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Parses a binary PGM with maxval <= 255. `#` comments are allowed in
    /// the header; exactly one whitespace byte separates maxval from pixels.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cur = HeaderCursor { bytes, pos: 0 };
        if cur.token()? != b"P5" {
            return Err(Error::Format("missing P5 magic".into()));
        }
        let width = cur.number()?;
        let height = cur.number()?;
        let maxval = cur.number()?;
        if width == 0 || height == 0 || width > MAX_SIDE || height > MAX_SIDE {
            return Err(Error::Format(format!("unsupported size {width}x{height}")));
        }
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported maxval {maxval}")));
        }
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            _ => return Err(Error::Format("missing separator after maxval".into())),
        }
        let n = width * height;
        let pixels = bytes
            .get(cur.pos..cur.pos + n)
            .ok_or_else(|| Error::Format(format!("truncated pixel data, need {n} bytes")))?;
        let data = if maxval == 255 {
            pixels.to_vec()
        } else {
            pixels
                .iter()
                .map(|&p| ((p.min(maxval as u8) as u32 * 255 + maxval as u32 / 2) / maxval as u32) as u8)
                .collect()
        };
        Self::new(width, height, data)
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_space();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("truncated header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        if tok.len() > 9 || !tok.iter().all(u8::is_ascii_digit) {
            return Err(Error::Format(format!(
                "bad header number {:?}",
                String::from_utf8_lossy(tok)
            )));
        }
        Ok(tok.iter().fold(0usize, |acc, &d| acc * 10 + (d - b'0') as usize))
    }
}
