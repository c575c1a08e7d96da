//! Binary portable pixmap (P6) and graymap (P5) reader/writer.
//!
//! Only the binary variants are supported: P6 is always 3-channel, P5 is
//! 1-channel at 8 or 16 bits. Samples wider than 8 bits are big-endian as
//! the format mandates. Values map to `[0, 1]` by dividing by the declared
//! maxval; writing quantizes with `round(v * maxval)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::PnmParse {
            path: self.path.to_path_buf(),
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skip whitespace and `#` comments (comments run to end of line).
    fn skip_separators(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(b) = self.peek() {
                    self.pos += 1;
                    if b == b'\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<u32> {
        self.skip_separators();
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() {
                value = value * 10 + (b - b'0') as u64;
                if value > u32::MAX as u64 {
                    return Err(self.err(format!("{what} out of range")));
                }
                self.pos += 1;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        Ok(value as u32)
    }
}

/// Read a P5/P6 file into an [`Image`] scaled to `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0, path };

    let channels = match (cur.peek(), bytes.get(1).copied()) {
        (Some(b'P'), Some(b'5')) => 1usize,
        (Some(b'P'), Some(b'6')) => 3usize,
        _ => return Err(cur.err("bad magic, expected P5 or P6")),
    };
    cur.pos = 2;

    let width = cur.read_uint("width")? as usize;
    let height = cur.read_uint("height")? as usize;
    let maxval = cur.read_uint("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(cur.err(format!("maxval {maxval} out of range 1..=65535")));
    }
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    // Exactly one whitespace byte separates the header from the payload.
    match cur.peek() {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace before payload")),
    }

    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let n_samples = height * width * channels;
    let expected = n_samples * bytes_per_sample;
    let payload = &bytes[cur.pos.min(bytes.len())..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: payload.len(),
        });
    }

    let scale = 1.0 / maxval as f32;
    let mut data = Vec::with_capacity(n_samples);
    if bytes_per_sample == 1 {
        data.extend(payload[..n_samples].iter().map(|&b| b as f32 * scale));
    } else {
        for pair in payload[..expected].chunks_exact(2) {
            let v = u16::from_be_bytes([pair[0], pair[1]]);
            if v as u32 > maxval {
                return Err(cur.err(format!("sample {v} exceeds maxval {maxval}")));
            }
            data.push(v as f32 * scale);
        }
    }
    Image::new(height, width, channels, data)
}

/// Write an [`Image`] as P6 (3-channel) or P5 (1-channel).
///
/// `bit_depth` selects maxval 255 or 65535; values are clamped to `[0, 1]`
/// and quantized by `round(v * maxval)`.
pub fn write_image(img: &Image, path: impl AsRef<Path>, bit_depth: u8) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(img, bit_depth)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// In-memory encoder behind [`write_image`]; exposed for byte-level tests.
pub fn encode_image(img: &Image, bit_depth: u8) -> Result<Vec<u8>> {
    let (magic, maxval): (&str, u32) = match (img.channels, bit_depth) {
        (3, 8) => ("P6", 255),
        (3, 16) => ("P6", 65535),
        (1, 8) => ("P5", 255),
        (1, 16) => ("P5", 65535),
        (c, d) => {
            return Err(Error::Arg(format!(
                "unsupported channels/bit depth combination {c}/{d}"
            )))
        }
    };
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Arg("image contains non-finite values".into()));
    }
    let header = format!("{magic}\n{} {}\n{maxval}\n", img.width, img.height);
    let mut out = header.into_bytes();
    if maxval == 255 {
        out.reserve(img.data.len());
        for &v in &img.data {
            out.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    } else {
        out.reserve(img.data.len() * 2);
        for &v in &img.data {
            let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            out.extend_from_slice(&q.to_be_bytes());
        }
    }
    Ok(out)
}
