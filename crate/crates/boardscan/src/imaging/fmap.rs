//! FMAP1: a lossless float-map container for intermediate artifacts.
//!
//! Layout: ASCII magic line `FMAP1`, ASCII header line `H W C`, then
//! `H*W*C` little-endian 32-bit floats, row-major and channel-interleaved.
//! Endianness is fixed so files move between machines unchanged.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::Image;

pub const MAGIC: &[u8] = b"FMAP1\n";

pub fn write_float_map(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_float_map(img)).map_err(|e| Error::io(path, e))
}

pub fn encode_float_map(img: &Image) -> Vec<u8> {
    let mut out = Vec::with_capacity(MAGIC.len() + 16 + img.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(format!("{} {} {}\n", img.height, img.width, img.channels).as_bytes());
    for &v in &img.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_float_map(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (img, consumed) = decode_float_map(&bytes, path)?;
    if consumed != bytes.len() {
        return Err(Error::FmapFormat {
            path: path.to_path_buf(),
            reason: format!("{} trailing bytes after payload", bytes.len() - consumed),
        });
    }
    Ok(img)
}

/// Decode one float map from a byte buffer; returns the image and the number
/// of bytes consumed (checkpoints concatenate several maps in one file).
pub fn decode_float_map(bytes: &[u8], path: &Path) -> Result<(Image, usize)> {
    let fail = |reason: String| Error::FmapFormat {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(fail("bad magic, expected FMAP1".into()));
    }
    let mut pos = MAGIC.len();
    let line_end = bytes[pos..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[pos..pos + line_end])
        .map_err(|_| fail("header is not ASCII".into()))?;
    pos += line_end + 1;

    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| fail(format!("bad header line {header:?}")))?;
    let [height, width, channels] = dims[..] else {
        return Err(fail(format!("expected 3 dims, got {}", dims.len())));
    };

    let n = height * width * channels;
    let expected = n * 4;
    let payload = &bytes[pos..];
    if payload.len() < expected {
        return Err(fail(format!(
            "size mismatch: header {height} {width} {channels} needs {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(n);
    for quad in payload[..expected].chunks_exact(4) {
        data.push(f32::from_le_bytes([quad[0], quad[1], quad[2], quad[3]]));
    }
    let img = Image::new(height, width, channels, data)?;
    Ok((img, pos + expected))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pixel_map_layout_and_exact_readback() {
        let img = Image::new(1, 2, 1, vec![0.25, 0.75]).unwrap();
        let bytes = encode_float_map(&img);
        // "FMAP1\n" + "1 2 1\n" header region, then 2 little-endian floats
        assert_eq!(&bytes[..12], b"FMAP1\n1 2 1\n");
        assert_eq!(bytes.len(), 12 + 8);
        let (back, used) = decode_float_map(&bytes, Path::new("mem")).unwrap();
        assert_eq!(used, bytes.len());
        assert_eq!(back, img);
    }

    #[test]
    fn size_mismatch_detected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"FMAP1\n2 2 3\n");
        bytes.extend_from_slice(&[0u8; 40]); // needs 48
        match decode_float_map(&bytes, Path::new("mem")) {
            Err(Error::FmapFormat { reason, .. }) => {
                assert!(reason.contains("48"), "reason: {reason}")
            }
            other => panic!("expected size mismatch, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_detected() {
        let bytes = b"FMAP2\n1 1 1\n\x00\x00\x00\x00";
        assert!(decode_float_map(bytes, Path::new("mem")).is_err());
    }
}
