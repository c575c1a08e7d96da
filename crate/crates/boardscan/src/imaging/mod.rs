//! Pixel containers, overlapping-patch geometry, and file I/O.
//!
//! Everything downstream (board synthesis, the network, patch merging,
//! metrics) moves pixels through the [`Image`] type defined here. Images are
//! immutable in spirit: operations return new buffers, so sharing across
//! threads is safe.

pub mod fmap;
pub mod grid;
pub mod pnm;

pub use grid::{build_grid, extract_patch, CellRef, PatchGrid};

use crate::error::{Error, Result};

/// H×W×C raster, row-major and channel-interleaved, values in `[0, 1]`.
///
/// Channel count is 1 (graymaps, masks written to disk) or 3 (board images).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Arg(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Reflect-pad (mirror without repeating the border pixel) to the given
    /// dimensions. Pad widths larger than `dim - 1` cannot be mirrored.
    pub fn reflect_pad(&self, new_height: usize, new_width: usize) -> Result<Image> {
        if new_height < self.height || new_width < self.width {
            return Err(Error::Arg("reflect_pad cannot shrink an image".into()));
        }
        if new_height > 2 * self.height - 1 || new_width > 2 * self.width - 1 {
            return Err(Error::Arg(format!(
                "reflect pad {}x{} -> {}x{} exceeds mirrorable range",
                self.height, self.width, new_height, new_width
            )));
        }
        let mut out = Image::zeros(new_height, new_width, self.channels);
        for r in 0..new_height {
            let sr = if r < self.height { r } else { 2 * self.height - 2 - r };
            for c in 0..new_width {
                let sc = if c < self.width { c } else { 2 * self.width - 2 - c };
                for ch in 0..self.channels {
                    let v = self.get(sr, sc, ch);
                    out.set(r, c, ch, v);
                }
            }
        }
        Ok(out)
    }

    /// Top-left crop, used to drop padding after merging.
    pub fn crop(&self, height: usize, width: usize) -> Result<Image> {
        if height > self.height || width > self.width {
            return Err(Error::Arg("crop larger than image".into()));
        }
        let mut out = Image::zeros(height, width, self.channels);
        for r in 0..height {
            let src = self.idx(r, 0, 0);
            let dst = out.idx(r, 0, 0);
            let n = width * self.channels;
            out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
        }
        Ok(out)
    }

    /// Mean over all samples; handy for regression bands in tests.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Single-channel map in `[0, 1]`; the spatial gate and all binary masks.
#[derive(Debug, Clone, PartialEq)]
pub struct GateMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GateMask {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(GateMask { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        GateMask {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    /// Number of active (> 0.5) pixels.
    pub fn area(&self) -> usize {
        self.data.iter().filter(|&&v| v > 0.5).count()
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    /// Tight bounding box of active pixels as (row, col, h, w), if any.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut r0 = usize::MAX;
        let mut c0 = usize::MAX;
        let mut r1 = 0usize;
        let mut c1 = 0usize;
        let mut any = false;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) > 0.5 {
                    any = true;
                    r0 = r0.min(r);
                    c0 = c0.min(c);
                    r1 = r1.max(r);
                    c1 = c1.max(c);
                }
            }
        }
        any.then(|| (r0, c0, r1 - r0 + 1, c1 - c0 + 1))
    }

    /// View as a 1-channel image, e.g. for writing to disk.
    pub fn to_image(&self) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_bad_length() {
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 4]).is_ok());
    }

    #[test]
    fn image_rejects_bad_channels() {
        assert!(Image::new(1, 1, 2, vec![0.0; 2]).is_err());
    }

    #[test]
    fn reflect_pad_is_mirror_symmetric() {
        // padded pixel (H + i, j) must equal pixel (H - 2 - i, j)
        let mut img = Image::zeros(5, 4, 1);
        for r in 0..5 {
            for c in 0..4 {
                img.set(r, c, 0, (r * 10 + c) as f32 / 100.0);
            }
        }
        let padded = img.reflect_pad(8, 6).unwrap();
        for i in 0..3 {
            for c in 0..4 {
                assert_eq!(padded.get(5 + i, c, 0), img.get(5 - 2 - i, c, 0));
            }
        }
        for j in 0..2 {
            for r in 0..5 {
                assert_eq!(padded.get(r, 4 + j, 0), img.get(r, 4 - 2 - j, 0));
            }
        }
        // interior untouched
        for r in 0..5 {
            for c in 0..4 {
                assert_eq!(padded.get(r, c, 0), img.get(r, c, 0));
            }
        }
    }

    #[test]
    fn reflect_pad_rejects_oversized_pad() {
        let img = Image::zeros(3, 3, 1);
        assert!(img.reflect_pad(6, 3).is_err()); // 6 > 2*3-1
        assert!(img.reflect_pad(5, 5).is_ok());
    }

    #[test]
    fn crop_undoes_pad() {
        let mut img = Image::zeros(5, 4, 3);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i % 97) as f32 / 97.0;
        }
        let padded = img.reflect_pad(8, 7).unwrap();
        assert_eq!(padded.crop(5, 4).unwrap(), img);
    }
}
