//! Minimal trainable-network substrate: tensors, conv layers with manual
//! backprop, an adaptive-moment optimizer, checkpoints, and a
//! finite-difference gradient checker.
//!
//! The whole stack is generic over [`Scalar`] so the training path runs in
//! `f32` while gradient checks run the identical code in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod net;

pub use adam::AdamState;
pub use gradcheck::{fd_check, FdReport};
pub use net::{Arch, ModelState, Net, ParamGroup};

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Floating-point element type for network math. Implemented for `f32`
/// (training) and `f64` (gradient checking).
pub trait Scalar:
    Copy
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    /// Smallest positive normal value; lower clamp for open-interval outputs.
    const MIN_POS: Self;
    /// Largest representable value strictly below one.
    const BELOW_ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
    fn powi(self, n: i32) -> Self;
}

macro_rules! impl_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const MIN_POS: Self = <$t>::MIN_POSITIVE;
            const BELOW_ONE: Self = 1.0 - <$t>::EPSILON / 2.0;
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                self.exp()
            }
            #[inline]
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            #[inline]
            fn abs(self) -> Self {
                self.abs()
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
        }
    };
}

impl_scalar!(f32);
impl_scalar!(f64);

/// H×W×C tensor, row-major and channel-interleaved like [`Image`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "tensor data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Tensor { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Tensor {
            height,
            width,
            channels,
            data: vec![T::ZERO; height * width * channels],
        }
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        self.data[(row * self.width + col) * self.channels + ch] = value;
    }

    pub fn same_shape(&self, other: &Tensor<T>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn from_image(img: &Image) -> Self {
        Tensor {
            height: img.height,
            width: img.width,
            channels: img.channels,
            data: img.data.iter().map(|&v| T::from_f64(v as f64)).collect(),
        }
    }

    pub fn to_image(&self) -> Result<Image> {
        Image::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| v.to_f64() as f32).collect(),
        )
    }

    /// Stack `self` and `other` along the channel axis.
    pub fn concat_channels(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Shape(format!(
                "concat {}x{} with {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        let c_out = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.height * self.width * c_out);
        for px in 0..self.height * self.width {
            data.extend_from_slice(&self.data[px * self.channels..(px + 1) * self.channels]);
            data.extend_from_slice(&other.data[px * other.channels..(px + 1) * other.channels]);
        }
        Ok(Tensor {
            height: self.height,
            width: self.width,
            channels: c_out,
            data,
        })
    }
}
