use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest code of the 16-bit lossless raster format images are persisted in.
pub const PIXEL_LEVELS: f64 = 65535.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl std::fmt::Display for ImageShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

/// Channels-last H×W×C image with real pixel values.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor<S> {
    shape: ImageShape,
    data: Vec<S>,
}

impl<S: Scalar> ImageTensor<S> {
    pub fn new(shape: ImageShape, data: Vec<S>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::Shape(format!(
                "{} pixels supplied for a {} image",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: ImageShape, value: S) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: ImageShape) -> Self {
        Self::filled(shape, S::zero())
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.shape.width + x) * self.shape.channels + c
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> S {
        self.data[self.offset(y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: S) {
        let o = self.offset(y, x, c);
        self.data[o] = v;
    }

    pub fn ensure_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{} vs {}", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn in_unit_range(&self) -> bool {
        self.data
            .iter()
            .all(|&v| v >= S::zero() && v <= S::one())
    }

    pub fn clamp_unit(mut self) -> Self {
        for v in &mut self.data {
            *v = if v.is_nan() {
                S::zero()
            } else {
                v.max(S::zero()).min(S::one())
            };
        }
        self
    }

    /// Snap every pixel to the persisted 16-bit grid so a save/load cycle is exact.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.data {
            *v = dequantize(quantize(*v));
        }
        self
    }

    /// Sum of pixel values in channel `c`.
    pub fn channel_sum(&self, c: usize) -> S {
        self.data
            .iter()
            .skip(c)
            .step_by(self.shape.channels)
            .fold(S::zero(), |a, &b| a + b)
    }

    pub fn cast<T: Scalar>(&self) -> ImageTensor<T> {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

pub(crate) fn quantize<S: Scalar>(v: S) -> u16 {
    let x = v.to_f64_lossy();
    let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
    (x * PIXEL_LEVELS).round() as u16
}

pub(crate) fn dequantize<S: Scalar>(q: u16) -> S {
    S::of(q as f64 / PIXEL_LEVELS)
}
