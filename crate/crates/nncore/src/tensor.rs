//! Channel-major activation volumes for single samples.

use crate::NnError;

/// One sample's activation volume in (channels, height, width) layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Wraps an existing buffer; its length must equal c·h·w.
    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Self, NnError> {
        if data.len() != channels * height * width {
            return Err(NnError::ShapeMismatch(format!(
                "buffer of {} values cannot form a {channels}x{height}x{width} volume",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an input volume from one grayscale plane, replicating it across
    /// `channels` (1 for native grayscale models, 3 for RGB-shaped ones).
    pub fn from_grayscale(
        height: usize,
        width: usize,
        pixels: &[f64],
        channels: usize,
    ) -> Result<Self, NnError> {
        if pixels.len() != height * width {
            return Err(NnError::ShapeMismatch(format!(
                "{} pixels cannot form a {height}x{width} plane",
                pixels.len()
            )));
        }
        let mut data = Vec::with_capacity(channels * pixels.len());
        for _ in 0..channels {
            data.extend_from_slice(pixels);
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.height + y) * self.width + x]
    }

    /// One channel's H×W plane.
    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}
