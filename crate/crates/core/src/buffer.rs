//! Dense image buffers in row-major order.

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Single-channel `f64` image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, other: &Plane) -> Result<()> {
        check_shape(self.width, self.height, other.width, other.height)
    }
}

/// Three-channel `f64` image.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vector3<f64>>,
}

impl ColorImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, Vector3::zeros())
    }

    pub fn filled(width: usize, height: usize, value: Vector3<f64>) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Vector3<f64>) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector3<f64> {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: Vector3<f64>) {
        self.data[y * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p[c]).collect(),
        }
    }

    pub fn same_shape(&self, other: &ColorImage) -> Result<()> {
        check_shape(self.width, self.height, other.width, other.height)
    }

    pub fn clamped(&self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|p| p.map(|c| c.clamp(0.0, 1.0))).collect(),
        }
    }

    /// Round-trips through 8-bit quantization.
    pub fn quantized(&self) -> ColorImage {
        ColorImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() / 255.0))
                .collect(),
        }
    }
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask) -> Result<()> {
        check_shape(self.width, self.height, other.width, other.height)
    }

    pub fn hamming(&self, other: &Mask) -> Result<usize> {
        self.same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).filter(|(a, b)| a != b).count())
    }

    pub fn from_threshold(plane: &Plane, thr: f64) -> Mask {
        Mask {
            width: plane.width,
            height: plane.height,
            data: plane.data.iter().map(|&v| v > thr).collect(),
        }
    }
}

pub(crate) fn check_shape(w0: usize, h0: usize, w1: usize, h1: usize) -> Result<()> {
    if w0 == w1 && h0 == h1 {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{w0}x{h0} vs {w1}x{h1}")))
    }
}
