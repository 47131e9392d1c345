//! Grid types shared by every stage: intensity images, anomaly heatmaps and
//! binary masks. All grids are row-major.

use crate::error::{Error, Result};

/// A single-channel image. Clean inputs live in `[0, 1]`; noised latents are
/// unconstrained reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "zero-sized grid {height}x{width}"
            )));
        }
        if height * width != data.len() {
            return Err(Error::InvalidImage(format!(
                "{height}x{width} grid needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidImage(format!("non-finite value at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub(crate) fn from_vec_unchecked(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(height * width, data.len());
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn ensure_same_shape(&self, other: &Image) -> Result<()> {
        check_shapes(self.shape(), other.shape())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_vec_unchecked(self.height, self.width, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination; shapes must match.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Result<Image> {
        self.ensure_same_shape(other)?;
        Ok(Image::from_vec_unchecked(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Rounds every value through `f32`, so the image survives the 32-bit
    /// on-disk container bit-exactly.
    pub fn quantize_f32(&self) -> Image {
        self.map(|v| v as f32 as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn check_shapes(left: (usize, usize), right: (usize, usize)) -> Result<()> {
    if left != right {
        return Err(Error::ShapeMismatch { left, right });
    }
    Ok(())
}

/// Per-pixel anomaly scores, always finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap(Image);

impl Heatmap {
    pub fn new(image: Image) -> Result<Self> {
        if let Some(i) = image.data().iter().position(|&v| v < 0.0) {
            return Err(Error::InvalidImage(format!(
                "heatmap value {} at index {i} is negative",
                image.data()[i]
            )));
        }
        Ok(Self(image))
    }

    /// Builds a heatmap from raw scores, replacing negatives with zero.
    pub fn from_scores(height: usize, width: usize, scores: Vec<f64>) -> Result<Self> {
        let scores = scores.into_iter().map(|v| v.max(0.0)).collect();
        Ok(Self(Image::new(height, width, scores)?))
    }

    pub(crate) fn from_image_unchecked(image: Image) -> Self {
        debug_assert!(image.data().iter().all(|&v| v >= 0.0));
        Self(image)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self(Image::zeros(height, width))
    }

    pub fn as_image(&self) -> &Image {
        &self.0
    }

    pub fn into_image(self) -> Image {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn mean(&self) -> f64 {
        self.0.mean()
    }

    /// Elementwise product of two heatmaps.
    pub fn product(&self, other: &Heatmap) -> Result<Heatmap> {
        Ok(Heatmap(self.0.zip_map(&other.0, |a, b| a * b)?))
    }
}

/// A {0,1} mask on the image grid; 1 marks an anomaly (or a false positive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height * width != data.len() || height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!(
                "{height}x{width} mask with {} values",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::InvalidImage(format!(
                "mask value {} at index {i} is not binary",
                data[i]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![1; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c) as u8);
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col] != 0
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, on: bool) {
        self.data[row * self.width + col] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape() == other.shape()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec_unchecked(
            self.height,
            self.width,
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }
}
