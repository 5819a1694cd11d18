//! Grayscale images and the 2×2 mean prefilter.

use crate::error::{Error, Result};

/// Read access to a row-major real-valued raster.
///
/// Implemented by [`GrayImage`] and [`crate::FusionMap`] so metrics can treat
/// detector inputs and outputs uniformly.
pub trait Raster {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn values(&self) -> &[f64];

    fn at(&self, row: usize, col: usize) -> f64 {
        self.values()[row * self.cols() + col]
    }
}

/// Dense single-band image. Intensities are 8-bit gray levels stored as reals
/// in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidImage(format!(
                "{rows}x{cols} image needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some((idx, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 255.0)
        {
            return Err(Error::InvalidImage(format!(
                "intensity {v} at index {idx} is outside [0, 255]"
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn constant(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_bytes(rows: usize, cols: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(rows, cols, bytes.iter().map(|&b| f64::from(b)).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn index_of(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row < self.rows && col < self.cols
    }

    /// Multiplies every intensity by `alpha`; fails if the result leaves
    /// `[0, 255]`.
    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Self::new(self.rows, self.cols, self.data.iter().map(|v| v * alpha).collect())
    }

    /// Rounds half-up to integer gray levels.
    pub fn quantized(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v + 0.5).floor().clamp(0.0, 255.0) as u8)
            .collect()
    }
}

impl Raster for GrayImage {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// 2×2 box mean anchored at the top-left pixel.
///
/// `out(i, j)` averages `(i, j)`, `(i, j+1)`, `(i+1, j)`, `(i+1, j+1)`; windows
/// that run past the bottom or right border shrink to the pixels inside the
/// image, so the output keeps the input dimensions.
pub fn mean_filter_2x2(img: &GrayImage) -> GrayImage {
    let (rows, cols) = (img.rows(), img.cols());
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let r1 = (r + 1).min(rows - 1);
        for c in 0..cols {
            let c1 = (c + 1).min(cols - 1);
            let mut sum = img.get(r, c);
            let mut n = 1.0;
            if c1 != c {
                sum += img.get(r, c1);
                n += 1.0;
            }
            if r1 != r {
                sum += img.get(r1, c);
                n += 1.0;
                if c1 != c {
                    sum += img.get(r1, c1);
                    n += 1.0;
                }
            }
            out.push(sum / n);
        }
    }
    GrayImage {
        rows,
        cols,
        data: out,
    }
}
