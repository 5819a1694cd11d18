//! End-to-end detector: prefilter, weights, spectrum, HMERW map, fusion with
//! the coefficient map, adaptive threshold and connected-component targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{mean_filter_2x2, GrayImage, Raster};
use crate::rccc::{build_rccc_weights, coefficient_vector, symmetrize, CoefficientVector, PatchConfig};
use crate::spectral::{hmerw_stationary, EigenSolver, StationaryVector};
use crate::stats::{mean, std_dev};
use crate::synthgen::lattice_weights;

/// Edge weights used to build the pixel graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Ring-wise RCCC weights.
    #[default]
    Rccc,
    /// Squared intensity differences on the 8-neighbour lattice. Ablation
    /// baseline only; the coefficient map becomes the degree divided by 8.
    EuclideanLattice,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub radius: usize,
    /// Number of eigenpairs, and thus sub-graphs, in the HMERW sum.
    pub k: usize,
    /// Threshold multiplier on the fusion-map standard deviation.
    pub lambda: f64,
    pub ring_excludes_center: bool,
    pub scheme: WeightScheme,
    pub solver: EigenSolver,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            radius: 5,
            k: 30,
            lambda: 10.0,
            ring_excludes_center: false,
            scheme: WeightScheme::Rccc,
            solver: EigenSolver::default(),
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        self.patch().validate()?;
        if self.k == 0 {
            return Err(Error::InvalidParameter("K must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    pub fn patch(&self) -> PatchConfig {
        PatchConfig {
            radius: self.radius,
            ring_excludes_center: self.ring_excludes_center,
        }
    }
}

/// Fused saliency map `f = π ⊙ c` reshaped to the image grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionMap {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl FusionMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} map",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter("fusion values must be finite and nonnegative".into()));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl Raster for FusionMap {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Value-weighted centroid row.
    pub row: f64,
    /// Value-weighted centroid column.
    pub col: f64,
    #[serde(rename = "pixels")]
    pub pixel_count: usize,
    #[serde(rename = "peak")]
    pub peak_value: f64,
}

impl Detection {
    /// Centroid rounded half-up to the nearest pixel.
    pub fn rounded(&self) -> (i64, i64) {
        ((self.row + 0.5).floor() as i64, (self.col + 0.5).floor() as i64)
    }
}

/// Detections sorted by descending peak value.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionSet {
    pub detections: Vec<Detection>,
    pub threshold: f64,
}

impl DetectionSet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }
}

/// Everything `detect` computes, intermediates included.
#[derive(Debug, Clone)]
pub struct DetectionOutput {
    pub filtered: GrayImage,
    pub hmerw: StationaryVector,
    pub coefficient: CoefficientVector,
    pub eigenvalues: Vec<f64>,
    pub fusion: FusionMap,
    pub detections: DetectionSet,
}

pub fn fuse(pi: &StationaryVector, c: &CoefficientVector, rows: usize, cols: usize) -> Result<FusionMap> {
    if pi.len() != rows * cols || c.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "distribution length {} and coefficient length {} for a {rows}x{cols} image",
            pi.len(),
            c.len()
        )));
    }
    let values = pi.values().iter().zip(c.values()).map(|(p, q)| p * q).collect();
    FusionMap::new(rows, cols, values)
}

/// `T = mean + lambda * std` with the population standard deviation.
pub fn adaptive_threshold(f: &impl Raster, lambda: f64) -> f64 {
    mean(f.values()) + lambda * std_dev(f.values())
}

/// 8-connected components of the pixels strictly above `threshold`,
/// each as a list of flat indices in scan order. Components are listed in
/// the order of their first pixel.
pub fn components_above(f: &impl Raster, threshold: f64) -> Vec<Vec<usize>> {
    let (rows, cols) = (f.rows(), f.cols());
    let values = f.values();
    let mut seen = vec![false; values.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..values.len() {
        if seen[start] || values[start] <= threshold {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut component = Vec::new();
        while let Some(p) = stack.pop() {
            component.push(p);
            let (r, c) = (p / cols, p % cols);
            for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    let q = nr * cols + nc;
                    if !seen[q] && values[q] > threshold {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        component.sort_unstable();
        out.push(component);
    }
    out
}

/// Groups above-threshold pixels into detections.
pub fn extract_detections(f: &impl Raster, threshold: f64) -> DetectionSet {
    let cols = f.cols();
    let values = f.values();
    let mut detections: Vec<Detection> = components_above(f, threshold)
        .into_iter()
        .map(|pixels| {
            let mass: f64 = pixels.iter().map(|&p| values[p]).sum();
            let (row, col) = if mass > 0.0 {
                pixels.iter().fold((0.0, 0.0), |(r, c), &p| {
                    let w = values[p] / mass;
                    (r + w * (p / cols) as f64, c + w * (p % cols) as f64)
                })
            } else {
                let n = pixels.len() as f64;
                pixels.iter().fold((0.0, 0.0), |(r, c), &p| {
                    (r + (p / cols) as f64 / n, c + (p % cols) as f64 / n)
                })
            };
            let peak_value = pixels.iter().map(|&p| values[p]).fold(f64::NEG_INFINITY, f64::max);
            Detection {
                row,
                col,
                pixel_count: pixels.len(),
                peak_value,
            }
        })
        .collect();
    detections.sort_by(|a, b| b.peak_value.total_cmp(&a.peak_value));
    DetectionSet { detections, threshold }
}

/// Runs the full detector on one frame.
pub fn detect(img: &GrayImage, params: &PipelineParams) -> Result<DetectionOutput> {
    params.validate()?;
    let (rows, cols) = (img.rows(), img.cols());
    let side = 2 * params.radius + 1;
    if rows < side || cols < side {
        return Err(Error::InvalidImage(format!(
            "{rows}x{cols} image is smaller than the {side}x{side} patch"
        )));
    }
    let n = rows * cols;
    let filtered = mean_filter_2x2(img);
    let (weights, coefficient) = match params.scheme {
        WeightScheme::Rccc => {
            let w = build_rccc_weights(&filtered, &params.patch())?;
            let c = coefficient_vector(&w, &params.patch())?;
            (symmetrize(&w), c)
        }
        WeightScheme::EuclideanLattice => {
            let w = lattice_weights(&filtered);
            let c = CoefficientVector::new(w.row_sums().into_iter().map(|s| s / 8.0).collect())?;
            (w, c)
        }
    };
    let basis = params.solver.solve(&weights, params.k.min(n))?;
    let hmerw = match hmerw_stationary(&basis, basis.k()) {
        Ok(pi) => pi,
        Err(Error::SpectrallyEmpty) => StationaryVector::new(vec![0.0; n])?,
        Err(e) => return Err(e),
    };
    let fusion = fuse(&hmerw, &coefficient, rows, cols)?;
    let threshold = adaptive_threshold(&fusion, params.lambda);
    let detections = extract_detections(&fusion, threshold);
    Ok(DetectionOutput {
        filtered,
        hmerw,
        coefficient,
        eigenvalues: basis.eigenvalues().to_vec(),
        fusion,
        detections,
    })
}
