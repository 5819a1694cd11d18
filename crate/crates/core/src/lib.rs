//! Multiple small-target detection in single infrared frames using a
//! hierarchical maximal entropy random walk (HMERW).
//!
//! The detector builds a per-pixel graph whose edge weights reward regional
//! compactness and contrast consistency (the RCCC weights), decomposes the
//! symmetrized graph into its top `K` rank-one sub-graphs, sums the maximal
//! entropy random walk stationary distributions of those sub-graphs and fuses
//! the result with the out-degree map of the asymmetric weights. Targets are
//! whatever exceeds `mean + lambda * std` of the fused map.
//!
//! Stages, in pipeline order:
//!
//! - [`imgproc`] – grayscale ingestion and the 2×2 mean prefilter.
//! - [`rccc`] – ring geometry, the RCCC weight matrix, its symmetrization and
//!   the coefficient vector.
//! - [`spectral`] – thick-restart Lanczos eigensolver plus MERW / HMERW
//!   stationary distributions.
//! - [`pipeline`] – fusion, adaptive threshold and connected-component
//!   detection.
//! - [`metrics`] – LCG, BSF, ground-truth matching and precision/recall sweeps.
//! - [`synthgen`] – swiss-roll point clouds, kNN graphs and synthetic scenes.
//! - [`io`] – PGM/PNG readers and the exported file formats.

pub mod error;
pub mod imgproc;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod rccc;
pub mod sparse;
pub mod spectral;
pub mod synthgen;

mod stats;

pub use error::{Error, Result};
pub use imgproc::{mean_filter_2x2, GrayImage, Raster};
pub use metrics::{GroundTruth, MetricsReport, PrCurve, PrPoint};
pub use pipeline::{detect, DetectionOutput, DetectionSet, FusionMap, PipelineParams};
pub use rccc::{CoefficientVector, PatchConfig};
pub use sparse::SparseWeights;
pub use stats::percentile;
pub use spectral::{EigenSolver, SpectralBasis, StationaryVector};
