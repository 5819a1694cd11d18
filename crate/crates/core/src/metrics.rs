//! Evaluation: local contrast gain, background suppression factor,
//! ground-truth matching and precision/recall sweeps over 8-bit maps.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::Raster;
use crate::pipeline::{extract_detections, DetectionSet, FusionMap};
use crate::stats::std_dev;

const EPS: f64 = 1e-7;

/// Matching radius: a detection hits a target when the Chebyshev distance
/// between its rounded centroid and the target centre is below this.
pub const MATCH_DISTANCE: i64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub row: usize,
    pub col: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub targets: Vec<Target>,
}

impl GroundTruth {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            context: "ground truth".into(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ground truth serializes")
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Checks that centres and masks lie inside a `rows × cols` image and
    /// that every mask contains its centre.
    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        for (i, t) in self.targets.iter().enumerate() {
            if t.row >= rows || t.col >= cols {
                return Err(Error::GroundTruth(format!(
                    "target {i} centre ({}, {}) outside {rows}x{cols}",
                    t.row, t.col
                )));
            }
            if let Some(mask) = &t.mask {
                if mask.iter().any(|&[r, c]| r >= rows || c >= cols) {
                    return Err(Error::GroundTruth(format!("target {i} mask leaves the image")));
                }
                if !mask.contains(&[t.row, t.col]) {
                    return Err(Error::GroundTruth(format!("target {i} mask misses its centre")));
                }
            }
        }
        Ok(())
    }

    /// Union of target regions as a per-pixel flag. Targets without a mask
    /// use the `(2R+1)²` window around the centre, clipped to the image.
    pub fn region(&self, rows: usize, cols: usize, radius: usize) -> Vec<bool> {
        let mut inside = vec![false; rows * cols];
        for t in &self.targets {
            match &t.mask {
                Some(mask) => mask.iter().for_each(|&[r, c]| inside[r * cols + c] = true),
                None => {
                    for r in t.row.saturating_sub(radius)..=(t.row + radius).min(rows - 1) {
                        for c in t.col.saturating_sub(radius)..=(t.col + radius).min(cols - 1) {
                            inside[r * cols + c] = true;
                        }
                    }
                }
            }
        }
        inside
    }
}

fn same_shape(a: &impl Raster, b: &impl Raster) -> Result<()> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} input against {}x{} output",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    Ok(())
}

fn region_means(values: &[f64], inside: &[bool]) -> (f64, f64) {
    let (mut st, mut nt, mut sb, mut nb) = (0.0, 0usize, 0.0, 0usize);
    for (v, &t) in values.iter().zip(inside) {
        if t {
            st += v;
            nt += 1;
        } else {
            sb += v;
            nb += 1;
        }
    }
    (st / nt as f64, sb / nb as f64)
}

/// Local contrast gain of `output` over `input`.
pub fn lcg(input: &impl Raster, output: &impl Raster, gt: &GroundTruth, radius: usize) -> Result<f64> {
    same_shape(input, output)?;
    if gt.is_empty() {
        return Err(Error::GroundTruth("contrast gain needs at least one target".into()));
    }
    gt.validate(input.rows(), input.cols())?;
    let inside = gt.region(input.rows(), input.cols(), radius);
    if inside.iter().all(|&t| t) {
        return Err(Error::GroundTruth("target region leaves no background".into()));
    }
    let (to, bo) = region_means(output.values(), &inside);
    let (ti, bi) = region_means(input.values(), &inside);
    Ok(((to - bo) / (to + bo + EPS)) / ((ti - bi) / (ti + bi) + EPS))
}

/// Background suppression factor `σ(output) / (σ(input) + ε)`.
pub fn bsf(input: &impl Raster, output: &impl Raster) -> Result<f64> {
    same_shape(input, output)?;
    Ok(std_dev(output.values()) / (std_dev(input.values()) + EPS))
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    /// Per target, whether some detection claimed it.
    pub matched: Vec<bool>,
}

/// Greedy one-to-one matching in the order detections are listed
/// (descending peak). Each detection takes the first unmatched target in
/// range.
pub fn match_detections(dets: &DetectionSet, gt: &GroundTruth) -> MatchResult {
    let mut matched = vec![false; gt.len()];
    let mut tp = 0;
    for det in &dets.detections {
        let (r, c) = det.rounded();
        let hit = gt.targets.iter().enumerate().position(|(i, t)| {
            !matched[i] && (r - t.row as i64).abs().max((c - t.col as i64).abs()) < MATCH_DISTANCE
        });
        if let Some(i) = hit {
            matched[i] = true;
            tp += 1;
        }
    }
    MatchResult {
        tp,
        fp: dets.len() - tp,
        matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub threshold: u8,
    /// `None` when nothing was detected at this threshold.
    pub precision: Option<f64>,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub aupr: f64,
    pub positives: usize,
}

impl PrCurve {
    /// `threshold,precision,recall`; undefined precision is left empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall\n");
        for p in &self.points {
            let precision = p.precision.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", p.threshold, precision, p.recall));
        }
        out
    }
}

/// Per-corpus evaluation summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub lcg: f64,
    pub bsf: f64,
    pub curve: PrCurve,
}

/// Trapezoidal area under precision over recall.
///
/// Points without a defined precision are skipped, equal recalls keep the
/// highest precision, and the lowest-recall precision is carried back to
/// recall 0 so a curve that is perfect everywhere integrates to 1.
pub fn aupr(points: &[PrPoint]) -> f64 {
    let mut defined: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.precision.map(|pr| (p.recall, pr)))
        .collect();
    if defined.is_empty() {
        return 0.0;
    }
    defined.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    defined.dedup_by(|later, earlier| later.0 == earlier.0);
    if defined[0].0 > 0.0 {
        defined.insert(0, (0.0, defined[0].1));
    }
    defined
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Min-max normalizes a map to integer gray levels, kept as reals.
pub fn quantize(map: &impl Raster) -> Result<FusionMap> {
    let bytes = crate::io::normalize_to_u8(map.values());
    FusionMap::new(map.rows(), map.cols(), bytes.into_iter().map(f64::from).collect())
}

/// Sweeps the segmentation threshold over `0..=255` on 8-bit maps and
/// accumulates matches over the corpus.
pub fn pr_sweep(maps: &[FusionMap], gts: &[GroundTruth]) -> Result<PrCurve> {
    if maps.len() != gts.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} maps for {} ground truths",
            maps.len(),
            gts.len()
        )));
    }
    for (map, gt) in maps.iter().zip(gts) {
        if map.values().iter().any(|&v| v.fract() != 0.0 || !(0.0..=255.0).contains(&v)) {
            return Err(Error::InvalidParameter("sweep maps must hold integer gray levels".into()));
        }
        gt.validate(map.rows(), map.cols())?;
    }
    let positives: usize = gts.iter().map(GroundTruth::len).sum();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let points: Vec<PrPoint> = (0..=255u8)
        .into_par_iter()
        .map(|t| {
            let (tp, fp) = maps.iter().zip(gts).fold((0, 0), |(tp, fp), (map, gt)| {
                let m = match_detections(&extract_detections(map, f64::from(t)), gt);
                (tp + m.tp, fp + m.fp)
            });
            PrPoint {
                threshold: t,
                precision: (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64),
                recall: tp as f64 / positives as f64,
                tp,
                fp,
            }
        })
        .collect();
    let aupr = aupr(&points);
    Ok(PrCurve {
        points,
        aupr,
        positives,
    })
}
