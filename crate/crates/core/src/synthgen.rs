//! Synthetic data: swiss-roll point clouds with off-manifold anomalies,
//! kNN graphs over them, and infrared-like scenes with exact ground truth.

use std::f64::consts::PI;
use std::num::NonZero;

use kiddo::immutable::float::kdtree::ImmutableKdTree;
use kiddo::SquaredEuclidean;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;
use crate::metrics::{GroundTruth, Target};
use crate::sparse::SparseWeights;
use crate::stats::percentile;

type Tree = ImmutableKdTree<f64, u64, 3, 32>;

/// Height range of the roll.
const ROLL_WIDTH: f64 = 21.0;

/// Anomaly anchors `(t, h)` for A, B and C. All three sit on the outermost
/// turn, where the outward normal points into empty space.
const ANCHORS: [(f64, f64); 3] = [(3.0 * PI, 10.5), (2.75 * PI, 4.0), (3.25 * PI, 17.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub anomaly_indices: Vec<usize>,
    /// Median nearest-neighbour distance among the manifold points.
    pub spacing: f64,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_anomaly(&self, i: usize) -> bool {
        self.anomaly_indices.contains(&i)
    }

    /// CSV `x,y,z,is_anomaly`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,is_anomaly\n");
        for (i, p) in self.points.iter().enumerate() {
            out.push_str(&format!("{},{},{},{}\n", p[0], p[1], p[2], u8::from(self.is_anomaly(i))));
        }
        out
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn roll_point(t: f64, h: f64) -> [f64; 3] {
    [t * t.cos(), h, t * t.sin()]
}

/// Unit outward normal of the roll at parameter `t` (it does not depend on `h`).
fn outward_normal(t: f64) -> [f64; 3] {
    let dx = t.cos() - t * t.sin();
    let dz = t.sin() + t * t.cos();
    let len = dx.hypot(dz);
    [dz / len, 0.0, -dx / len]
}

fn nearest_distance(tree: &Tree, q: &[f64; 3]) -> f64 {
    tree.nearest_one::<SquaredEuclidean>(q).distance.sqrt()
}

/// Pushes an anchor outward until its nearest manifold node sits `gap` away.
fn place_anomaly(tree: &Tree, t: f64, h: f64, gap: f64) -> Result<[f64; 3]> {
    let base = roll_point(t, h);
    let normal = outward_normal(t);
    let at = |s: f64| [base[0] + s * normal[0], base[1], base[2] + s * normal[2]];
    let (mut lo, mut hi) = (0.0, gap);
    let mut grown = 0;
    while nearest_distance(tree, &at(hi)) < gap {
        lo = hi;
        hi *= 2.0;
        grown += 1;
        if grown > 8 {
            return Err(Error::InfeasibleGap(format!(
                "no offset along the normal at t = {t:.3} reaches gap {gap}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if nearest_distance(tree, &at(mid)) < gap {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-4 * gap {
            break;
        }
    }
    let point = at(hi);
    let achieved = nearest_distance(tree, &point);
    if (achieved - gap).abs() > 0.01 * gap {
        return Err(Error::InfeasibleGap(format!(
            "anomaly at t = {t:.3} settles at distance {achieved}, wanted {gap}"
        )));
    }
    Ok(point)
}

/// Median nearest-neighbour distance of a point set.
pub fn median_spacing(points: &[[f64; 3]]) -> f64 {
    let tree = Tree::new_from_slice(points);
    let two = NonZero::new(2).expect("nonzero");
    let d: Vec<f64> = points
        .par_iter()
        .map(|p| {
            tree.nearest_n::<SquaredEuclidean>(p, two)
                .last()
                .map_or(0.0, |nn| nn.distance.sqrt())
        })
        .collect();
    percentile(&d, 50.0)
}

/// `n` roll points plus anomalies A, B, C (appended, in that order) whose
/// nearest-node distances equal `gaps` times the median spacing.
pub fn swiss_roll(n: usize, gaps: [f64; 3], seed: u64) -> Result<PointCloud> {
    if n < 100 {
        return Err(Error::InvalidParameter(format!("swiss roll needs at least 100 nodes, got {n}")));
    }
    let [a, b, c] = gaps;
    if !(a > b && b == c && b > 0.0 && a.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gaps must satisfy A > B = C > 0, got {gaps:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points: Vec<[f64; 3]> = (0..n)
        .map(|_| {
            let t = rng.random_range(1.5 * PI..4.5 * PI);
            let h = rng.random_range(0.0..ROLL_WIDTH);
            roll_point(t, h)
        })
        .collect();
    let spacing = median_spacing(&points);
    let tree = Tree::new_from_slice(&points);
    for ((t, h), g) in ANCHORS.into_iter().zip(gaps) {
        points.push(place_anomaly(&tree, t, h, g * spacing)?);
    }
    Ok(PointCloud {
        points,
        anomaly_indices: vec![n, n + 1, n + 2],
        spacing,
    })
}

/// Edge weighting for kNN graphs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Weighting {
    /// Squared Euclidean distance.
    Euclidean,
    /// `exp(alpha * d²)`.
    Gaussian { alpha: f64 },
}

impl Weighting {
    fn apply(self, d2: f64) -> f64 {
        match self {
            Self::Euclidean => d2,
            Self::Gaussian { alpha } => (alpha * d2).exp(),
        }
    }
}

/// The `k` nearest other points of each point, ties broken by index.
pub fn knn_indices(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
    let tree = Tree::new_from_slice(points);
    let want = NonZero::new(k + 1).expect("k + 1 > 0");
    points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let reach = tree
                .nearest_n::<SquaredEuclidean>(p, want)
                .last()
                .map_or(0.0, |nn| nn.distance);
            let mut found: Vec<(f64, usize)> = tree
                .within_unsorted::<SquaredEuclidean>(p, reach * (1.0 + 1e-12))
                .into_iter()
                .map(|nn| nn.item as usize)
                .filter(|&j| j != i)
                .map(|j| (dist2(p, &points[j]), j))
                .collect();
            found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            found.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Union-symmetrized kNN graph.
pub fn knn_graph(cloud: &PointCloud, k: usize, weighting: Weighting) -> Result<SparseWeights> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(Error::InvalidParameter(format!("k = {k} must lie in 1..{n}")));
    }
    let neighbours = knn_indices(&cloud.points, k);
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, list) in neighbours.iter().enumerate() {
        for &j in list {
            rows[i].push(j);
            rows[j].push(i);
        }
    }
    let adjacency = rows
        .into_iter()
        .enumerate()
        .map(|(i, mut js)| {
            js.sort_unstable();
            js.dedup();
            js.into_iter()
                .map(|j| (j, weighting.apply(dist2(&cloud.points[i], &cloud.points[j]))))
                .collect()
        })
        .collect();
    Ok(SparseWeights::from_rows(n, adjacency, true))
}

/// Squared intensity differences between 8-neighbours. Zero weights are
/// not stored.
pub fn lattice_weights(img: &GrayImage) -> SparseWeights {
    let (rows, cols) = (img.rows(), img.cols());
    let adjacency = (0..rows * cols)
        .map(|p| {
            let (r, c) = (p / cols, p % cols);
            let mut out = Vec::with_capacity(8);
            for nr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    let w = (img.get(r, c) - img.get(nr, nc)).powi(2);
                    if (nr, nc) != (r, c) && w > 0.0 {
                        out.push((nr * cols + nc, w));
                    }
                }
            }
            out
        })
        .collect();
    SparseWeights::from_rows(rows * cols, adjacency, true)
}

/// Half-plane step: pixels with `(r - row) cos θ + (c - col) sin θ > 0`
/// gain `step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterEdge {
    pub row: f64,
    pub col: f64,
    pub angle_deg: f64,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub base: f64,
    /// Linear ramp amplitude across the rows and across the columns.
    #[serde(default)]
    pub gradient: [f64; 2],
    #[serde(default)]
    pub edges: Vec<ClutterEdge>,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            base: 80.0,
            gradient: [0.0, 0.0],
            edges: Vec::new(),
        }
    }
}

/// Isotropic Gaussian bump centred at a sub-pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub row: f64,
    pub col: f64,
    pub amplitude: f64,
    pub sigma: f64,
}

impl TargetSpec {
    fn bump(&self, r: usize, c: usize) -> f64 {
        let d2 = (r as f64 - self.row).powi(2) + (c as f64 - self.col).powi(2);
        self.amplitude * (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// Pixel nearest the true centre (half-up rounding).
    pub fn center_pixel(&self) -> (usize, usize) {
        ((self.row + 0.5).floor() as usize, (self.col + 0.5).floor() as usize)
    }
}

/// Single-pixel high-brightness spikes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pnhb {
    pub count: usize,
    /// Spike amplitudes are drawn uniformly from this range.
    pub amplitude: [f64; 2],
}

impl Default for Pnhb {
    fn default() -> Self {
        Self {
            count: 0,
            amplitude: [0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub rows: usize,
    pub cols: usize,
    #[serde(default)]
    pub background: Background,
    #[serde(default)]
    pub targets: Vec<TargetSpec>,
    #[serde(default)]
    pub pnhb: Pnhb,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Fraction of pixels forced to 0 or 255 (dead and hot pixels).
    #[serde(default)]
    pub pepper_fraction: f64,
    /// Targets closer than `2 * separation_radius` (Chebyshev) are rejected,
    /// and spikes keep at least that far from every target.
    #[serde(default = "default_separation")]
    pub separation_radius: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_separation() -> usize {
    5
}

/// Fraction of the amplitude a pixel must exceed to join a target mask.
const MASK_LEVEL: f64 = 0.1;

fn scene_error(msg: impl Into<String>) -> Error {
    Error::Scene(msg.into())
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(scene_error("scene dimensions must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(scene_error("noise sigma must be finite and nonnegative"));
        }
        if !(0.0..=1.0).contains(&self.pepper_fraction) {
            return Err(scene_error("pepper fraction must lie in [0, 1]"));
        }
        let [lo, hi] = self.pnhb.amplitude;
        if self.pnhb.count > 0 && !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(scene_error("spike amplitude range must be ordered and nonnegative"));
        }
        for (i, t) in self.targets.iter().enumerate() {
            if !(t.row >= 0.0 && t.col >= 0.0 && t.row <= (self.rows - 1) as f64 && t.col <= (self.cols - 1) as f64) {
                return Err(scene_error(format!("target {i} centre lies outside the image")));
            }
            if !(t.sigma >= 0.5 && t.amplitude > 0.0 && t.amplitude.is_finite()) {
                return Err(scene_error(format!("target {i} needs sigma >= 0.5 and positive amplitude")));
            }
        }
        let limit = 2 * self.separation_radius as i64;
        for (i, a) in self.targets.iter().enumerate() {
            for (j, b) in self.targets.iter().enumerate().skip(i + 1) {
                let (ar, ac) = a.center_pixel();
                let (br, bc) = b.center_pixel();
                let d = (ar as i64 - br as i64).abs().max((ac as i64 - bc as i64).abs());
                if d <= limit {
                    return Err(scene_error(format!(
                        "targets {i} and {j} are {d} pixels apart, closer than {}",
                        limit + 1
                    )));
                }
            }
        }
        Ok(())
    }

    fn mask(&self, t: &TargetSpec) -> Result<Vec<[usize; 2]>> {
        let reach = (t.sigma * (2.0 * (1.0 / MASK_LEVEL).ln()).sqrt()).ceil() as i64 + 1;
        let (cr, cc) = (t.row.round() as i64, t.col.round() as i64);
        let mut mask = Vec::new();
        for r in (cr - reach).max(0)..=(cr + reach).min(self.rows as i64 - 1) {
            for c in (cc - reach).max(0)..=(cc + reach).min(self.cols as i64 - 1) {
                if t.bump(r as usize, c as usize) > MASK_LEVEL * t.amplitude {
                    mask.push([r as usize, c as usize]);
                }
            }
        }
        let span = |k: usize| {
            let lo = mask.iter().map(|p| p[k]).min().unwrap_or(0);
            let hi = mask.iter().map(|p| p[k]).max().unwrap_or(0);
            hi - lo + 1
        };
        let (h, w) = (span(0), span(1));
        if mask.len() > 80 || h.max(w) > 9 || h.min(w) > 7 {
            return Err(scene_error(format!(
                "target footprint {h}x{w} ({} pixels) exceeds the small-target limit",
                mask.len()
            )));
        }
        Ok(mask)
    }
}

/// Renders a scene and its ground truth as an 8-bit frame (integer gray
/// levels). Pure function of the spec.
pub fn render_scene(spec: &SceneSpec) -> Result<(GrayImage, GroundTruth)> {
    spec.validate()?;
    let (rows, cols) = (spec.rows, spec.cols);
    let bg = &spec.background;
    let ramp = |n: usize, i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut data = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut v = bg.base + bg.gradient[0] * ramp(rows, r) + bg.gradient[1] * ramp(cols, c);
            for e in &bg.edges {
                let a = e.angle_deg.to_radians();
                if (r as f64 - e.row) * a.cos() + (c as f64 - e.col) * a.sin() > 0.0 {
                    v += e.step;
                }
            }
            for t in &spec.targets {
                v += t.bump(r, c);
            }
            data[r * cols + c] = v;
        }
    }

    let mut truth = GroundTruth::default();
    for t in &spec.targets {
        let (row, col) = t.center_pixel();
        truth.targets.push(Target {
            row,
            col,
            mask: Some(spec.mask(t)?),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let keep_out = spec.separation_radius as i64;
    let mut spikes = Vec::with_capacity(spec.pnhb.count);
    let mut attempts = 0;
    while spikes.len() < spec.pnhb.count {
        attempts += 1;
        if attempts > 100 * (spec.pnhb.count + 10) {
            return Err(scene_error("no room left for the requested spikes"));
        }
        let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
        let near_target = truth.targets.iter().any(|t| {
            (r as i64 - t.row as i64).abs().max((c as i64 - t.col as i64).abs()) <= keep_out
        });
        if near_target || spikes.contains(&(r, c)) {
            continue;
        }
        let [lo, hi] = spec.pnhb.amplitude;
        let amp = if hi > lo { rng.random_range(lo..hi) } else { lo };
        spikes.push((r, c));
        data[r * cols + c] += amp;
    }

    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| scene_error(e.to_string()))?;
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    if spec.pepper_fraction > 0.0 {
        for v in data.iter_mut() {
            if rng.random::<f64>() < spec.pepper_fraction {
                *v = if rng.random::<bool>() { 255.0 } else { 0.0 };
            }
        }
    }
    data.iter_mut().for_each(|v| *v = (*v + 0.5).floor().clamp(0.0, 255.0));
    Ok((GrayImage::new(rows, cols, data)?, truth))
}

/// Named scene families used by the evaluation harness.
pub mod presets {
    use super::*;

    /// Dim-target scene: three Gaussian targets at full, 70 % and 50 % of
    /// the brightest amplitude over a ramped background. Target order in the
    /// ground truth is brightest first, so index 2 is the dim target.
    pub fn multi_target(seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a26_e7a1);
        let (rows, cols) = (96, 96);
        let amplitudes = [60.0, 42.0, 30.0];
        let margin = 12.0;
        let mut targets: Vec<TargetSpec> = Vec::new();
        while targets.len() < amplitudes.len() {
            let row = rng.random_range(margin..rows as f64 - 1.0 - margin);
            let col = rng.random_range(margin..cols as f64 - 1.0 - margin);
            let far = targets
                .iter()
                .all(|t| (t.row - row).abs().max((t.col - col).abs()) >= 16.0);
            if far {
                targets.push(TargetSpec {
                    row,
                    col,
                    amplitude: amplitudes[targets.len()],
                    sigma: 1.2,
                });
            }
        }
        SceneSpec {
            rows,
            cols,
            background: Background {
                base: 80.0,
                gradient: [10.0, 20.0],
                edges: Vec::new(),
            },
            targets,
            pnhb: Pnhb::default(),
            noise_sigma: 2.0,
            pepper_fraction: 0.0,
            separation_radius: 5,
            seed,
        }
    }

    /// Target-free scene with single-pixel spikes and two step edges.
    pub fn interference(seed: u64) -> SceneSpec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1f7e_55c0);
        let (rows, cols) = (96, 96);
        let edges = (0..2)
            .map(|_| ClutterEdge {
                row: rng.random_range(20.0..76.0),
                col: rng.random_range(20.0..76.0),
                angle_deg: rng.random_range(0.0..180.0),
                step: rng.random_range(20.0..40.0),
            })
            .collect();
        SceneSpec {
            rows,
            cols,
            background: Background {
                base: 70.0,
                gradient: [10.0, 15.0],
                edges,
            },
            targets: Vec::new(),
            pnhb: Pnhb {
                count: 15,
                amplitude: [60.0, 120.0],
            },
            noise_sigma: 2.0,
            pepper_fraction: 0.0,
            separation_radius: 5,
            seed,
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Option<SceneSpec> {
        match name {
            "multi-target" => Some(multi_target(seed)),
            "interference" => Some(interference(seed)),
            _ => None,
        }
    }
}

/// Percentile rank of each anomaly's value among the non-anomaly values.
pub fn anomaly_ranks(values: &[f64], anomalies: &[usize]) -> Vec<f64> {
    let background: Vec<f64> = values
        .iter()
        .enumerate()
        .filter(|(i, _)| !anomalies.contains(i))
        .map(|(_, &v)| v)
        .collect();
    anomalies
        .iter()
        .map(|&a| background.iter().filter(|&&v| v < values[a]).count() as f64 / background.len() as f64)
        .collect()
}
