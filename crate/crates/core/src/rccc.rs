//! Regional-compactness / contrast-consistency (RCCC) weights.
//!
//! Every pixel `v_i` looks at the Chebyshev rings `r = 2..=R` around itself.
//! On each ring it picks the pixel whose intensity is closest to the mean of
//! its own 3×3 neighbourhood and links to it with weight
//!
//! ```text
//! |mean(P1) - I(v_j)| * mean(Pr \ {v_j}) / mean(Pr)
//! ```
//!
//! Small targets decay smoothly in every direction, so every ring yields a
//! large difference; edges always offer a ring pixel of similar intensity
//! along the edge direction, and single hot pixels are averaged away in the
//! 3×3 mean.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgproc::GrayImage;
use crate::sparse::SparseWeights;

/// Relative tolerance under which two intensity differences count as equal.
const REL_TIE: f64 = 1e-12;

/// Patch geometry for the RCCC weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    /// Patch radius `R`; the patch is `(2R+1) × (2R+1)` pixels.
    pub radius: usize,
    /// Use the strict 8-pixel ring for the reference mean instead of the
    /// 3×3 block including the centre.
    pub ring_excludes_center: bool,
}

impl PatchConfig {
    pub fn new(radius: usize) -> Result<Self> {
        let cfg = Self {
            radius,
            ring_excludes_center: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius < 2 {
            return Err(Error::InvalidParameter(format!(
                "patch radius must be at least 2, got {}",
                self.radius
            )));
        }
        Ok(())
    }
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            radius: 5,
            ring_excludes_center: false,
        }
    }
}

/// Per-pixel coefficient: the out-degree of the asymmetric RCCC matrix
/// divided by `R - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector(Vec<f64>);

impl CoefficientVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "coefficients must be finite and nonnegative".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Offsets at Chebyshev distance exactly `ring`, in row-major order.
fn ring_offsets(ring: usize) -> Vec<(isize, isize)> {
    let r = ring as isize;
    let mut out = Vec::with_capacity(if ring == 0 { 1 } else { 8 * ring });
    for du in -r..=r {
        for dv in -r..=r {
            if du.abs().max(dv.abs()) == r {
                out.push((du, dv));
            }
        }
    }
    out
}

#[inline]
fn offset(center: (usize, usize), d: (isize, isize), rows: usize, cols: usize) -> Option<(usize, usize)> {
    let u = center.0 as isize + d.0;
    let v = center.1 as isize + d.1;
    (u >= 0 && v >= 0 && (u as usize) < rows && (v as usize) < cols).then_some((u as usize, v as usize))
}

fn check_inside(center: (usize, usize), rows: usize, cols: usize) -> Result<()> {
    if center.0 >= rows || center.1 >= cols {
        return Err(Error::OutOfBounds {
            row: center.0,
            col: center.1,
            rows,
            cols,
        });
    }
    Ok(())
}

/// Pixels at Chebyshev distance exactly `ring` from `center`, clipped to the
/// image and listed in row-major order. Ring 0 is the centre itself.
pub fn ring_pixels(center: (usize, usize), ring: usize, rows: usize, cols: usize) -> Result<Vec<(usize, usize)>> {
    check_inside(center, rows, cols)?;
    Ok(ring_offsets(ring)
        .into_iter()
        .filter_map(|d| offset(center, d, rows, cols))
        .collect())
}

/// Precomputed ring offsets for `r = 0..=R`.
struct Rings {
    offsets: Vec<Vec<(isize, isize)>>,
}

impl Rings {
    fn new(radius: usize) -> Self {
        Self {
            offsets: (0..=radius).map(ring_offsets).collect(),
        }
    }

    /// Reference intensity `Imean(P1)` of a node.
    fn inner_mean(&self, img: &GrayImage, center: (usize, usize), excludes_center: bool) -> f64 {
        let (rows, cols) = (img.rows(), img.cols());
        let mut sum = 0.0;
        let mut n = 0usize;
        if !excludes_center {
            sum += img.get(center.0, center.1);
            n += 1;
        }
        for &d in &self.offsets[1] {
            if let Some((u, v)) = offset(center, d, rows, cols) {
                sum += img.get(u, v);
                n += 1;
            }
        }
        if n == 0 {
            // 1×1 image with the strict ring reading
            return img.get(center.0, center.1);
        }
        sum / n as f64
    }

    /// First ring pixel (row-major) minimizing `|reference - I|`, together
    /// with that difference, the ring's intensity sum and clipped size.
    /// Differences within `REL_TIE` of the intensities are treated as
    /// equal, so rescaled images resolve ties and zeros the same way.
    fn most_similar(
        &self,
        img: &GrayImage,
        center: (usize, usize),
        ring: usize,
        reference: f64,
    ) -> Option<((usize, usize), f64, f64, usize)> {
        let (rows, cols) = (img.rows(), img.cols());
        let mut best: Option<((usize, usize), f64)> = None;
        let mut sum = 0.0;
        let mut count = 0usize;
        for &d in &self.offsets[ring] {
            let Some(p) = offset(center, d, rows, cols) else {
                continue;
            };
            let value = img.get(p.0, p.1);
            sum += value;
            count += 1;
            let slack = REL_TIE * reference.abs().max(value.abs());
            let diff = match (reference - value).abs() {
                d if d <= slack => 0.0,
                d => d,
            };
            if best.is_none_or(|(_, b)| diff < b - slack) {
                best = Some((p, diff));
            }
        }
        best.map(|(p, diff)| (p, diff, sum, count))
    }
}

fn check_ring(ring: usize, cfg: &PatchConfig) -> Result<()> {
    cfg.validate()?;
    if ring < 2 || ring > cfg.radius {
        return Err(Error::InvalidParameter(format!(
            "ring index {ring} outside 2..={}",
            cfg.radius
        )));
    }
    Ok(())
}

/// Ring-`ring` pixel whose intensity is closest to the reference mean of
/// `center`. Ties go to the first pixel in row-major order.
pub fn simi(img: &GrayImage, center: (usize, usize), ring: usize, cfg: &PatchConfig) -> Result<(usize, usize)> {
    check_ring(ring, cfg)?;
    check_inside(center, img.rows(), img.cols())?;
    let rings = Rings::new(cfg.radius);
    let reference = rings.inner_mean(img, center, cfg.ring_excludes_center);
    rings
        .most_similar(img, center, ring, reference)
        .map(|(p, ..)| p)
        .ok_or(Error::EmptyRing {
            row: center.0,
            col: center.1,
            ring,
        })
}

fn ring_weight(diff: f64, picked: f64, ring_sum: f64, ring_count: usize) -> f64 {
    let ring_mean = ring_sum / ring_count as f64;
    let ratio = if ring_mean == 0.0 || ring_count < 2 {
        1.0
    } else {
        ((ring_sum - picked) / (ring_count - 1) as f64) / ring_mean
    };
    diff * ratio
}

/// Asymmetric RCCC matrix: at most `R - 1` nonzeros per row, one per ring.
/// Zero weights are not stored.
pub fn build_rccc_weights(img: &GrayImage, cfg: &PatchConfig) -> Result<SparseWeights> {
    cfg.validate()?;
    let (rows, cols) = (img.rows(), img.cols());
    let rings = Rings::new(cfg.radius);
    let adjacency: Vec<Vec<(usize, f64)>> = (0..rows * cols)
        .into_par_iter()
        .map(|node| {
            let center = (node / cols, node % cols);
            let reference = rings.inner_mean(img, center, cfg.ring_excludes_center);
            let mut row = Vec::with_capacity(cfg.radius - 1);
            for ring in 2..=cfg.radius {
                if let Some((p, diff, sum, count)) = rings.most_similar(img, center, ring, reference) {
                    let w = ring_weight(diff, img.get(p.0, p.1), sum, count);
                    if w > 0.0 {
                        row.push((p.0 * cols + p.1, w));
                    }
                }
            }
            row
        })
        .collect();
    Ok(SparseWeights::from_rows(rows * cols, adjacency, false))
}

/// `(W + Wᵀ) / 2` over the union of stored coordinates.
pub fn symmetrize(w: &SparseWeights) -> SparseWeights {
    let n = w.n();
    // (lo, hi, weight stored at (lo, hi), weight stored at (hi, lo))
    let mut pairs: Vec<(usize, usize, f64, f64)> = w
        .entries()
        .map(|(i, j, v)| if i < j { (i, j, v, 0.0) } else { (j, i, 0.0, v) })
        .collect();
    pairs.sort_by_key(|p| (p.0, p.1));
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut k = 0;
    while k < pairs.len() {
        let (lo, hi, mut a, mut b) = pairs[k];
        k += 1;
        while k < pairs.len() && (pairs[k].0, pairs[k].1) == (lo, hi) {
            a += pairs[k].2;
            b += pairs[k].3;
            k += 1;
        }
        let v = (a + b) / 2.0;
        rows[lo].push((hi, v));
        rows[hi].push((lo, v));
    }
    SparseWeights::from_rows(n, rows, true)
}

/// Scaled out-degree `c_i = sum_j W_ij / (R - 1)`.
pub fn coefficient_vector(w: &SparseWeights, cfg: &PatchConfig) -> Result<CoefficientVector> {
    cfg.validate()?;
    let scale = (cfg.radius - 1) as f64;
    CoefficientVector::new(w.row_sums().into_iter().map(|s| s / scale).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> GrayImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GrayImage::from_fn(rows, cols, |_, _| rng.random_range(1.0..255.0)).unwrap()
    }

    /// Independent ring scan over every pixel of the image.
    fn brute_ring(center: (usize, usize), r: usize, rows: usize, cols: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..rows {
            for v in 0..cols {
                let d = (u as isize - center.0 as isize)
                    .abs()
                    .max((v as isize - center.1 as isize).abs());
                if d as usize == r {
                    out.push((u, v));
                }
            }
        }
        out
    }

    fn brute_mean(img: &GrayImage, px: &[(usize, usize)]) -> f64 {
        px.iter().map(|&(u, v)| img.get(u, v)).sum::<f64>() / px.len() as f64
    }

    /// Scalar evaluation of one weight straight from the definition.
    fn oracle_weight(img: &GrayImage, center: (usize, usize), r: usize) -> ((usize, usize), f64) {
        let mut inner = brute_ring(center, 1, img.rows(), img.cols());
        inner.push(center);
        let reference = brute_mean(img, &inner);
        let ring = brute_ring(center, r, img.rows(), img.cols());
        let mut best = ring[0];
        for &p in &ring {
            if (reference - img.get(p.0, p.1)).abs() < (reference - img.get(best.0, best.1)).abs() {
                best = p;
            }
        }
        let rest: Vec<_> = ring.iter().copied().filter(|&p| p != best).collect();
        let w = (reference - img.get(best.0, best.1)).abs() * brute_mean(img, &rest) / brute_mean(img, &ring);
        (best, w)
    }

    #[test]
    fn ring_examples() {
        let eight = ring_pixels((5, 5), 1, 11, 11).unwrap();
        assert_eq!(eight.len(), 8);
        assert!(!eight.contains(&(5, 5)));
        assert_eq!(ring_pixels((0, 0), 1, 10, 10).unwrap(), vec![(0, 1), (1, 0), (1, 1)]);
        assert_eq!(ring_pixels((3, 4), 0, 10, 10).unwrap(), vec![(3, 4)]);
        assert!(ring_pixels((10, 0), 1, 10, 10).is_err());
    }

    #[test]
    fn rings_match_brute_force_scan() {
        for r in 0..6 {
            for center in [(5, 5), (0, 0), (2, 9), (10, 3)] {
                let fast = ring_pixels(center, r, 11, 13).unwrap();
                assert_eq!(fast, brute_ring(center, r, 11, 13), "center {center:?} r {r}");
            }
        }
        assert_eq!(ring_pixels((5, 5), 3, 11, 11).unwrap().len(), 24);
    }

    #[test]
    fn simi_tie_breaks_row_major() {
        let img = GrayImage::constant(11, 11, 40.0).unwrap();
        let cfg = PatchConfig::new(5).unwrap();
        assert_eq!(simi(&img, (5, 5), 2, &cfg).unwrap(), (3, 3));
        assert_eq!(simi(&img, (5, 5), 4, &cfg).unwrap(), (1, 1));
    }

    #[test]
    fn simi_picks_unique_nearest() {
        // 3×3 block mean is 100; ring 2 holds 90, 99, 150 and 0 elsewhere
        let mut data = vec![0.0; 49];
        for u in 2..5 {
            for v in 2..5 {
                data[u * 7 + v] = 100.0;
            }
        }
        data[7 + 1] = 90.0;
        data[5 * 7 + 3] = 99.0;
        data[3 * 7 + 5] = 150.0;
        let img = GrayImage::new(7, 7, data).unwrap();
        let cfg = PatchConfig::new(3).unwrap();
        assert_eq!(simi(&img, (3, 3), 2, &cfg).unwrap(), (5, 3));
    }

    #[test]
    fn simi_errors() {
        let img = GrayImage::constant(3, 3, 1.0).unwrap();
        let cfg = PatchConfig::new(3).unwrap();
        assert!(matches!(simi(&img, (1, 1), 2, &cfg), Err(Error::EmptyRing { .. })));
        assert!(matches!(simi(&img, (1, 1), 1, &cfg), Err(Error::InvalidParameter(_))));
        assert!(matches!(simi(&img, (1, 1), 4, &cfg), Err(Error::InvalidParameter(_))));
        assert!(matches!(simi(&img, (3, 0), 2, &cfg), Err(Error::OutOfBounds { .. })));
        assert!(PatchConfig::new(1).is_err());
    }

    #[test]
    fn simi_matches_exhaustive_scan() {
        let img = random_image(15, 15, 3);
        let cfg = PatchConfig::new(5).unwrap();
        for u in 0..15 {
            for v in 0..15 {
                for r in 2..=5 {
                    let (best, _) = oracle_weight(&img, (u, v), r);
                    assert_eq!(simi(&img, (u, v), r, &cfg).unwrap(), best);
                }
            }
        }
    }

    #[test]
    fn constant_image_has_no_weights() {
        let img = GrayImage::constant(12, 12, 77.0).unwrap();
        let cfg = PatchConfig::default();
        let w = build_rccc_weights(&img, &cfg).unwrap();
        assert_eq!(w.nnz(), 0);
        assert!(coefficient_vector(&w, &cfg).unwrap().values().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn single_bright_pixel_weights() {
        let mut data = vec![0.0; 121];
        data[60] = 90.0;
        let img = GrayImage::new(11, 11, data).unwrap();
        let cfg = PatchConfig::new(3).unwrap();
        let w = build_rccc_weights(&img, &cfg).unwrap();
        // reference mean is 10; both rings are all zeros, so the pick is the
        // first ring pixel and the zero-mean guard keeps the ratio at 1
        let (cols, weights) = w.row(60);
        assert_eq!(cols, &[2 * 11 + 2, 3 * 11 + 3]);
        assert_eq!(weights, &[10.0, 10.0]);
        // a ring-1 neighbour sees the spike in its 3×3 mean and on ring 2
        let (_, wn) = w.row(4 * 11 + 5);
        assert!(wn.iter().all(|&x| (x - 10.0).abs() < 1e-12));
    }

    #[test]
    fn weights_match_scalar_oracle() {
        let img = random_image(13, 17, 9);
        let cfg = PatchConfig::new(4).unwrap();
        let w = build_rccc_weights(&img, &cfg).unwrap();
        for u in 0..13 {
            for v in 0..17 {
                let node = u * 17 + v;
                for r in 2..=4 {
                    let (p, expected) = oracle_weight(&img, (u, v), r);
                    let got = w.get(node, p.0 * 17 + p.1).unwrap();
                    assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
                }
                assert_eq!(w.row(node).0.len(), 3);
            }
        }
    }

    #[test]
    fn excluded_center_reading() {
        let mut data = vec![10.0; 121];
        data[60] = 100.0;
        let img = GrayImage::new(11, 11, data).unwrap();
        let cfg = PatchConfig {
            radius: 3,
            ring_excludes_center: true,
        };
        // reference is the 8-ring mean (10), identical to every ring pixel
        let w = build_rccc_weights(&img, &cfg).unwrap();
        assert_eq!(w.row(60).0.len(), 0);
        let inclusive = build_rccc_weights(&img, &PatchConfig::new(3).unwrap()).unwrap();
        assert_eq!(inclusive.row(60).1, &[10.0, 10.0]);
    }

    #[test]
    fn symmetrize_examples() {
        let w = SparseWeights::from_triplets(10, vec![(3, 7, 4.0)], false).unwrap();
        let s = symmetrize(&w);
        assert!(s.is_symmetric());
        assert_eq!(s.entries().collect::<Vec<_>>(), vec![(3, 7, 2.0), (7, 3, 2.0)]);
        let sym = SparseWeights::from_triplets(4, vec![(0, 2, 1.5), (2, 0, 1.5), (1, 3, 0.25), (3, 1, 0.25)], true)
            .unwrap();
        assert_eq!(symmetrize(&sym), sym);
    }

    #[test]
    fn symmetrize_matches_dense_oracle() {
        let img = random_image(14, 11, 5);
        let w = build_rccc_weights(&img, &PatchConfig::default()).unwrap();
        let dense = w.to_dense();
        let s = symmetrize(&w).to_dense();
        for i in 0..w.n() {
            for j in 0..w.n() {
                assert_eq!(s[i][j], (dense[i][j] + dense[j][i]) / 2.0);
                assert_eq!(s[i][j], s[j][i]);
            }
        }
    }

    #[test]
    fn coefficient_examples() {
        let w = SparseWeights::from_triplets(3, vec![(0, 1, 2.0), (0, 2, 4.0)], false).unwrap();
        let c = coefficient_vector(&w, &PatchConfig::new(3).unwrap()).unwrap();
        assert_eq!(c.values(), &[3.0, 0.0, 0.0]);

        let img = random_image(12, 12, 21);
        let cfg = PatchConfig::default();
        let w = build_rccc_weights(&img, &cfg).unwrap();
        let c = coefficient_vector(&w, &cfg).unwrap();
        for (i, row) in w.to_dense().iter().enumerate() {
            let expected = row.iter().sum::<f64>() / 4.0;
            assert!((c.values()[i] - expected).abs() <= 1e-12 * expected.max(1.0));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn weights_scale_with_intensity(seed in any::<u64>(), alpha in 0.05f64..1.0) {
            let img = random_image(16, 16, seed);
            let cfg = PatchConfig::default();
            let w = build_rccc_weights(&img, &cfg).unwrap();
            let ws = build_rccc_weights(&img.scaled(alpha).unwrap(), &cfg).unwrap();
            prop_assert_eq!(w.nnz(), ws.nnz());
            for ((i, j, a), (i2, j2, b)) in w.entries().zip(ws.entries()) {
                prop_assert_eq!((i, j), (i2, j2));
                // near-cancelling differences are measured against one gray level
                prop_assert!((b - alpha * a).abs() <= 1e-10 * alpha * a.max(1.0));
            }
        }

        #[test]
        fn sparsity_and_sign(seed in any::<u64>(), radius in 2usize..6) {
            let img = random_image(14, 14, seed);
            let cfg = PatchConfig::new(radius).unwrap();
            let w = build_rccc_weights(&img, &cfg).unwrap();
            prop_assert!(w.nnz() <= w.n() * (radius - 1));
            for i in 0..w.n() {
                prop_assert!(w.row(i).0.len() < radius);
            }
            prop_assert!(w.entries().all(|(_, _, v)| v >= 0.0 && v.is_finite()));
            let s = symmetrize(&w);
            prop_assert!(s.entries().all(|(i, j, v)| s.get(j, i) == Some(v)));
        }
    }
}
