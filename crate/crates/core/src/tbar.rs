//! Pre-synaptic T-bar detection: point annotations to voxel labels, pluggable
//! voxel scoring, smoothing, greedy non-maxima suppression, and
//! shift-to-brightest refinement.

use crate::error::{Error, Result};
use crate::mlp::{self, MlpModel, TrainSpec};
use crate::smooth::gaussian_smooth;
use crate::volume::{ball_mask, brightest_in_ball, Dims, GrayVolume, Point3, ScalarField, VoxelMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A T-bar point prediction with classifier confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbarPrediction {
    pub pos: Point3,
    pub confidence: f64,
}

/// Anything that maps a voxel of a gray volume to a score in [0, 1],
/// evaluable densely over the whole volume. Implementations must be
/// deterministic.
pub trait VoxelScorer: Sync {
    fn score(&self, gray: &GrayVolume, p: Point3) -> f64;

    /// Dense evaluation; parallel over z-slices, identical to the sequential
    /// definition.
    fn score_dense(&self, gray: &GrayVolume) -> ScalarField {
        let dims = gray.dims();
        let slab = dims.nx * dims.ny;
        let data: Vec<f64> = (0..dims.nz)
            .into_par_iter()
            .flat_map_iter(|z| {
                (0..slab).map(move |i| (z, i)).collect::<Vec<_>>()
            })
            .map(|(z, i)| {
                let p = dims.point(z * slab + i);
                self.score(gray, p)
            })
            .collect();
        ScalarField::new(dims, data).expect("scorer produced non-finite score")
    }
}

/// Detector stage parameters. All radii are in voxel units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub positive_radius: f64,
    pub smooth_sigma: f64,
    pub score_threshold: f64,
    pub nms_radius: f64,
    pub shift_radius: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            positive_radius: 7.0,
            smooth_sigma: 1.0,
            score_threshold: 0.5,
            nms_radius: 27.0,
            shift_radius: 3.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("positive_radius", self.positive_radius),
            ("nms_radius", self.nms_radius),
            ("shift_radius", self.shift_radius),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !self.smooth_sigma.is_finite() || self.smooth_sigma <= 0.0 {
            return Err(Error::invalid("smooth_sigma must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::invalid("score_threshold must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Voxels within `positive_radius` of at least one annotation are positive.
pub fn make_voxel_labels(
    annotations: &[Point3],
    dims: Dims,
    positive_radius: f64,
) -> Result<VoxelMask> {
    if let Some(p) = annotations.iter().find(|p| !dims.contains(**p)) {
        return Err(Error::invalid(format!("annotation {p:?} out of bounds")));
    }
    let offsets = ball_mask(positive_radius)?;
    let mut mask = VoxelMask::falses(dims);
    for &a in annotations {
        for &(dx, dy, dz) in &offsets {
            let q = a.offset(dx, dy, dz);
            if dims.contains(q) {
                mask.set(q, true);
            }
        }
    }
    Ok(mask)
}

/// Reference voxel scorer: an MLP over flattened cubic intensity patches.
/// Deliberately weak; stands behind the [`VoxelScorer`] contract for
/// end-to-end runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchMlpScorer {
    pub model: MlpModel,
    pub patch_radius: i32,
}

impl PatchMlpScorer {
    pub fn validate(&self) -> Result<()> {
        if self.patch_radius < 0 {
            return Err(Error::invalid("patch_radius must be >= 0"));
        }
        self.model.validate()?;
        let side = (2 * self.patch_radius + 1) as usize;
        if self.model.input_dim() != side * side * side {
            return Err(Error::invalid("model input dim does not match patch size"));
        }
        Ok(())
    }

    fn patch(&self, gray: &GrayVolume, p: Point3) -> Vec<f64> {
        let dims = gray.dims();
        let r = self.patch_radius;
        let mut out = Vec::with_capacity(((2 * r + 1).pow(3)) as usize);
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    // Edge replication at the volume border.
                    let q = Point3::new(
                        (p.x + dx).clamp(0, dims.nx as i32 - 1),
                        (p.y + dy).clamp(0, dims.ny as i32 - 1),
                        (p.z + dz).clamp(0, dims.nz as i32 - 1),
                    );
                    out.push(gray.get(q) as f64);
                }
            }
        }
        out
    }
}

impl VoxelScorer for PatchMlpScorer {
    fn score(&self, gray: &GrayVolume, p: Point3) -> f64 {
        mlp::mlp_forward(&self.model, &self.patch(gray, p)).expect("patch dim matches model")
    }
}

/// Trains the patch-MLP scorer on class-balanced samples: every positive
/// voxel plus an equal count of uniformly sampled negatives (fixed seed).
pub fn reference_scorer_train(
    gray: &GrayVolume,
    labels: &VoxelMask,
    patch_radius: i32,
    spec: &TrainSpec,
) -> Result<PatchMlpScorer> {
    if gray.dims() != labels.dims() {
        return Err(Error::invalid("gray and label dims mismatch"));
    }
    if patch_radius < 0 {
        return Err(Error::invalid("patch_radius must be >= 0"));
    }
    let dims = gray.dims();
    let positives: Vec<usize> = (0..dims.len()).filter(|&i| labels.data()[i]).collect();
    let negatives: Vec<usize> = (0..dims.len()).filter(|&i| !labels.data()[i]).collect();
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid("training labels must contain both classes"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_neg = positives.len().min(negatives.len());
    let sampled_negatives: Vec<usize> = (0..n_neg)
        .map(|_| negatives[rng.gen_range(0..negatives.len())])
        .collect();

    let side = (2 * patch_radius + 1) as usize;
    let scorer_shape = PatchMlpScorer {
        model: mlp_init_for_patch(side.pow(3), spec)?,
        patch_radius,
    };
    let mut samples = Vec::with_capacity(positives.len() + sampled_negatives.len());
    for &idx in &positives {
        samples.push((scorer_shape.patch(gray, dims.point(idx)), 1u8));
    }
    for &idx in &sampled_negatives {
        samples.push((scorer_shape.patch(gray, dims.point(idx)), 0u8));
    }

    let model = mlp::mlp_train(&scorer_shape.model, &samples, spec)?;
    Ok(PatchMlpScorer {
        model,
        patch_radius,
    })
}

fn mlp_init_for_patch(input_dim: usize, spec: &TrainSpec) -> Result<MlpModel> {
    let mut sizes = vec![input_dim];
    sizes.extend_from_slice(&spec.hidden_sizes);
    sizes.push(1);
    mlp::mlp_init(&sizes, spec.seed)
}

/// Greedy non-maxima suppression: repeatedly emit the highest-scoring
/// unsuppressed voxel with score >= threshold (ties by smallest (z, y, x))
/// and suppress everything within `nms_radius` of it. Result sorted by
/// descending confidence.
pub fn nms(field: &ScalarField, threshold: f64, nms_radius: f64) -> Result<Vec<TbarPrediction>> {
    if !nms_radius.is_finite() || nms_radius < 0.0 {
        return Err(Error::invalid("nms_radius must be finite and >= 0"));
    }
    let dims = field.dims();
    let mut candidates: Vec<(f64, Point3)> = (0..dims.len())
        .filter_map(|i| {
            let s = field.data()[i];
            (s >= threshold).then(|| (s, dims.point(i)))
        })
        .collect();
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.zyx().cmp(&b.1.zyx())));

    let r2 = nms_radius * nms_radius;
    let mut emitted: Vec<TbarPrediction> = Vec::new();
    for (score, p) in candidates {
        if emitted.iter().any(|e| e.pos.dist2(p) <= r2) {
            continue;
        }
        emitted.push(TbarPrediction {
            pos: p,
            confidence: score.clamp(0.0, 1.0),
        });
    }
    Ok(emitted)
}

/// Moves each prediction to the brightest voxel within `shift_radius`;
/// confidence and order preserved.
pub fn shift_predictions(
    preds: &[TbarPrediction],
    gray: &GrayVolume,
    shift_radius: f64,
) -> Result<Vec<TbarPrediction>> {
    preds
        .iter()
        .map(|t| {
            Ok(TbarPrediction {
                pos: brightest_in_ball(gray, t.pos, shift_radius)?,
                confidence: t.confidence,
            })
        })
        .collect()
}

/// End-to-end point detection: dense score, smooth, NMS, shift-to-brightest.
pub fn detect_tbars(
    gray: &GrayVolume,
    scorer: &dyn VoxelScorer,
    cfg: &DetectorConfig,
) -> Result<Vec<TbarPrediction>> {
    cfg.validate()?;
    let scores = scorer.score_dense(gray);
    let smoothed = gaussian_smooth(&scores, cfg.smooth_sigma)?;
    let peaks = nms(&smoothed, cfg.score_threshold, cfg.nms_radius)?;
    shift_predictions(&peaks, gray, cfg.shift_radius)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_empty_annotations() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let mask = make_voxel_labels(&[], dims, 2.0).unwrap();
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn labels_radius_zero_single_voxel() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let mask = make_voxel_labels(&[Point3::new(1, 2, 3)], dims, 0.0).unwrap();
        assert_eq!(mask.count(), 1);
        assert!(mask.get(Point3::new(1, 2, 3)));
    }

    #[test]
    fn labels_overlap_counted_once() {
        let dims = Dims::new(9, 9, 9).unwrap();
        let a = Point3::new(3, 4, 4);
        let b = Point3::new(5, 4, 4);
        let mask = make_voxel_labels(&[a, b], dims, 1.5).unwrap();
        // Per-voxel distance oracle: union of the two balls.
        let mut expect = 0usize;
        for i in 0..dims.len() {
            let p = dims.point(i);
            if p.dist(a) <= 1.5 || p.dist(b) <= 1.5 {
                expect += 1;
            }
        }
        assert_eq!(mask.count(), expect);
    }

    #[test]
    fn labels_out_of_bounds_named() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let err = make_voxel_labels(&[Point3::new(9, 0, 0)], dims, 1.0).unwrap_err();
        assert!(err.to_string().contains('9'), "{err}");
    }

    #[test]
    fn labels_positive_count_bounded() {
        let dims = Dims::new(10, 10, 10).unwrap();
        let anns = [Point3::new(2, 2, 2), Point3::new(7, 7, 7)];
        let mask = make_voxel_labels(&anns, dims, 2.0).unwrap();
        assert!(mask.count() <= anns.len() * ball_mask(2.0).unwrap().len());
    }

    #[test]
    fn nms_all_below_threshold() {
        let field = ScalarField::zeros(Dims::new(4, 4, 4).unwrap());
        assert!(nms(&field, 0.5, 2.0).unwrap().is_empty());
    }

    #[test]
    fn nms_single_peak() {
        let mut field = ScalarField::zeros(Dims::new(5, 5, 5).unwrap());
        field.set(Point3::new(2, 2, 2), 0.9);
        let preds = nms(&field, 0.5, 2.0).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].pos, Point3::new(2, 2, 2));
        assert_eq!(preds[0].confidence, 0.9);
    }

    /// O(n^2) brute-force greedy suppression oracle: rescans the full grid for
    /// the global max among unsuppressed voxels at every step.
    fn nms_oracle(field: &ScalarField, threshold: f64, radius: f64) -> Vec<TbarPrediction> {
        let dims = field.dims();
        let mut suppressed = vec![false; dims.len()];
        let mut out = Vec::new();
        loop {
            let mut best: Option<(f64, usize)> = None;
            for i in 0..dims.len() {
                if suppressed[i] || field.data()[i] < threshold {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bs, bi)) => {
                        field.data()[i] > bs
                            || (field.data()[i] == bs
                                && dims.point(i).zyx() < dims.point(bi).zyx())
                    }
                };
                if better {
                    best = Some((field.data()[i], i));
                }
            }
            let Some((score, idx)) = best else { break };
            let p = dims.point(idx);
            out.push(TbarPrediction {
                pos: p,
                confidence: score.clamp(0.0, 1.0),
            });
            for (i, s) in suppressed.iter_mut().enumerate() {
                if dims.point(i).dist(p) <= radius {
                    *s = true;
                }
            }
        }
        out
    }

    #[test]
    fn nms_matches_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let dims = Dims::new(8, 8, 8).unwrap();
        let field = ScalarField::new(
            dims,
            (0..dims.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let got = nms(&field, 0.3, 2.0).unwrap();
        let expect = nms_oracle(&field, 0.3, 2.0);
        assert_eq!(got, expect);
    }

    #[test]
    fn nms_spacing_and_ordering_invariants() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let dims = Dims::new(9, 9, 9).unwrap();
        let field = ScalarField::new(
            dims,
            (0..dims.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let preds = nms(&field, 0.4, 2.5).unwrap();
        for w in preds.windows(2) {
            assert!(w[0].confidence >= w[1].confidence);
        }
        for (i, a) in preds.iter().enumerate() {
            assert!(a.confidence >= 0.4);
            for b in &preds[i + 1..] {
                assert!(a.pos.dist(b.pos) > 2.5);
            }
        }
    }

    #[test]
    fn shift_radius_zero_is_identity() {
        let gray = GrayVolume::filled(Dims::new(5, 5, 5).unwrap(), 100);
        let preds = vec![TbarPrediction {
            pos: Point3::new(2, 3, 1),
            confidence: 0.8,
        }];
        assert_eq!(shift_predictions(&preds, &gray, 0.0).unwrap(), preds);
    }

    #[test]
    fn shift_lands_on_bright_voxel() {
        let mut gray = GrayVolume::filled(Dims::new(7, 7, 7).unwrap(), 10);
        gray.set(Point3::new(5, 3, 3), 250);
        let preds = vec![TbarPrediction {
            pos: Point3::new(3, 3, 3),
            confidence: 0.7,
        }];
        let shifted = shift_predictions(&preds, &gray, 3.0).unwrap();
        assert_eq!(shifted[0].pos, Point3::new(5, 3, 3));
        assert_eq!(shifted[0].confidence, 0.7);
    }

    #[test]
    fn shift_uniform_follows_tie_break() {
        let gray = GrayVolume::filled(Dims::new(7, 7, 7).unwrap(), 10);
        let p = Point3::new(3, 3, 3);
        let preds = vec![TbarPrediction {
            pos: p,
            confidence: 0.7,
        }];
        let shifted = shift_predictions(&preds, &gray, 2.0).unwrap();
        assert_eq!(shifted[0].pos, brightest_in_ball(&gray, p, 2.0).unwrap());
    }

    struct ZeroScorer;
    impl VoxelScorer for ZeroScorer {
        fn score(&self, _: &GrayVolume, _: Point3) -> f64 {
            0.0
        }
    }

    struct BlobScorer {
        centers: Vec<Point3>,
        radius: f64,
    }
    impl VoxelScorer for BlobScorer {
        fn score(&self, _: &GrayVolume, p: Point3) -> f64 {
            if self.centers.iter().any(|c| c.dist(p) <= self.radius) {
                1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn detect_zero_scorer_empty() {
        let gray = GrayVolume::filled(Dims::new(8, 8, 8).unwrap(), 100);
        let cfg = DetectorConfig {
            nms_radius: 3.0,
            ..DetectorConfig::default()
        };
        assert!(detect_tbars(&gray, &ZeroScorer, &cfg).unwrap().is_empty());
    }

    #[test]
    fn detect_planted_blobs() {
        let dims = Dims::new(24, 24, 24).unwrap();
        let mut gray = GrayVolume::filled(dims, 100);
        let centers = vec![
            Point3::new(4, 4, 4),
            Point3::new(18, 4, 4),
            Point3::new(4, 18, 4),
            Point3::new(4, 4, 18),
            Point3::new(18, 18, 18),
        ];
        for &c in &centers {
            gray.set(c, 255);
        }
        let scorer = BlobScorer {
            centers: centers.clone(),
            radius: 1.0,
        };
        let cfg = DetectorConfig {
            positive_radius: 3.0,
            smooth_sigma: 1.0,
            score_threshold: 0.2,
            nms_radius: 6.0,
            shift_radius: 2.0,
        };
        let preds = detect_tbars(&gray, &scorer, &cfg).unwrap();
        assert_eq!(preds.len(), centers.len());
        for p in &preds {
            assert!(
                centers.iter().any(|c| c.dist(p.pos) <= cfg.positive_radius),
                "{:?} not near any planted center",
                p.pos
            );
        }
        // Determinism.
        assert_eq!(preds, detect_tbars(&gray, &scorer, &cfg).unwrap());
    }

    #[test]
    fn detect_monotone_in_threshold_before_shift() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dims = Dims::new(10, 10, 10).unwrap();
        let field = ScalarField::new(
            dims,
            (0..dims.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let smoothed = gaussian_smooth(&field, 1.0).unwrap();
        let low = nms(&smoothed, 0.3, 2.0).unwrap();
        let high = nms(&smoothed, 0.5, 2.0).unwrap();
        let low_set: std::collections::HashSet<_> = low.iter().map(|p| p.pos).collect();
        for p in &high {
            assert!(low_set.contains(&p.pos));
        }
    }

    #[test]
    fn reference_scorer_separates_bright_positives() {
        let dims = Dims::new(12, 12, 12).unwrap();
        let mut gray = GrayVolume::filled(dims, 0);
        let centers = [Point3::new(3, 3, 3), Point3::new(8, 8, 8)];
        for &c in &centers {
            gray.set(c, 255);
        }
        let labels = make_voxel_labels(&centers, dims, 0.0).unwrap();
        let spec = TrainSpec {
            epochs: 300,
            hidden_sizes: vec![4],
            ..TrainSpec::default()
        };
        let scorer = reference_scorer_train(&gray, &labels, 0, &spec).unwrap();
        // Linearly separable by construction: accuracy over the train voxels.
        let mut correct = 0usize;
        for i in 0..dims.len() {
            let p = dims.point(i);
            let s = scorer.score(&gray, p);
            if (s >= 0.5) == labels.get(p) {
                correct += 1;
            }
        }
        assert!(correct as f64 / dims.len() as f64 >= 0.99);
        // Determinism contract.
        let again = reference_scorer_train(&gray, &labels, 0, &spec).unwrap();
        assert_eq!(scorer.model, again.model);
    }

    #[test]
    fn reference_scorer_single_class_rejected() {
        let dims = Dims::new(4, 4, 4).unwrap();
        let gray = GrayVolume::filled(dims, 0);
        let labels = VoxelMask::falses(dims);
        assert!(reference_scorer_train(&gray, &labels, 0, &TrainSpec::default()).is_err());
    }
}
