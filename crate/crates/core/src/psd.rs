//! Segmentation-aware post-synaptic partner identification: candidate bodies
//! around each T-bar, dilation-intersection interface features, dark-voxel
//! masking, and MLP classification.

use crate::error::{Error, Result};
use crate::mlp::{self, MlpModel, TrainSpec};
use crate::tbar::TbarPrediction;
use crate::volume::{
    ball_mask, bodies_in_sphere, brightest_in_ball, dilate_segment, GrayVolume, LabelVolume,
    Point3, VoxelMask,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

/// Sentinel distance when an interface is empty.
pub const EMPTY_INTERFACE_DISTANCE: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartnerConfig {
    /// Sphere radius for candidate body selection.
    pub candidate_radius: f64,
    /// Dilation radii; features are concatenated per radius.
    pub dilation_radii: Vec<f64>,
    /// Voxels with intensity below this are ignored in the segmentation.
    pub dark_threshold: u8,
    /// Partner retained iff classifier confidence >= this.
    pub decision_threshold: f64,
}

impl Default for PartnerConfig {
    fn default() -> Self {
        PartnerConfig {
            candidate_radius: 15.0,
            dilation_radii: vec![1.0, 2.0],
            dark_threshold: 50,
            decision_threshold: 0.5,
        }
    }
}

impl PartnerConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.candidate_radius.is_finite() || self.candidate_radius <= 0.0 {
            return Err(Error::invalid("candidate_radius must be finite and > 0"));
        }
        if self.dilation_radii.is_empty() {
            return Err(Error::invalid("dilation_radii must be non-empty"));
        }
        if self.dilation_radii.iter().any(|r| !r.is_finite() || *r <= 0.0) {
            return Err(Error::invalid("dilation radii must be finite and > 0"));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::invalid("decision_threshold must be in [0, 1]"));
        }
        Ok(())
    }

    /// Fixed feature vector length: 5 per dilation radius, plus the
    /// candidate-sphere body count and the interface centroid distance.
    pub fn feature_len(&self) -> usize {
        5 * self.dilation_radii.len() + 2
    }
}

/// One post-synaptic partner prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartnerPrediction {
    pub body: u32,
    pub confidence: f64,
}

/// A T-bar with its predicted (or annotated) post-synaptic partners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynapseEntry {
    pub tbar: TbarPrediction,
    pub partners: Vec<PartnerPrediction>,
}

/// A full set of polyadic synapse predictions.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynapseSet {
    pub synapses: Vec<SynapseEntry>,
}

impl SynapseSet {
    /// Within one entry partner bodies must be distinct and nonzero.
    pub fn validate(&self) -> Result<()> {
        for entry in &self.synapses {
            if !(0.0..=1.0).contains(&entry.tbar.confidence) {
                return Err(Error::invalid("tbar confidence must be in [0, 1]"));
            }
            let mut seen = BTreeSet::new();
            for p in &entry.partners {
                if p.body == 0 {
                    return Err(Error::invalid("partner body id must be nonzero"));
                }
                if !(0.0..=1.0).contains(&p.confidence) {
                    return Err(Error::invalid("partner confidence must be in [0, 1]"));
                }
                if !seen.insert(p.body) {
                    return Err(Error::invalid(format!(
                        "duplicate partner body {} within one synapse",
                        p.body
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Ground-truth partner as read from disk: either resolved to a body already
/// or given as a point annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPartner {
    pub body: Option<u32>,
    pub pos: Option<Point3>,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawSynapse {
    pub tbar: TbarPrediction,
    pub partners: Vec<RawPartner>,
}

/// Copy of the segmentation with every voxel darker than `dark_threshold`
/// set to the ignore label 0.
pub fn mask_dark_voxels(
    labels: &LabelVolume,
    gray: &GrayVolume,
    dark_threshold: u16,
) -> Result<LabelVolume> {
    if labels.dims() != gray.dims() {
        return Err(Error::invalid("label and gray dims mismatch"));
    }
    let data = labels
        .data()
        .iter()
        .zip(gray.data())
        .map(|(&lab, &v)| if (v as u16) < dark_threshold { 0 } else { lab })
        .collect();
    LabelVolume::new(labels.dims(), data)
}

/// Body containing the T-bar, resolved on the masked volume with a fallback
/// to the unmasked volume when the T-bar sits on a dark (masked) voxel.
pub fn resolve_tbar_body(masked: &LabelVolume, unmasked: &LabelVolume, pos: Point3) -> u32 {
    let m = masked.get(pos);
    if m != 0 {
        m
    } else {
        unmasked.get(pos)
    }
}

/// Candidate post-synaptic bodies: all nonzero labels intersecting the
/// candidate sphere, excluding the T-bar's own body. Ascending id order.
pub fn candidates_for_tbar(
    tbar: &TbarPrediction,
    masked: &LabelVolume,
    unmasked: &LabelVolume,
    cfg: &PartnerConfig,
) -> Result<Vec<u32>> {
    let own = resolve_tbar_body(masked, unmasked, tbar.pos);
    let mut ids = bodies_in_sphere(masked, tbar.pos, cfg.candidate_radius)?;
    ids.remove(&own);
    Ok(ids.into_iter().collect())
}

/// Estimated interface between two bodies: the intersection of their
/// `d`-dilations.
pub fn interface_mask(
    labels: &LabelVolume,
    body_a: u32,
    body_b: u32,
    d: f64,
) -> Result<VoxelMask> {
    if body_a == body_b {
        return Err(Error::invalid("interface requires two distinct bodies"));
    }
    let a = dilate_segment(labels, body_a, d)?;
    let b = dilate_segment(labels, body_b, d)?;
    a.intersect(&b)
}

/// Memoizes dilation masks within one train/predict pass.
struct DilationCache<'a> {
    labels: &'a LabelVolume,
    masks: HashMap<(u32, u64), VoxelMask>,
}

impl<'a> DilationCache<'a> {
    fn new(labels: &'a LabelVolume) -> Self {
        DilationCache {
            labels,
            masks: HashMap::new(),
        }
    }

    fn warm(&mut self, body: u32, radius: f64) -> Result<()> {
        let key = (body, radius.to_bits());
        if !self.masks.contains_key(&key) {
            let mask = dilate_segment(self.labels, body, radius)?;
            self.masks.insert(key, mask);
        }
        Ok(())
    }

    fn interface(&mut self, body_a: u32, body_b: u32, d: f64) -> Result<VoxelMask> {
        if body_a == body_b {
            return Err(Error::invalid("interface requires two distinct bodies"));
        }
        self.warm(body_a, d)?;
        self.warm(body_b, d)?;
        let a = &self.masks[&(body_a, d.to_bits())];
        let b = &self.masks[&(body_b, d.to_bits())];
        a.intersect(b)
    }
}

fn features_from_interfaces(
    gray: &GrayVolume,
    masked: &LabelVolume,
    tbar_pos: Point3,
    candidate: u32,
    cfg: &PartnerConfig,
    interfaces: &[VoxelMask],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(cfg.feature_len());
    for interface in interfaces {
        let mut count = 0usize;
        let mut dark = 0usize;
        let mut sum = 0.0f64;
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for p in interface.points() {
            let v = gray.get(p);
            count += 1;
            sum += v as f64;
            min = min.min(v as f64);
            max = max.max(v as f64);
            if (v as u16) < cfg.dark_threshold as u16 {
                dark += 1;
            }
        }
        if count == 0 {
            out.extend_from_slice(&[0.0, 0.0, 0.0, 0.0, 0.0]);
        } else {
            out.push(count as f64);
            out.push(sum / count as f64);
            out.push(min);
            out.push(max);
            out.push(dark as f64);
        }
    }

    // Candidate-body voxel count within the candidate sphere.
    let dims = masked.dims();
    let mut in_sphere = 0usize;
    for (dx, dy, dz) in ball_mask(cfg.candidate_radius)? {
        let q = tbar_pos.offset(dx, dy, dz);
        if dims.contains(q) && masked.get(q) == candidate {
            in_sphere += 1;
        }
    }
    out.push(in_sphere as f64);

    // Distance from the T-bar to the centroid of the widest interface.
    let widest = interfaces.last().expect("dilation_radii is non-empty");
    let mut n = 0usize;
    let (mut cx, mut cy, mut cz) = (0.0f64, 0.0f64, 0.0f64);
    for p in widest.points() {
        n += 1;
        cx += p.x as f64;
        cy += p.y as f64;
        cz += p.z as f64;
    }
    if n == 0 {
        out.push(EMPTY_INTERFACE_DISTANCE);
    } else {
        let nf = n as f64;
        let dx = cx / nf - tbar_pos.x as f64;
        let dy = cy / nf - tbar_pos.y as f64;
        let dz = cz / nf - tbar_pos.z as f64;
        out.push((dx * dx + dy * dy + dz * dz).sqrt());
    }
    Ok(out)
}

fn features_with_cache(
    gray: &GrayVolume,
    masked: &LabelVolume,
    cache: &mut DilationCache,
    tbar_pos: Point3,
    tbar_body: u32,
    candidate: u32,
    cfg: &PartnerConfig,
) -> Result<Vec<f64>> {
    let interfaces: Vec<VoxelMask> = cfg
        .dilation_radii
        .iter()
        .map(|&d| cache.interface(tbar_body, candidate, d))
        .collect::<Result<_>>()?;
    features_from_interfaces(gray, masked, tbar_pos, candidate, cfg, &interfaces)
}

/// Pooled interface features for one (T-bar, candidate body) pair.
/// `masked` must already have dark voxels removed; `tbar_body` is the
/// pre-synaptic body (see [`resolve_tbar_body`]).
pub fn extract_features(
    gray: &GrayVolume,
    masked: &LabelVolume,
    tbar_pos: Point3,
    tbar_body: u32,
    candidate: u32,
    cfg: &PartnerConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut cache = DilationCache::new(masked);
    features_with_cache(gray, masked, &mut cache, tbar_pos, tbar_body, candidate, cfg)
}

/// Resolves point-annotated ground-truth partners to bodies: shift each
/// annotation to the brightest voxel within `shift_radius`, then take the
/// label there. Partners landing on label 0 are dropped and reported.
pub fn resolve_ground_truth(
    raw: &[RawSynapse],
    gray: &GrayVolume,
    labels: &LabelVolume,
    shift_radius: f64,
) -> Result<(SynapseSet, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut synapses = Vec::with_capacity(raw.len());
    for entry in raw {
        if !labels.dims().contains(entry.tbar.pos) {
            return Err(Error::invalid(format!(
                "ground-truth T-bar {:?} out of bounds",
                entry.tbar.pos
            )));
        }
        let mut partners = Vec::new();
        let mut seen = BTreeSet::new();
        for p in &entry.partners {
            let body = match (p.body, p.pos) {
                (Some(b), _) => b,
                (None, Some(pos)) => {
                    if !labels.dims().contains(pos) {
                        return Err(Error::invalid(format!(
                            "ground-truth PSD {pos:?} out of bounds"
                        )));
                    }
                    let shifted = brightest_in_ball(gray, pos, shift_radius)?;
                    labels.get(shifted)
                }
                (None, None) => {
                    return Err(Error::invalid(
                        "ground-truth partner needs a body or a position",
                    ))
                }
            };
            if body == 0 {
                warnings.push(format!(
                    "partner of T-bar {:?} resolved to ignore label 0; dropped",
                    entry.tbar.pos
                ));
                continue;
            }
            if seen.insert(body) {
                partners.push(PartnerPrediction {
                    body,
                    confidence: p.confidence,
                });
            }
        }
        synapses.push(SynapseEntry {
            tbar: entry.tbar,
            partners,
        });
    }
    Ok((SynapseSet { synapses }, warnings))
}

/// Trains the partner classifier: candidates of every ground-truth T-bar are
/// labeled positive iff their body contains a ground-truth partner.
pub fn psd_train(
    gray: &GrayVolume,
    labels: &LabelVolume,
    ground_truth: &SynapseSet,
    cfg: &PartnerConfig,
    spec: &TrainSpec,
) -> Result<MlpModel> {
    cfg.validate()?;
    if ground_truth.synapses.is_empty() {
        return Err(Error::invalid("ground truth contains no T-bars"));
    }
    let masked = mask_dark_voxels(labels, gray, cfg.dark_threshold as u16)?;
    let mut cache = DilationCache::new(&masked);
    let mut samples: Vec<(Vec<f64>, u8)> = Vec::new();
    let mut positives = 0usize;
    for entry in &ground_truth.synapses {
        if !labels.dims().contains(entry.tbar.pos) {
            return Err(Error::invalid(format!(
                "ground-truth T-bar {:?} out of bounds",
                entry.tbar.pos
            )));
        }
        let own = resolve_tbar_body(&masked, labels, entry.tbar.pos);
        if own == 0 {
            continue;
        }
        let gt_bodies: BTreeSet<u32> = entry.partners.iter().map(|p| p.body).collect();
        for candidate in candidates_for_tbar(&entry.tbar, &masked, labels, cfg)? {
            let feats = features_with_cache(
                gray,
                &masked,
                &mut cache,
                entry.tbar.pos,
                own,
                candidate,
                cfg,
            )?;
            let label = gt_bodies.contains(&candidate) as u8;
            positives += label as usize;
            samples.push((feats, label));
        }
    }
    if positives == 0 {
        return Err(Error::invalid(
            "no positive candidates found; ground truth may be misaligned with the segmentation",
        ));
    }
    let mut sizes = vec![cfg.feature_len()];
    sizes.extend_from_slice(&spec.hidden_sizes);
    sizes.push(1);
    let model = mlp::mlp_init(&sizes, spec.seed)?;
    mlp::mlp_train(&model, &samples, spec)
}

/// Classifies every (T-bar, candidate body) pair; partners retained iff
/// confidence >= `cfg.decision_threshold`. T-bars on an unresolvable (zero)
/// body get empty partner lists.
pub fn predict_partners(
    gray: &GrayVolume,
    labels: &LabelVolume,
    tbars: &[TbarPrediction],
    model: &MlpModel,
    cfg: &PartnerConfig,
) -> Result<SynapseSet> {
    cfg.validate()?;
    if model.input_dim() != cfg.feature_len() {
        return Err(Error::invalid(format!(
            "model input dim {} != feature length {}",
            model.input_dim(),
            cfg.feature_len()
        )));
    }
    let masked = mask_dark_voxels(labels, gray, cfg.dark_threshold as u16)?;

    // Precompute every needed dilation sequentially so the per-tbar phase can
    // run in parallel over a read-only cache.
    let mut cache = DilationCache::new(&masked);
    let mut per_tbar: Vec<(TbarPrediction, u32, Vec<u32>)> = Vec::with_capacity(tbars.len());
    for tbar in tbars {
        if !labels.dims().contains(tbar.pos) {
            return Err(Error::invalid(format!("T-bar {:?} out of bounds", tbar.pos)));
        }
        let own = resolve_tbar_body(&masked, labels, tbar.pos);
        let candidates = if own == 0 {
            Vec::new()
        } else {
            candidates_for_tbar(tbar, &masked, labels, cfg)?
        };
        for &c in &candidates {
            for &d in &cfg.dilation_radii {
                cache.warm(own, d)?;
                cache.warm(c, d)?;
            }
        }
        per_tbar.push((*tbar, own, candidates));
    }
    let masks = &cache.masks;

    let synapses: Vec<SynapseEntry> = per_tbar
        .par_iter()
        .map(|(tbar, own, candidates)| {
            let mut partners = Vec::new();
            for &candidate in candidates {
                let interfaces: Vec<VoxelMask> = cfg
                    .dilation_radii
                    .iter()
                    .map(|&d| {
                        masks[&(*own, d.to_bits())].intersect(&masks[&(candidate, d.to_bits())])
                    })
                    .collect::<Result<_>>()?;
                let feats = features_from_interfaces(
                    gray, &masked, tbar.pos, candidate, cfg, &interfaces,
                )?;
                let confidence = mlp::mlp_forward(model, &feats)?;
                if confidence >= cfg.decision_threshold {
                    partners.push(PartnerPrediction {
                        body: candidate,
                        confidence,
                    });
                }
            }
            Ok(SynapseEntry {
                tbar: *tbar,
                partners,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let set = SynapseSet { synapses };
    set.validate()?;
    Ok(set)
}
