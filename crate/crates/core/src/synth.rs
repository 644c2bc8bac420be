//! Synthetic scene generator: a Voronoi-partitioned label volume with bright
//! planted T-bar blobs and dark PSD contact patches, plus the matching
//! ground-truth synapse set. Deterministic per seed.
//!
//! Partner ground truth is derived from the same candidate rule the
//! predictor uses: a body is a partner iff it is a candidate of the T-bar
//! and its interface with the T-bar's body carries a planted dark patch.
//! Dark-interface evidence is symmetric between two bodies, so patches are
//! tracked per unordered body pair.

use crate::error::{Error, Result};
use crate::psd::{
    candidates_for_tbar, mask_dark_voxels, PartnerConfig, PartnerPrediction, SynapseEntry,
    SynapseSet,
};
use crate::tbar::TbarPrediction;
use crate::volume::{
    ball_mask, bodies_in_sphere, boundary_voxel_pairs, Dims, GrayVolume, LabelVolume, Point3,
    VoxelMask,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dims: [usize; 3],
    pub bodies: u32,
    pub tbars: usize,
    /// Cap on planted contact pairs per body, which bounds partners per T-bar.
    pub max_partners: usize,
    /// Std-dev of Gaussian intensity noise on the background (intensity levels).
    pub noise_sigma: f64,
    pub background_intensity: u8,
    pub blob_intensity: u8,
    pub blob_radius: f64,
    pub psd_intensity: u8,
    pub psd_radius: f64,
    /// Minimum distance between planted T-bar centers.
    pub min_separation: f64,
    /// Distance from the body boundary at which T-bar blobs are planted.
    pub boundary_inset: i32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            dims: [64, 64, 64],
            bodies: 8,
            tbars: 12,
            max_partners: 3,
            noise_sigma: 10.0,
            background_intensity: 128,
            blob_intensity: 255,
            blob_radius: 2.0,
            psd_intensity: 10,
            psd_radius: 2.0,
            min_separation: 12.0,
            boundary_inset: 5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid("synth dims must be positive"));
        }
        if self.bodies < 2 {
            return Err(Error::invalid("synth needs at least 2 bodies"));
        }
        if self.tbars < 1 || self.max_partners < 1 {
            return Err(Error::invalid("synth needs tbars >= 1 and max_partners >= 1"));
        }
        if !self.noise_sigma.is_finite() || self.noise_sigma < 0.0 {
            return Err(Error::invalid("noise_sigma must be finite and >= 0"));
        }
        if self.psd_intensity >= self.background_intensity
            || self.background_intensity >= self.blob_intensity
        {
            return Err(Error::invalid(
                "intensities must satisfy psd < background < blob",
            ));
        }
        for (name, r) in [("blob_radius", self.blob_radius), ("psd_radius", self.psd_radius)] {
            if !r.is_finite() || r <= 0.0 {
                return Err(Error::invalid(format!("{name} must be finite and > 0")));
            }
        }
        if !self.min_separation.is_finite() || self.min_separation <= 0.0 {
            return Err(Error::invalid("min_separation must be finite and > 0"));
        }
        if (self.boundary_inset as f64) <= self.blob_radius {
            return Err(Error::invalid("boundary_inset must exceed blob_radius"));
        }
        Ok(())
    }
}

/// A generated scene and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub gray: GrayVolume,
    pub labels: LabelVolume,
    pub ground_truth: SynapseSet,
}

fn infeasible(detail: impl Into<String>) -> Error {
    Error::invalid(format!("infeasible synth spec: {}", detail.into()))
}

/// True iff the whole discrete ball fits in bounds and satisfies `pred`.
fn ball_all(
    dims: Dims,
    center: Point3,
    offsets: &[(i32, i32, i32)],
    mut pred: impl FnMut(Point3) -> bool,
) -> bool {
    offsets.iter().all(|&(dx, dy, dz)| {
        let q = center.offset(dx, dy, dz);
        dims.contains(q) && pred(q)
    })
}

pub fn synth_scene(
    cfg: &SynthConfig,
    partner: &PartnerConfig,
    seed: u64,
) -> Result<SynthScene> {
    cfg.validate()?;
    partner.validate()?;
    let dims = Dims::new(cfg.dims[0], cfg.dims[1], cfg.dims[2])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Voronoi body partition. Seed points are kept apart so no body is a
    // sliver; ties go to the lower body id.
    let min_side = cfg.dims.iter().copied().min().unwrap() as f64;
    let seed_spacing = (min_side / (cfg.bodies as f64).cbrt() * 0.5).max(2.0);
    let mut sites: Vec<Point3> = Vec::new();
    let mut attempts = 0;
    while sites.len() < cfg.bodies as usize {
        attempts += 1;
        if attempts > 100_000 {
            return Err(infeasible("could not place well-separated body seeds"));
        }
        let p = Point3::new(
            rng.gen_range(0..dims.nx as i32),
            rng.gen_range(0..dims.ny as i32),
            rng.gen_range(0..dims.nz as i32),
        );
        if sites.iter().all(|&s| s.dist(p) >= seed_spacing) {
            sites.push(p);
        }
    }
    let label_data: Vec<u32> = (0..dims.len())
        .map(|i| {
            let p = dims.point(i);
            let mut best = 0usize;
            for (k, &s) in sites.iter().enumerate() {
                if s.dist2(p) < sites[best].dist2(p) {
                    best = k;
                }
            }
            best as u32 + 1
        })
        .collect();
    let labels = LabelVolume::new(dims, label_data)?;

    // Background with Gaussian noise.
    let mut gray = GrayVolume::filled(dims, cfg.background_intensity);
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0f64, cfg.noise_sigma)
            .map_err(|_| Error::invalid("bad noise_sigma"))?;
        let bg = cfg.background_intensity as f64;
        let data: Vec<u8> = (0..dims.len())
            .map(|_| (bg + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
            .collect();
        gray = GrayVolume::new(dims, data)?;
    }

    // Boundary voxel pairs, grouped by unordered body pair.
    let pairs = boundary_voxel_pairs(&labels);
    if pairs.is_empty() {
        return Err(infeasible("segmentation has no body boundaries"));
    }
    let mut by_pair: HashMap<(u32, u32), Vec<(Point3, Point3)>> = HashMap::new();
    for &(p, q) in &pairs {
        let (la, lb) = (labels.get(p), labels.get(q));
        by_pair
            .entry((la.min(lb), la.max(lb)))
            .or_default()
            .push((p, q));
    }

    let blob_offsets = ball_mask(cfg.blob_radius)?;
    let psd_offsets = ball_mask(cfg.psd_radius)?;
    // Painted voxels (blobs and patches) that no later structure may touch.
    let mut reserved = VoxelMask::falses(dims);
    // Unordered body pairs carrying a dark contact patch, and how many such
    // pairs touch each body.
    let mut marked: BTreeSet<(u32, u32)> = BTreeSet::new();
    let mut touch_count: BTreeMap<u32, usize> = BTreeMap::new();
    let mut centers: Vec<(Point3, u32)> = Vec::new();

    // Clearance between a patch center and any blob center.
    let clearance = cfg.blob_radius + cfg.psd_radius + 1.0;

    // Tries to paint a dark patch on the (a, b) interface near `near`;
    // returns false if no admissible spot exists.
    let place_patch = |gray: &mut GrayVolume,
                       reserved: &mut VoxelMask,
                       centers: &[(Point3, u32)],
                       a: u32,
                       b: u32,
                       near: Point3|
     -> bool {
        let key = (a.min(b), a.max(b));
        let Some(candidates) = by_pair.get(&key) else {
            return false;
        };
        let mut spots: Vec<Point3> = candidates.iter().map(|&(p, _)| p).collect();
        spots.sort_by(|x, y| {
            x.dist2(near)
                .partial_cmp(&y.dist2(near))
                .unwrap()
                .then(x.zyx().cmp(&y.zyx()))
        });
        for &r in &spots {
            let labels_ok = ball_all(dims, r, &psd_offsets, |q| {
                let l = labels.get(q);
                (l == a || l == b) && !reserved.get(q)
            });
            let clear = centers.iter().all(|&(c, _)| c.dist(r) >= clearance)
                && r.dist(near) >= clearance;
            if labels_ok && clear {
                for &(dx, dy, dz) in &psd_offsets {
                    let q = r.offset(dx, dy, dz);
                    gray.set(q, cfg.psd_intensity);
                    reserved.set(q, true);
                }
                return true;
            }
        }
        false
    };

    let max_attempts = 2_000 * cfg.tbars;
    let mut attempts = 0;
    while centers.len() < cfg.tbars {
        attempts += 1;
        if attempts > max_attempts {
            return Err(infeasible(format!(
                "placed only {} of {} T-bars",
                centers.len(),
                cfg.tbars
            )));
        }
        let &(p, q) = &pairs[rng.gen_range(0..pairs.len())];
        let (a, b) = (labels.get(p), labels.get(q));
        // Step from the boundary voxel into body `a` along the face normal.
        let (dx, dy, dz) = (p.x - q.x, p.y - q.y, p.z - q.z);
        let c = p.offset(
            dx * cfg.boundary_inset,
            dy * cfg.boundary_inset,
            dz * cfg.boundary_inset,
        );
        if !dims.contains(c) {
            continue;
        }
        let blob_fits = ball_all(dims, c, &blob_offsets, |v| {
            labels.get(v) == a && !reserved.get(v)
        });
        if !blob_fits {
            continue;
        }
        if centers.iter().any(|&(o, _)| o.dist(c) < cfg.min_separation) {
            continue;
        }
        let budget_ok = |x: u32, marked: &BTreeSet<(u32, u32)>, tc: &BTreeMap<u32, usize>| {
            marked.contains(&(x.min(a), x.max(a)))
                || (tc.get(&a).copied().unwrap_or(0) < cfg.max_partners
                    && tc.get(&x).copied().unwrap_or(0) < cfg.max_partners)
        };
        if !budget_ok(b, &marked, &touch_count) {
            continue;
        }
        // Ensure the primary contact patch exists before committing the blob.
        let key = (a.min(b), a.max(b));
        if !marked.contains(&key) {
            if !place_patch(&mut gray, &mut reserved, &centers, a, b, c) {
                continue;
            }
            marked.insert(key);
            *touch_count.entry(a).or_insert(0) += 1;
            *touch_count.entry(b).or_insert(0) += 1;
        }
        for &(dx, dy, dz) in &blob_offsets {
            let v = c.offset(dx, dy, dz);
            gray.set(v, cfg.blob_intensity);
            reserved.set(v, true);
        }
        centers.push((c, a));

        // Optionally mark further nearby bodies as partners of this T-bar.
        let mut extras: Vec<u32> = bodies_in_sphere(&labels, c, partner.candidate_radius)?
            .into_iter()
            .filter(|&x| x != a && x != b && !marked.contains(&(x.min(a), x.max(a))))
            .collect();
        extras.shuffle(&mut rng);
        let want = rng.gen_range(0..cfg.max_partners);
        for x in extras.into_iter().take(want) {
            if !budget_ok(x, &marked, &touch_count) {
                continue;
            }
            if place_patch(&mut gray, &mut reserved, &centers, a, x, c) {
                marked.insert((x.min(a), x.max(a)));
                *touch_count.entry(a).or_insert(0) += 1;
                *touch_count.entry(x).or_insert(0) += 1;
            }
        }
    }

    // Ground truth via the predictor's own candidate rule.
    let masked = mask_dark_voxels(&labels, &gray, partner.dark_threshold as u16)?;
    let mut synapses = Vec::with_capacity(centers.len());
    for &(c, a) in &centers {
        let tbar = TbarPrediction {
            pos: c,
            confidence: 1.0,
        };
        let partners: Vec<PartnerPrediction> =
            candidates_for_tbar(&tbar, &masked, &labels, partner)?
                .into_iter()
                .filter(|&x| marked.contains(&(x.min(a), x.max(a))))
                .map(|body| PartnerPrediction {
                    body,
                    confidence: 1.0,
                })
                .collect();
        if partners.is_empty() {
            return Err(infeasible(format!(
                "T-bar at {c:?} lost its planted partner; widen candidate_radius"
            )));
        }
        if partners.len() > cfg.max_partners {
            return Err(infeasible(format!(
                "T-bar at {c:?} accumulated {} partners",
                partners.len()
            )));
        }
        synapses.push(SynapseEntry { tbar, partners });
    }
    let ground_truth = SynapseSet { synapses };
    ground_truth.validate()?;
    Ok(SynthScene {
        gray,
        labels,
        ground_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            dims: [48, 48, 48],
            bodies: 6,
            tbars: 6,
            min_separation: 10.0,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = small_cfg();
        let partner = PartnerConfig::default();
        let a = synth_scene(&cfg, &partner, 3).unwrap();
        let b = synth_scene(&cfg, &partner, 3).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(&cfg, &partner, 4).unwrap();
        assert!(a.gray != c.gray);
    }

    #[test]
    fn scene_matches_spec_counts() {
        let cfg = small_cfg();
        let partner = PartnerConfig::default();
        let scene = synth_scene(&cfg, &partner, 1).unwrap();
        assert_eq!(scene.ground_truth.synapses.len(), cfg.tbars);
        let bodies: BTreeSet<u32> = scene.labels.data().iter().copied().collect();
        assert_eq!(bodies.len(), cfg.bodies as usize);
        assert!(!bodies.contains(&0));
        for entry in &scene.ground_truth.synapses {
            let n = entry.partners.len();
            assert!((1..=cfg.max_partners).contains(&n), "{n} partners");
        }
    }

    #[test]
    fn blob_voxels_have_exact_intensity_without_noise() {
        let cfg = SynthConfig {
            noise_sigma: 0.0,
            ..small_cfg()
        };
        let partner = PartnerConfig::default();
        let scene = synth_scene(&cfg, &partner, 7).unwrap();
        let offsets = ball_mask(cfg.blob_radius).unwrap();
        for entry in &scene.ground_truth.synapses {
            for &(dx, dy, dz) in &offsets {
                let v = entry.tbar.pos.offset(dx, dy, dz);
                assert_eq!(scene.gray.get(v), cfg.blob_intensity);
            }
        }
        // Away from planted structures the volume is flat background.
        let n_bg = scene
            .gray
            .data()
            .iter()
            .filter(|&&v| v == cfg.background_intensity)
            .count();
        assert!(n_bg > scene.gray.data().len() * 9 / 10);
    }

    #[test]
    fn tbars_sit_inside_their_body_and_apart() {
        let cfg = small_cfg();
        let partner = PartnerConfig::default();
        let scene = synth_scene(&cfg, &partner, 11).unwrap();
        let offsets = ball_mask(cfg.blob_radius).unwrap();
        let centers: Vec<Point3> = scene
            .ground_truth
            .synapses
            .iter()
            .map(|e| e.tbar.pos)
            .collect();
        for (i, &c) in centers.iter().enumerate() {
            let body = scene.labels.get(c);
            for &(dx, dy, dz) in &offsets {
                assert_eq!(scene.labels.get(c.offset(dx, dy, dz)), body);
            }
            for &o in &centers[i + 1..] {
                assert!(c.dist(o) >= cfg.min_separation);
            }
        }
    }

    #[test]
    fn ground_truth_partners_have_dark_interfaces() {
        let cfg = small_cfg();
        let partner = PartnerConfig::default();
        let scene = synth_scene(&cfg, &partner, 2).unwrap();
        let masked =
            mask_dark_voxels(&scene.labels, &scene.gray, partner.dark_threshold as u16).unwrap();
        let d = *partner.dilation_radii.last().unwrap();
        for entry in &scene.ground_truth.synapses {
            let own = scene.labels.get(entry.tbar.pos);
            for p in &entry.partners {
                let interface =
                    crate::psd::interface_mask(&masked, own, p.body, d).unwrap();
                let dark = interface
                    .points()
                    .filter(|&q| (scene.gray.get(q) as u16) < partner.dark_threshold as u16)
                    .count();
                assert!(dark > 0, "pair ({own},{}) has no dark interface", p.body);
            }
        }
    }

    #[test]
    fn infeasible_spec_rejected() {
        // Far more T-bars than a tiny volume can hold at the separation.
        let cfg = SynthConfig {
            dims: [24, 24, 24],
            bodies: 2,
            tbars: 50,
            min_separation: 12.0,
            ..SynthConfig::default()
        };
        assert!(synth_scene(&cfg, &PartnerConfig::default(), 0).is_err());
    }
}
