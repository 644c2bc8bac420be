//! Body-proximity baseline: connections sampled from boundary voxel pairs of
//! the ground-truth segmentation, with random synapse direction.

use crate::connectome::{undirect_graph, ConnectomeGraph};
use crate::error::{Error, Result};
use crate::metrics::{MetricMode, PrCurve, PrPoint};
use crate::volume::LabelVolume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub sample_count: u64,
    pub seed: u64,
    pub directed: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            sample_count: 1000,
            seed: 0,
            directed: true,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_count < 1 {
            return Err(Error::invalid("sample_count must be >= 1"));
        }
        Ok(())
    }
}

/// Draws `sample_count` boundary voxel pairs uniformly with replacement and
/// flips a fair coin for the (pre, post) direction of each. The resulting
/// edge weights approximate contact area.
pub fn proximity_baseline(labels: &LabelVolume, cfg: &BaselineConfig) -> Result<ConnectomeGraph> {
    cfg.validate()?;
    let pairs = crate::volume::boundary_voxel_pairs(labels);
    if pairs.is_empty() {
        return Err(Error::invalid("segmentation has no boundary voxel pairs"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut graph = ConnectomeGraph::default();
    for _ in 0..cfg.sample_count {
        let (a, b) = pairs[rng.gen_range(0..pairs.len())];
        let (pre, post) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        graph.add(labels.get(pre), labels.get(post), 1)?;
    }
    Ok(graph)
}

/// Sweeps `sample_count` as the curve parameter: each point evaluates the
/// chosen metric on a freshly sampled baseline graph. `directed: false`
/// compares undirected views of both graphs.
pub fn baseline_curve(
    labels: &LabelVolume,
    gt_g: &ConnectomeGraph,
    sample_counts: &[u64],
    metric: MetricMode,
    cfg: &BaselineConfig,
) -> Result<PrCurve> {
    let gt_eval = if cfg.directed {
        gt_g.clone()
    } else {
        undirect_graph(gt_g)
    };
    let mut points: Vec<PrPoint> = Vec::with_capacity(sample_counts.len());
    for &n in sample_counts {
        let mut pred = proximity_baseline(
            labels,
            &BaselineConfig {
                sample_count: n,
                ..*cfg
            },
        )?;
        if !cfg.directed {
            pred = undirect_graph(&pred);
        }
        points.push(metric.evaluate(&pred, &gt_eval, n as f64)?);
    }
    let curve = PrCurve { points };
    curve.validate()?;
    Ok(curve)
}
