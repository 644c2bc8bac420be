//! Connectome graphs: directed (pre, post) -> synapse count, built from
//! synapse sets against a segmentation, plus the pure transforms used by the
//! evaluation suite (thresholding, orphan filtering, undirecting).

use crate::error::{Error, Result};
use crate::psd::{PartnerPrediction, SynapseEntry, SynapseSet};
use crate::volume::LabelVolume;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Weighted directed connectome graph. Stored edges always have weight >= 1
/// and nonzero endpoint ids; BTreeMap keeps edge iteration in ascending
/// (pre, post) order, which the CSV format relies on.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConnectomeGraph {
    pub edges: BTreeMap<(u32, u32), u64>,
}

impl ConnectomeGraph {
    pub fn add(&mut self, pre: u32, post: u32, weight: u64) -> Result<()> {
        if pre == 0 || post == 0 {
            return Err(Error::invalid("graph body ids must be nonzero"));
        }
        if weight > 0 {
            *self.edges.entry((pre, post)).or_insert(0) += weight;
        }
        Ok(())
    }

    pub fn weight(&self, pre: u32, post: u32) -> u64 {
        self.edges.get(&(pre, post)).copied().unwrap_or(0)
    }

    pub fn total_weight(&self) -> u64 {
        self.edges.values().sum()
    }

    /// Union of edge keys of two graphs, for metrics that sum over all edges.
    pub fn edge_union<'a>(&'a self, other: &'a ConnectomeGraph) -> BTreeSet<(u32, u32)> {
        self.edges
            .keys()
            .chain(other.edges.keys())
            .copied()
            .collect()
    }
}

/// Which bodies are admissible when filtering a graph (orphan handling).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BodyFilter {
    All,
    /// Only edges whose two endpoints are both in the set survive.
    Set(BTreeSet<u32>),
}

impl BodyFilter {
    /// Admissible bodies = every body touched by the ground truth (T-bar
    /// bodies and partner bodies).
    pub fn from_ground_truth(gt: &SynapseSet, labels: &LabelVolume) -> Result<Self> {
        let mut set = BTreeSet::new();
        for entry in &gt.synapses {
            if !labels.dims().contains(entry.tbar.pos) {
                return Err(Error::invalid(format!(
                    "ground-truth T-bar {:?} out of bounds",
                    entry.tbar.pos
                )));
            }
            let body = labels.get(entry.tbar.pos);
            if body != 0 {
                set.insert(body);
            }
            for p in &entry.partners {
                set.insert(p.body);
            }
        }
        Ok(BodyFilter::Set(set))
    }

    pub fn admits(&self, body: u32) -> bool {
        match self {
            BodyFilter::All => true,
            BodyFilter::Set(s) => s.contains(&body),
        }
    }
}

/// Outcome of [`build_graph`]: the graph plus the T-bars that could not be
/// assigned to a body (label 0) and were skipped.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GraphBuild {
    pub graph: ConnectomeGraph,
    pub skipped: Vec<String>,
}

/// Accumulates a directed graph from a synapse set: pre-body is the label at
/// the T-bar, each partner with confidence >= `psd_threshold` contributes one
/// unit of weight. Self-loops are skipped; T-bars on label 0 are reported in
/// the skip list rather than failing the build.
pub fn build_graph(
    synapses: &SynapseSet,
    labels: &LabelVolume,
    psd_threshold: f64,
) -> Result<GraphBuild> {
    if !psd_threshold.is_finite() {
        return Err(Error::invalid("psd_threshold must be finite"));
    }
    let mut out = GraphBuild::default();
    for entry in &synapses.synapses {
        if !labels.dims().contains(entry.tbar.pos) {
            return Err(Error::invalid(format!(
                "T-bar {:?} out of bounds",
                entry.tbar.pos
            )));
        }
        let pre = labels.get(entry.tbar.pos);
        if pre == 0 {
            out.skipped
                .push(format!("T-bar at {:?} lies on label 0", entry.tbar.pos));
            continue;
        }
        for p in &entry.partners {
            if p.confidence >= psd_threshold && p.body != pre {
                out.graph.add(pre, p.body, 1)?;
            }
        }
    }
    Ok(out)
}

/// Binarize: edges with weight >= `t` kept with weight 1, others dropped.
pub fn threshold_graph(g: &ConnectomeGraph, t: u64) -> Result<ConnectomeGraph> {
    if t < 1 {
        return Err(Error::invalid("threshold must be >= 1"));
    }
    Ok(ConnectomeGraph {
        edges: g
            .edges
            .iter()
            .filter(|(_, &w)| w >= t)
            .map(|(&k, _)| (k, 1))
            .collect(),
    })
}

/// Removes every edge with an inadmissible endpoint.
pub fn filter_bodies(g: &ConnectomeGraph, f: &BodyFilter) -> ConnectomeGraph {
    ConnectomeGraph {
        edges: g
            .edges
            .iter()
            .filter(|(&(pre, post), _)| f.admits(pre) && f.admits(post))
            .map(|(&k, &w)| (k, w))
            .collect(),
    }
}

/// Folds directions together: weight of {a, b} is weight(a,b) + weight(b,a),
/// stored under the canonical (min, max) key.
pub fn undirect_graph(g: &ConnectomeGraph) -> ConnectomeGraph {
    let mut out = ConnectomeGraph::default();
    for (&(pre, post), &w) in &g.edges {
        let key = (pre.min(post), pre.max(post));
        *out.edges.entry(key).or_insert(0) += w;
    }
    out
}

/// Ground-truth normalization: drops autapse partners (partner body equal to
/// the T-bar body) and deduplicates partners by body, keeping the maximum
/// confidence.
pub fn collapse_ground_truth(gt: &SynapseSet, labels: &LabelVolume) -> Result<SynapseSet> {
    let mut synapses = Vec::with_capacity(gt.synapses.len());
    for entry in &gt.synapses {
        if !labels.dims().contains(entry.tbar.pos) {
            return Err(Error::invalid(format!(
                "ground-truth T-bar {:?} out of bounds",
                entry.tbar.pos
            )));
        }
        let own = labels.get(entry.tbar.pos);
        let mut best: BTreeMap<u32, f64> = BTreeMap::new();
        for p in &entry.partners {
            if p.body == own {
                continue;
            }
            let slot = best.entry(p.body).or_insert(f64::NEG_INFINITY);
            *slot = slot.max(p.confidence);
        }
        synapses.push(SynapseEntry {
            tbar: entry.tbar,
            partners: best
                .into_iter()
                .map(|(body, confidence)| PartnerPrediction { body, confidence })
                .collect(),
        });
    }
    Ok(SynapseSet { synapses })
}
