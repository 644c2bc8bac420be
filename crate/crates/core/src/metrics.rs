//! Evaluation metrics: T-bar matching PR, weighted/unweighted graph PR,
//! thresholded and asymmetric PR, connections added/missed, and count-scatter
//! records.

use crate::connectome::{build_graph, threshold_graph, ConnectomeGraph};
use crate::error::{Error, Result};
use crate::psd::SynapseSet;
use crate::tbar::TbarPrediction;
use crate::volume::{LabelVolume, Point3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One precision/recall measurement. Zero-denominator precision or recall is
/// carried as `None` (never NaN); the CSV writer emits an empty field.
///
/// For asymmetric PR the paper's precision and recall numerators differ, so
/// there the counts are: tp = recall numerator, fn = recall shortfall,
/// fp = precision shortfall; `precision`/`recall` are always authoritative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl PrPoint {
    /// Standard point where precision = tp/(tp+fp) and recall = tp/(tp+fn).
    pub fn from_counts(threshold: f64, tp: u64, fp: u64, fn_: u64) -> PrPoint {
        PrPoint {
            threshold,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            tp,
            fp,
            fn_,
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Points ordered by strictly increasing threshold.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
}

impl PrCurve {
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if !(w[0].threshold < w[1].threshold) {
                return Err(Error::invalid("PR curve thresholds must be strictly increasing"));
            }
        }
        Ok(())
    }
}

/// Admissibility rule for matching predicted T-bars to ground truth.
#[derive(Debug, Clone, Copy)]
pub struct MatchSpec<'a> {
    pub max_distance: f64,
    pub require_same_segment: bool,
    pub segmentation: Option<&'a LabelVolume>,
}

impl<'a> MatchSpec<'a> {
    pub fn distance_only(max_distance: f64) -> Self {
        MatchSpec {
            max_distance,
            require_same_segment: false,
            segmentation: None,
        }
    }

    pub fn same_segment(max_distance: f64, segmentation: &'a LabelVolume) -> Self {
        MatchSpec {
            max_distance,
            require_same_segment: true,
            segmentation: Some(segmentation),
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.max_distance.is_finite() || self.max_distance < 0.0 {
            return Err(Error::invalid("max_distance must be finite and >= 0"));
        }
        if self.require_same_segment && self.segmentation.is_none() {
            return Err(Error::invalid(
                "require_same_segment needs a segmentation volume",
            ));
        }
        Ok(())
    }
}

/// Result of [`match_tbars`]; indices refer to the input slices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TbarMatching {
    pub matches: Vec<(usize, usize)>,
    pub unmatched_pred: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

/// Greedy one-to-one matching of predictions to ground-truth points.
/// Admissible pairs (distance <= max, same segment if required) are taken in
/// ascending-distance order, ties broken by descending prediction confidence
/// and then lexicographic (z, y, x) of both endpoints.
pub fn match_tbars(
    pred: &[TbarPrediction],
    gt: &[Point3],
    spec: &MatchSpec,
) -> Result<TbarMatching> {
    spec.validate()?;
    if let Some(seg) = spec.segmentation {
        for p in pred.iter().map(|p| p.pos).chain(gt.iter().copied()) {
            if !seg.dims().contains(p) {
                return Err(Error::invalid(format!("point {p:?} out of bounds")));
            }
        }
    }
    let max_d2 = spec.max_distance * spec.max_distance;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, &g) in gt.iter().enumerate() {
            let d2 = p.pos.dist2(g) as f64;
            if d2 > max_d2 {
                continue;
            }
            if spec.require_same_segment {
                let seg = spec.segmentation.unwrap();
                if seg.get(p.pos) != seg.get(g) {
                    continue;
                }
            }
            pairs.push((d2, i, j));
        }
    }
    pairs.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap()
            .then(
                pred[b.1]
                    .confidence
                    .partial_cmp(&pred[a.1].confidence)
                    .unwrap(),
            )
            .then(pred[a.1].pos.zyx().cmp(&pred[b.1].pos.zyx()))
            .then(gt[a.2].zyx().cmp(&gt[b.2].zyx()))
    });
    let mut pred_used = vec![false; pred.len()];
    let mut gt_used = vec![false; gt.len()];
    let mut matches = Vec::new();
    for (_, i, j) in pairs {
        if !pred_used[i] && !gt_used[j] {
            pred_used[i] = true;
            gt_used[j] = true;
            matches.push((i, j));
        }
    }
    Ok(TbarMatching {
        matches,
        unmatched_pred: (0..pred.len()).filter(|&i| !pred_used[i]).collect(),
        unmatched_gt: (0..gt.len()).filter(|&j| !gt_used[j]).collect(),
    })
}

/// PR over a confidence-threshold sweep of the T-bar detector.
pub fn tbar_pr_curve(
    pred: &[TbarPrediction],
    gt: &[Point3],
    spec: &MatchSpec,
    thresholds: &[f64],
) -> Result<PrCurve> {
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let retained: Vec<TbarPrediction> = pred
            .iter()
            .filter(|p| p.confidence >= t)
            .copied()
            .collect();
        let m = match_tbars(&retained, gt, spec)?;
        points.push(PrPoint::from_counts(
            t,
            m.matches.len() as u64,
            m.unmatched_pred.len() as u64,
            m.unmatched_gt.len() as u64,
        ));
    }
    let curve = PrCurve { points };
    curve.validate()?;
    Ok(curve)
}

/// Weighted graph PR: tp is the per-edge min overlap, so a predicted weight 7
/// against ground-truth weight 9 misses exactly 2.
pub fn weighted_pr(pred_g: &ConnectomeGraph, gt_g: &ConnectomeGraph) -> PrPoint {
    let mut tp = 0u64;
    for e in pred_g.edge_union(gt_g) {
        tp += pred_g.weight(e.0, e.1).min(gt_g.weight(e.0, e.1));
    }
    PrPoint::from_counts(
        0.0,
        tp,
        pred_g.total_weight() - tp,
        gt_g.total_weight() - tp,
    )
}

/// Unweighted (edge-support) PR: binarize both graphs and compare supports.
pub fn unweighted_pr(pred_g: &ConnectomeGraph, gt_g: &ConnectomeGraph) -> PrPoint {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for e in pred_g.edge_union(gt_g) {
        match (pred_g.weight(e.0, e.1) > 0, gt_g.weight(e.0, e.1) > 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => unreachable!(),
        }
    }
    PrPoint::from_counts(0.0, tp, fp, fn_)
}

/// Unweighted PR after thresholding both graphs at `t`.
pub fn thresholded_pr(
    pred_g: &ConnectomeGraph,
    gt_g: &ConnectomeGraph,
    t: u64,
) -> Result<PrPoint> {
    Ok(unweighted_pr(
        &threshold_graph(pred_g, t)?,
        &threshold_graph(gt_g, t)?,
    ))
}

/// Asymmetric PR with a strong threshold t1 and a weak threshold t2 < t1:
///   recall    = |{e : p(e) >= t2 and g(e) >= t1}| / |{e : g(e) >= t1}|
///   precision = |{e : p(e) >= t1 and g(e) >= t2}| / |{e : p(e) >= t1}|
pub fn asymmetric_pr(
    pred_g: &ConnectomeGraph,
    gt_g: &ConnectomeGraph,
    t1: u64,
    t2: u64,
) -> Result<PrPoint> {
    check_asymmetric_thresholds(t1, t2)?;
    let mut recall_num = 0u64;
    let mut recall_den = 0u64;
    let mut prec_num = 0u64;
    let mut prec_den = 0u64;
    for e in pred_g.edge_union(gt_g) {
        let p = pred_g.weight(e.0, e.1);
        let g = gt_g.weight(e.0, e.1);
        recall_num += (p >= t2 && g >= t1) as u64;
        recall_den += (g >= t1) as u64;
        prec_num += (p >= t1 && g >= t2) as u64;
        prec_den += (p >= t1) as u64;
    }
    Ok(PrPoint {
        threshold: t1 as f64,
        precision: ratio(prec_num, prec_den),
        recall: ratio(recall_num, recall_den),
        tp: recall_num,
        fp: prec_den - prec_num,
        fn_: recall_den - recall_num,
    })
}

fn check_asymmetric_thresholds(t1: u64, t2: u64) -> Result<()> {
    if t2 < 1 || t1 <= t2 {
        return Err(Error::invalid("asymmetric PR requires t1 > t2 >= 1"));
    }
    Ok(())
}

/// Edge lists of spurious and missing connections at the asymmetric
/// thresholds, plus the ground-truth normalizer |{e : g(e) >= t1}|.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AddedMissed {
    pub added: Vec<(u32, u32)>,
    pub missed: Vec<(u32, u32)>,
    pub normalizer: u64,
}

/// Connections added (p >= t1, g < t2) and missed (g >= t1, p < t2).
pub fn connections_added_missed(
    pred_g: &ConnectomeGraph,
    gt_g: &ConnectomeGraph,
    t1: u64,
    t2: u64,
) -> Result<AddedMissed> {
    check_asymmetric_thresholds(t1, t2)?;
    let mut out = AddedMissed::default();
    for e in pred_g.edge_union(gt_g) {
        let p = pred_g.weight(e.0, e.1);
        let g = gt_g.weight(e.0, e.1);
        if p >= t1 && g < t2 {
            out.added.push(e);
        }
        if g >= t1 && p < t2 {
            out.missed.push(e);
        }
        out.normalizer += (g >= t1) as u64;
    }
    Ok(out)
}

/// Which graph-level metric a PSD-threshold sweep evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricMode {
    Weighted,
    Unweighted,
    Thresholded(u64),
    Asymmetric(u64, u64),
}

impl MetricMode {
    pub fn evaluate(
        &self,
        pred_g: &ConnectomeGraph,
        gt_g: &ConnectomeGraph,
        threshold: f64,
    ) -> Result<PrPoint> {
        let mut point = match self {
            MetricMode::Weighted => weighted_pr(pred_g, gt_g),
            MetricMode::Unweighted => unweighted_pr(pred_g, gt_g),
            MetricMode::Thresholded(t) => thresholded_pr(pred_g, gt_g, *t)?,
            MetricMode::Asymmetric(t1, t2) => asymmetric_pr(pred_g, gt_g, *t1, *t2)?,
        };
        point.threshold = threshold;
        Ok(point)
    }
}

/// Sweeps the PSD confidence threshold: build the predicted graph at each
/// threshold and evaluate the chosen metric against the ground-truth graph.
pub fn graph_pr_curve(
    synapses: &SynapseSet,
    labels: &LabelVolume,
    gt_g: &ConnectomeGraph,
    mode: MetricMode,
    psd_thresholds: &[f64],
) -> Result<PrCurve> {
    let points: Vec<PrPoint> = psd_thresholds
        .par_iter()
        .map(|&t| {
            let built = build_graph(synapses, labels, t)?;
            mode.evaluate(&built.graph, gt_g, t)
        })
        .collect::<Result<_>>()?;
    let curve = PrCurve { points };
    curve.validate()?;
    Ok(curve)
}

/// One Fig.-7-style scatter record per edge in the union of supports.
/// `within_band` is the half-to-double band: gt/2 <= pred <= 2*gt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterRecord {
    pub pre: u32,
    pub post: u32,
    pub gt_weight: u64,
    pub pred_weight: u64,
    pub within_band: bool,
}

pub fn count_scatter(pred_g: &ConnectomeGraph, gt_g: &ConnectomeGraph) -> Vec<ScatterRecord> {
    pred_g
        .edge_union(gt_g)
        .into_iter()
        .map(|(pre, post)| {
            let p = pred_g.weight(pre, post);
            let g = gt_g.weight(pre, post);
            ScatterRecord {
                pre,
                post,
                gt_weight: g,
                pred_weight: p,
                within_band: 2 * p >= g && p <= 2 * g,
            }
        })
        .collect()
}
