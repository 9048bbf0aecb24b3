//! 3D-aware prediction ↔ ground-truth assignment.
//!
//! A prediction is a candidate for a ground truth when its anchor center lies
//! inside the ground-truth 2D box. Candidate pairs are scored by
//! `p^α · IoU₂D^β · max(0, MGIoU)^γ`. All pairs are ranked in one global order
//! (score descending, then anchor index, then ground-truth index) and accepted
//! greedily: a pair is kept when its anchor is still free and its ground truth
//! holds fewer than `topk` anchors. An anchor wanted by several ground truths
//! therefore goes to the higher-scoring one, and the loser falls back to its
//! next-best candidate.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_2d, Box2D, Box3D};
use crate::mgiou::mgiou_clamped;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Anchors per ground truth in one-to-many mode.
    pub topk: usize,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            alpha: 0.5,
            beta: 1.0,
            gamma: 1.0,
            topk: 10,
        }
    }
}

impl MatchConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.topk == 0 {
            return Err(Error::invalid("topk must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    OneToOne,
    OneToMany,
}

impl MatchMode {
    pub fn capacity(&self, cfg: &MatchConfig) -> usize {
        match self {
            MatchMode::OneToOne => 1,
            MatchMode::OneToMany => cfg.topk,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub class: usize,
    pub box2d: Box2D,
    pub box3d: Box3D,
}

/// Decoded prediction at one anchor location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorPrediction {
    /// Anchor center in pixels.
    pub anchor: [f64; 2],
    pub class_probs: Vec<f64>,
    pub box2d: Box2D,
    pub box3d: Box3D,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchPair {
    pub gt_index: usize,
    pub anchor_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssignmentResult {
    /// Ordered by ground-truth index, then by rank within that ground truth.
    pub pairs: Vec<MatchPair>,
    pub unmatched_gt: Vec<usize>,
}

impl AssignmentResult {
    pub fn anchors_for(&self, gt_index: usize) -> impl Iterator<Item = usize> + '_ {
        self.pairs
            .iter()
            .filter(move |p| p.gt_index == gt_index)
            .map(|p| p.anchor_index)
    }

    pub fn best_anchor(&self, gt_index: usize) -> Option<usize> {
        self.anchors_for(gt_index).next()
    }
}

/// Indices of anchor centers inside `gt` (boundaries inclusive). A
/// zero-area box has no candidates.
pub fn candidate_anchors(gt: &Box2D, centers: &[[f64; 2]]) -> Vec<usize> {
    if gt.area() <= 0.0 {
        return Vec::new();
    }
    centers
        .iter()
        .enumerate()
        .filter(|(_, c)| gt.contains(c[0], c[1]))
        .map(|(i, _)| i)
        .collect()
}

/// `p^α · iou^β`, with `0^0 = 1`.
pub fn score_2d(p: f64, iou: f64, cfg: &MatchConfig) -> f64 {
    p.powf(cfg.alpha) * iou.powf(cfg.beta)
}

/// `s2d · mgiou_pos^γ`, with `0^0 = 1`.
pub fn score_2d3d(s2d: f64, mgiou_pos: f64, cfg: &MatchConfig) -> f64 {
    s2d * mgiou_pos.powf(cfg.gamma)
}

fn class_prob(pred: &AnchorPrediction, class: usize, anchor: usize) -> Result<f64> {
    let p = *pred.class_probs.get(class).ok_or_else(|| {
        Error::invalid(format!(
            "prediction {anchor} has {} class probabilities, ground truth class is {class}",
            pred.class_probs.len()
        ))
    })?;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!(
            "class probability {p} of prediction {anchor} outside [0, 1]"
        )));
    }
    Ok(p)
}

/// Score of one ground-truth / prediction pair, with or without the 3D term.
pub fn pair_score(
    gt: &GtInstance,
    pred: &AnchorPrediction,
    anchor: usize,
    cfg: &MatchConfig,
    use_3d: bool,
) -> Result<f64> {
    let p = class_prob(pred, gt.class, anchor)?;
    let s2d = score_2d(p, iou_2d(&pred.box2d, &gt.box2d), cfg);
    if use_3d {
        Ok(score_2d3d(s2d, mgiou_clamped(&pred.box3d, &gt.box3d), cfg))
    } else {
        Ok(s2d)
    }
}

/// Strict total order on candidate pairs used for greedy acceptance:
/// higher score first, then lower anchor index, then lower gt index.
pub fn pair_rank(a: &MatchPair, b: &MatchPair) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.anchor_index.cmp(&b.anchor_index))
        .then(a.gt_index.cmp(&b.gt_index))
}

/// Every scored candidate pair, unordered.
pub fn candidate_pairs(
    gts: &[GtInstance],
    preds: &[AnchorPrediction],
    cfg: &MatchConfig,
    use_3d: bool,
) -> Result<Vec<MatchPair>> {
    let centers: Vec<[f64; 2]> = preds.iter().map(|p| p.anchor).collect();
    let mut pairs = Vec::new();
    for (gi, gt) in gts.iter().enumerate() {
        for ai in candidate_anchors(&gt.box2d, &centers) {
            pairs.push(MatchPair {
                gt_index: gi,
                anchor_index: ai,
                score: pair_score(gt, &preds[ai], ai, cfg, use_3d)?,
            });
        }
    }
    Ok(pairs)
}

fn greedy_select(mut pairs: Vec<MatchPair>, n_gt: usize, n_anchor: usize, capacity: usize) -> AssignmentResult {
    pairs.sort_by(pair_rank);
    let mut anchor_taken = vec![false; n_anchor];
    let mut per_gt: Vec<Vec<MatchPair>> = vec![Vec::new(); n_gt];
    for pair in pairs {
        if anchor_taken[pair.anchor_index] || per_gt[pair.gt_index].len() >= capacity {
            continue;
        }
        anchor_taken[pair.anchor_index] = true;
        per_gt[pair.gt_index].push(pair);
    }
    let unmatched_gt = (0..n_gt).filter(|&g| per_gt[g].is_empty()).collect();
    AssignmentResult {
        pairs: per_gt.into_iter().flatten().collect(),
        unmatched_gt,
    }
}

fn assign_impl(
    gts: &[GtInstance],
    preds: &[AnchorPrediction],
    cfg: &MatchConfig,
    mode: MatchMode,
    use_3d: bool,
) -> Result<AssignmentResult> {
    cfg.validate()?;
    let pairs = candidate_pairs(gts, preds, cfg, use_3d)?;
    Ok(greedy_select(pairs, gts.len(), preds.len(), mode.capacity(cfg)))
}

/// 2D/3D-scored assignment.
pub fn assign(
    gts: &[GtInstance],
    preds: &[AnchorPrediction],
    cfg: &MatchConfig,
    mode: MatchMode,
) -> Result<AssignmentResult> {
    assign_impl(gts, preds, cfg, mode, true)
}

/// Assignment scored by `p^α · IoU₂D^β` alone.
pub fn assign_2d(
    gts: &[GtInstance],
    preds: &[AnchorPrediction],
    cfg: &MatchConfig,
    mode: MatchMode,
) -> Result<AssignmentResult> {
    assign_impl(gts, preds, cfg, mode, false)
}

/// Independent per-image assignment; output order follows input order.
pub fn assign_batch(
    images: &[(Vec<GtInstance>, Vec<AnchorPrediction>)],
    cfg: &MatchConfig,
    mode: MatchMode,
) -> Result<Vec<AssignmentResult>> {
    images
        .par_iter()
        .map(|(g, p)| assign(g, p, cfg, mode))
        .collect()
}
