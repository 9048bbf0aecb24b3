use serde::{Deserialize, Serialize};

/// Number of recall samples in the R40 protocol.
pub const RECALL_POINTS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchFlag {
    Tp,
    Fp,
    /// Matched an ignored object or too small to be evaluated.
    Ignored,
}

/// Greedy matching of detections (sorted by descending confidence) to ground
/// truth. `iou[d][g]` is the overlap of detection `d` with object `g`.
///
/// Each detection takes the highest-overlap unmatched eligible object whose
/// overlap exceeds `threshold`. Failing that, a detection overlapping an
/// ignored object, or one flagged in `det_ignored`, is dropped.
pub fn match_for_pr(iou: &[Vec<f64>], gt_ignored: &[bool], det_ignored: &[bool], threshold: f64) -> Vec<MatchFlag> {
    let mut taken = vec![false; gt_ignored.len()];
    iou.iter()
        .zip(det_ignored)
        .map(|(row, &det_skip)| {
            let mut best: Option<(usize, f64)> = None;
            let mut hits_ignored = false;
            for (g, &o) in row.iter().enumerate() {
                if o <= threshold {
                    continue;
                }
                if gt_ignored[g] {
                    hits_ignored = true;
                } else if !taken[g] && best.is_none_or(|(_, b)| o > b) {
                    best = Some((g, o));
                }
            }
            match best {
                Some((g, _)) if !det_skip => {
                    taken[g] = true;
                    MatchFlag::Tp
                }
                _ if det_skip || hits_ignored => MatchFlag::Ignored,
                _ => MatchFlag::Fp,
            }
        })
        .collect()
}

/// Interpolated precision at recalls `1/40 ..= 40/40`: the best precision
/// reached at any recall at least as high. Flags must already be in
/// descending-confidence order.
pub fn interpolated_precision(flags: &[MatchFlag], n_gt: usize) -> Vec<f64> {
    let mut curve = vec![0.0; RECALL_POINTS];
    if n_gt == 0 {
        return curve;
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    // best precision seen at each exact true-positive count
    let mut at_tp = vec![0.0f64; n_gt + 1];
    for f in flags {
        match f {
            MatchFlag::Tp => tp += 1,
            MatchFlag::Fp => fp += 1,
            MatchFlag::Ignored => continue,
        }
        let p = tp as f64 / (tp + fp) as f64;
        let slot = tp.min(n_gt);
        at_tp[slot] = at_tp[slot].max(p);
    }
    for t in (0..n_gt).rev() {
        at_tp[t] = at_tp[t].max(at_tp[t + 1]);
    }
    for (r, out) in curve.iter_mut().enumerate() {
        // smallest tp count with tp / n_gt >= (r + 1) / 40
        let need = ((r + 1) * n_gt).div_ceil(RECALL_POINTS);
        *out = at_tp[need];
    }
    curve
}

/// R40 average precision in percent.
pub fn ap_r40(flags: &[MatchFlag], n_gt: usize) -> f64 {
    let curve = interpolated_precision(flags, n_gt);
    100.0 * curve.iter().sum::<f64>() / RECALL_POINTS as f64
}
