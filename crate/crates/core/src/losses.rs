//! Supervised loss terms with analytic (sub)gradients with respect to their
//! direct prediction inputs, and the weighted total.
//!
//! Per-instance terms are normalized by the number of matched instances.
//! Sums use a fixed pairwise reduction so results do not depend on how the
//! caller parallelizes upstream work.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{OrientationMultiBin, Rotation, NUM_BINS};

/// Predicted probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Channels of the multi-bin orientation head: 12 bin logits then 12 residuals.
pub const MULTIBIN_CHANNELS: usize = 2 * NUM_BINS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub d2d: f64,
    pub o2d: f64,
    pub d3d: f64,
    pub o3d: f64,
    pub rot: f64,
    pub z: f64,
    pub distill: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            d2d: 0.02,
            o2d: 0.02,
            d3d: 1.0,
            o3d: 1.0,
            rot: 1.0,
            z: 1.0,
            distill: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.d2d, self.o2d, self.d3d, self.o3d, self.rot, self.z, self.distill];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::invalid("loss weights must be finite and non-negative"))
        }
    }
}

/// Loss value with the gradient with respect to one prediction input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean-L1 result. `empty` is set when there were no matched instances.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Loss {
    pub value: f64,
    pub grad: Vec<f64>,
    pub empty: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthLoss {
    pub value: f64,
    pub grad_depth: Vec<f64>,
    pub grad_sigma: Vec<f64>,
}

/// Pairwise (tree) summation in a fixed order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let (lo, hi) = values.split_at(n / 2);
            pairwise_sum(lo) + pairwise_sum(hi)
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_len(what: &str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::shape(
            format!("{what} of length {expected}"),
            format!("length {actual}"),
        ))
    }
}

/// Summed binary cross-entropy over all levels, locations and classes.
///
/// `targets` and `preds` are the flattened score grids; gradient is w.r.t.
/// the (unclamped) predicted probabilities, zero where the clamp is active.
pub fn bce_cls(targets: &[f64], preds: &[f64]) -> Result<LossGrad> {
    check_len("prediction grid", targets.len(), preds.len())?;
    let mut terms = Vec::with_capacity(preds.len());
    let mut grad = Vec::with_capacity(preds.len());
    for (&t, &p_raw) in targets.iter().zip(preds) {
        if !(t.is_finite() && p_raw.is_finite()) {
            return Err(Error::NonFinite("classification grid".into()));
        }
        let p = p_raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        terms.push(-(t * p.ln() + (1.0 - t) * (1.0 - p).ln()));
        grad.push(if p == p_raw {
            -t / p + (1.0 - t) / (1.0 - p)
        } else {
            0.0
        });
    }
    Ok(LossGrad {
        value: pairwise_sum(&terms),
        grad,
    })
}

/// Mean absolute error over matched instances.
///
/// `gt` and `pred` hold `dim` components per instance; the normalizer is the
/// instance count and component errors are summed within an instance.
pub fn l1_term(gt: &[f64], pred: &[f64], dim: usize) -> Result<L1Loss> {
    if dim == 0 {
        return Err(Error::invalid("l1 term with zero components per instance"));
    }
    check_len("prediction vector", gt.len(), pred.len())?;
    if gt.len() % dim != 0 {
        return Err(Error::shape(format!("multiple of {dim}"), gt.len()));
    }
    let n = gt.len() / dim;
    if n == 0 {
        return Ok(L1Loss {
            value: 0.0,
            grad: Vec::new(),
            empty: true,
        });
    }
    let inv = 1.0 / n as f64;
    let diffs: Vec<f64> = gt.iter().zip(pred).map(|(g, p)| (g - p).abs()).collect();
    let grad = gt.iter().zip(pred).map(|(g, p)| sign(p - g) * inv).collect();
    Ok(L1Loss {
        value: pairwise_sum(&diffs) * inv,
        grad,
        empty: false,
    })
}

/// Laplacian aleatoric depth loss `√2·|z − ẑ|/σ̂ + ½·ln σ̂`, averaged.
pub fn depth_laplacian(z: &[f64], z_hat: &[f64], sigma_hat: &[f64]) -> Result<DepthLoss> {
    check_len("predicted depths", z.len(), z_hat.len())?;
    check_len("predicted uncertainties", z.len(), sigma_hat.len())?;
    if let Some(s) = sigma_hat.iter().find(|s| !(**s > 0.0)) {
        return Err(Error::invalid(format!("depth uncertainty must be positive, got {s}")));
    }
    let n = z.len();
    if n == 0 {
        return Ok(DepthLoss {
            value: 0.0,
            grad_depth: Vec::new(),
            grad_sigma: Vec::new(),
        });
    }
    let inv = 1.0 / n as f64;
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut terms = Vec::with_capacity(n);
    let mut grad_depth = Vec::with_capacity(n);
    let mut grad_sigma = Vec::with_capacity(n);
    for i in 0..n {
        let (d, s) = (z[i] - z_hat[i], sigma_hat[i]);
        terms.push(sqrt2 * d.abs() / s + 0.5 * s.ln());
        grad_depth.push(-sqrt2 * sign(d) / s * inv);
        grad_sigma.push((-sqrt2 * d.abs() / (s * s) + 0.5 / s) * inv);
    }
    Ok(DepthLoss {
        value: pairwise_sum(&terms) * inv,
        grad_depth,
        grad_sigma,
    })
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Multi-bin orientation loss: bin cross-entropy plus L1 on the residual of
/// the ground-truth bin only. `pred` holds 24 values per instance.
pub fn orientation_multibin_loss(gt: &[OrientationMultiBin], pred: &[f64]) -> Result<LossGrad> {
    check_len("multi-bin predictions", gt.len() * MULTIBIN_CHANNELS, pred.len())?;
    if gt.is_empty() {
        return Ok(LossGrad {
            value: 0.0,
            grad: Vec::new(),
        });
    }
    let inv = 1.0 / gt.len() as f64;
    let mut terms = Vec::with_capacity(gt.len());
    let mut grad = vec![0.0; pred.len()];
    for (i, target) in gt.iter().enumerate() {
        if target.bin_index >= NUM_BINS {
            return Err(Error::invalid(format!("bin index {} out of range", target.bin_index)));
        }
        let chunk = &pred[i * MULTIBIN_CHANNELS..(i + 1) * MULTIBIN_CHANNELS];
        let (logits, residuals) = chunk.split_at(NUM_BINS);
        let logp = log_softmax(logits);
        let res_err = residuals[target.bin_index] - target.residual;
        terms.push(-logp[target.bin_index] + res_err.abs());
        let g = &mut grad[i * MULTIBIN_CHANNELS..(i + 1) * MULTIBIN_CHANNELS];
        for b in 0..NUM_BINS {
            let onehot = if b == target.bin_index { 1.0 } else { 0.0 };
            g[b] = (logp[b].exp() - onehot) * inv;
        }
        g[NUM_BINS + target.bin_index] = sign(res_err) * inv;
    }
    Ok(LossGrad {
        value: pairwise_sum(&terms) * inv,
        grad,
    })
}

/// Entrywise L1 between allocentric rotation matrices, averaged over
/// instances. The gradient is w.r.t. the 9 predicted entries (row-major).
pub fn orientation_so3_loss(gt: &[Rotation], pred: &[Rotation]) -> Result<LossGrad> {
    check_len("predicted rotations", gt.len(), pred.len())?;
    let entries: Vec<f64> = pred.iter().flat_map(|r| r.rows().into_iter().flatten()).collect();
    orientation_so3_loss_entries(gt, &entries)
}

/// As [`orientation_so3_loss`] with the prediction given as 9 raw
/// row-major entries per instance, not necessarily orthonormal.
pub fn orientation_so3_loss_entries(gt: &[Rotation], pred: &[f64]) -> Result<LossGrad> {
    check_len("predicted rotation entries", 9 * gt.len(), pred.len())?;
    if gt.is_empty() {
        return Ok(LossGrad {
            value: 0.0,
            grad: Vec::new(),
        });
    }
    if pred.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predicted rotation".into()));
    }
    let inv = 1.0 / gt.len() as f64;
    let mut terms = Vec::with_capacity(gt.len());
    let mut grad = Vec::with_capacity(pred.len());
    for (g, p) in gt.iter().zip(pred.chunks(9)) {
        let g = g.rows();
        let mut entry_terms = [0.0; 9];
        for r in 0..3 {
            for c in 0..3 {
                let d = p[r * 3 + c] - g[r][c];
                entry_terms[r * 3 + c] = d.abs();
                grad.push(sign(d) * inv);
            }
        }
        terms.push(pairwise_sum(&entry_terms));
    }
    Ok(LossGrad {
        value: pairwise_sum(&terms) * inv,
        grad,
    })
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub cls: f64,
    pub d2d: f64,
    pub o2d: f64,
    pub d3d: f64,
    pub o3d: f64,
    pub rot: f64,
    pub z: f64,
    pub distill: f64,
}

pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    let named = [
        ("cls", c.cls),
        ("d2d", c.d2d),
        ("o2d", c.o2d),
        ("d3d", c.d3d),
        ("o3d", c.o3d),
        ("rot", c.rot),
        ("z", c.z),
        ("distill", c.distill),
    ];
    if let Some((name, _)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("loss component {name}")));
    }
    w.validate()?;
    Ok(c.cls
        + w.d2d * c.d2d
        + w.o2d * c.o2d
        + w.d3d * c.d3d
        + w.o3d * c.o3d
        + w.rot * c.rot
        + w.z * c.z
        + w.distill * c.distill)
}
