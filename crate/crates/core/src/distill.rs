//! Feature distillation between a frozen teacher on clean images and a
//! student on mixup-blended images.
//!
//! Each ground truth is matched one-to-one to a teacher prediction on its
//! clean source image and, separately, to a student prediction on the blended
//! image. The paired 64-channel depth features are aligned with an L1 loss
//! weighted per instance by the teacher's relative depth quality `η` and per
//! channel by the normalized magnitude `ω` of the final depth weights.

use serde::{Deserialize, Serialize};

use crate::assign::{assign, AnchorPrediction, GtInstance, MatchConfig, MatchMode};
use crate::error::{Error, Result};
use crate::losses::pairwise_sum;

/// Width of the depth-head features fed to the final 1×1 convolution.
pub const FEATURE_DIM: usize = 64;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_MIXUP_RATIO: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    pub epsilon: f64,
    /// Optional upper bound on `η`; unbounded when `None`.
    pub eta_cap: Option<f64>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            epsilon: DEFAULT_EPSILON,
            eta_cap: None,
        }
    }
}

/// Teacher quality `z / max(|z − ẑᵀ|, ε)`. Expects `z > 0`.
pub fn quality_eta(z: f64, z_teacher: f64, epsilon: f64) -> f64 {
    z / (z - z_teacher).abs().max(epsilon)
}

pub fn quality_eta_with(z: f64, z_teacher: f64, cfg: &DistillConfig) -> f64 {
    let eta = quality_eta(z, z_teacher, cfg.epsilon);
    match cfg.eta_cap {
        Some(cap) => eta.min(cap),
        None => eta,
    }
}

/// Per-channel importance, non-negative and summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceWeights(Vec<f64>);

impl ImportanceWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `ω_q = |w_q| / Σ|w_q'|` over the final depth weights.
pub fn importance_omega(w_final: &[f64]) -> Result<ImportanceWeights> {
    if w_final.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("depth weights".into()));
    }
    let total: f64 = pairwise_sum(&w_final.iter().map(|w| w.abs()).collect::<Vec<_>>());
    if total == 0.0 {
        return Err(Error::Degenerate("all depth weights are zero".into()));
    }
    Ok(ImportanceWeights(
        w_final.iter().map(|w| w.abs() / total).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillPair {
    pub image: usize,
    pub instance: usize,
    pub feat_teacher: Vec<f64>,
    pub feat_student: Vec<f64>,
    pub z_gt: f64,
    pub z_teacher: f64,
}

impl DistillPair {
    pub fn new(
        image: usize,
        instance: usize,
        feat_teacher: Vec<f64>,
        feat_student: Vec<f64>,
        z_gt: f64,
        z_teacher: f64,
    ) -> Result<Self> {
        for (name, f) in [("teacher", &feat_teacher), ("student", &feat_student)] {
            if f.len() != FEATURE_DIM {
                return Err(Error::shape(
                    format!("{name} feature of length {FEATURE_DIM}"),
                    f.len(),
                ));
            }
        }
        if !(z_gt > 0.0) {
            return Err(Error::invalid(format!("ground-truth depth must be positive, got {z_gt}")));
        }
        Ok(DistillPair {
            image,
            instance,
            feat_teacher,
            feat_student,
            z_gt,
            z_teacher,
        })
    }

    pub fn eta(&self, cfg: &DistillConfig) -> f64 {
        quality_eta_with(self.z_gt, self.z_teacher, cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillLoss {
    pub value: f64,
    /// Gradient w.r.t. each pair's student features.
    pub grad_student: Vec<Vec<f64>>,
}

/// Quality- and importance-weighted L1 feature loss, normalized by the number
/// of pairs.
pub fn distill_loss(pairs: &[DistillPair], omega: &ImportanceWeights, etas: &[f64]) -> Result<DistillLoss> {
    if pairs.is_empty() {
        return Err(Error::invalid("distillation loss over an empty pair list"));
    }
    if etas.len() != pairs.len() {
        return Err(Error::shape(format!("{} quality weights", pairs.len()), etas.len()));
    }
    let inv = 1.0 / pairs.len() as f64;
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut grad_student = Vec::with_capacity(pairs.len());
    for (pair, &eta) in pairs.iter().zip(etas) {
        if pair.feat_teacher.len() != omega.len() || pair.feat_student.len() != omega.len() {
            return Err(Error::shape(
                format!("features of length {}", omega.len()),
                pair.feat_student.len(),
            ));
        }
        let mut channel_terms = Vec::with_capacity(omega.len());
        let mut g = Vec::with_capacity(omega.len());
        for ((t, s), w) in pair.feat_teacher.iter().zip(&pair.feat_student).zip(omega.as_slice()) {
            let d = t - s;
            channel_terms.push(w * eta * d.abs());
            let sgn = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            g.push(-w * eta * sgn * inv);
        }
        per_pair.push(pairwise_sum(&channel_terms));
        grad_student.push(g);
    }
    Ok(DistillLoss {
        value: pairwise_sum(&per_pair) * inv,
        grad_student,
    })
}

/// Interleaved image with `channels` values per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(width * height * channels, data.len()));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixupSource {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourcedLabel<T> {
    pub source: MixupSource,
    pub label: T,
}

/// Pixelwise `r·a + (1 − r)·b`; the label set is the union of both images'
/// labels tagged with their source.
pub fn mixup_blend<T: Clone>(
    a: &Image,
    a_labels: &[T],
    b: &Image,
    b_labels: &[T],
    ratio: f32,
) -> Result<(Image, Vec<SourcedLabel<T>>)> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::shape(
            format!("{}x{}x{}", a.width, a.height, a.channels),
            format!("{}x{}x{}", b.width, b.height, b.channels),
        ));
    }
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::invalid(format!("mixup ratio {ratio} outside [0, 1]")));
    }
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| ratio * x + (1.0 - ratio) * y)
        .collect();
    let labels = a_labels
        .iter()
        .map(|l| SourcedLabel {
            source: MixupSource::A,
            label: l.clone(),
        })
        .chain(b_labels.iter().map(|l| SourcedLabel {
            source: MixupSource::B,
            label: l.clone(),
        }))
        .collect();
    Ok((
        Image {
            data,
            ..a.clone()
        },
        labels,
    ))
}

/// A ground truth on a blended image, tagged with the index of the clean
/// image it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixupGt {
    pub source: usize,
    pub gt: GtInstance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairedInstance {
    pub gt_index: usize,
    pub source: usize,
    pub teacher_anchor: usize,
    pub student_anchor: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Pairing {
    pub pairs: Vec<PairedInstance>,
    /// Ground truths lacking a teacher or a student match.
    pub unpaired: Vec<usize>,
}

/// Matches every ground truth one-to-one against the teacher's predictions
/// on its clean source image and against the student's predictions on the
/// blended image; emits a pair only when both matches exist.
pub fn pair_teacher_student(
    gts: &[MixupGt],
    teacher_preds: &[Vec<AnchorPrediction>],
    student_preds: &[AnchorPrediction],
    cfg: &MatchConfig,
) -> Result<Pairing> {
    if let Some(g) = gts.iter().find(|g| g.source >= teacher_preds.len()) {
        return Err(Error::invalid(format!(
            "ground truth refers to clean image {} but only {} teacher prediction sets were given",
            g.source,
            teacher_preds.len()
        )));
    }
    let mut teacher_anchor: Vec<Option<usize>> = vec![None; gts.len()];
    for (source, preds) in teacher_preds.iter().enumerate() {
        let members: Vec<usize> = (0..gts.len()).filter(|&i| gts[i].source == source).collect();
        let local: Vec<GtInstance> = members.iter().map(|&i| gts[i].gt.clone()).collect();
        let res = assign(&local, preds, cfg, MatchMode::OneToOne)?;
        for (local_idx, &global) in members.iter().enumerate() {
            teacher_anchor[global] = res.best_anchor(local_idx);
        }
    }
    let all: Vec<GtInstance> = gts.iter().map(|g| g.gt.clone()).collect();
    let student = assign(&all, student_preds, cfg, MatchMode::OneToOne)?;

    let mut pairing = Pairing::default();
    for (i, g) in gts.iter().enumerate() {
        match (teacher_anchor[i], student.best_anchor(i)) {
            (Some(t), Some(s)) => pairing.pairs.push(PairedInstance {
                gt_index: i,
                source: g.source,
                teacher_anchor: t,
                student_anchor: s,
            }),
            _ => pairing.unpaired.push(i),
        }
    }
    Ok(pairing)
}

/// Per-anchor depth features and predicted depths of one forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorFeatures {
    pub features: Vec<Vec<f64>>,
    pub depth: Vec<f64>,
}

/// Materializes [`DistillPair`]s for a pairing; `image` tags the batch item.
pub fn build_pairs(
    pairing: &Pairing,
    gts: &[MixupGt],
    teacher: &[AnchorFeatures],
    student: &AnchorFeatures,
    image: usize,
) -> Result<Vec<DistillPair>> {
    pairing
        .pairs
        .iter()
        .map(|p| {
            let t = teacher
                .get(p.source)
                .ok_or_else(|| Error::invalid(format!("no teacher features for image {}", p.source)))?;
            let lookup = |bank: &AnchorFeatures, anchor: usize, who: &str| {
                bank.features
                    .get(anchor)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no {who} features for anchor {anchor}")))
            };
            let z_teacher = *t
                .depth
                .get(p.teacher_anchor)
                .ok_or_else(|| Error::invalid(format!("no teacher depth for anchor {}", p.teacher_anchor)))?;
            DistillPair::new(
                image,
                p.gt_index,
                lookup(t, p.teacher_anchor, "teacher")?,
                lookup(student, p.student_anchor, "student")?,
                gts[p.gt_index].gt.box3d.center.z,
                z_teacher,
            )
        })
        .collect()
}
