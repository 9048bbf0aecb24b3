//! Confidence-gated 3D inference and its dense reference.
//!
//! The gated path runs the classification head densely, keeps the top-k
//! locations, gathers the 3×3 input patch around each and evaluates the
//! regression heads on those patches only. Because every head is a single
//! 3×3 conv followed by 1×1 convs, and both paths share one summation order,
//! the gated outputs are bit-identical to reading the dense maps at the same
//! locations.

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    allocentric_to_egocentric, gram_schmidt_6d, observation_angle_to_yaw, Box2D, Box3D,
    CameraIntrinsics, Dimensions, OrientationMultiBin, Rotation, NUM_BINS,
};
use crate::nn::{
    head_forward, head_forward_tapped, DetectorHeads, FeatureMap, HeadMacReport, HeadParams,
    OrientationMode,
};

pub const STRIDES: [u32; 2] = [8, 16];

/// Depth and size floors applied while decoding raw head outputs.
pub const MIN_DEPTH: f64 = 1e-3;
pub const MIN_DIM: f64 = 1e-3;

/// Neck features at strides 8 and 16.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapSet {
    pub p8: FeatureMap,
    pub p16: FeatureMap,
}

impl FeatureMapSet {
    pub fn new(p8: FeatureMap, p16: FeatureMap) -> Result<Self> {
        if p8.channels != p16.channels {
            return Err(Error::shape(
                format!("{} channels at stride 16", p8.channels),
                p16.channels,
            ));
        }
        Ok(FeatureMapSet { p8, p16 })
    }

    pub fn channels(&self) -> usize {
        self.p8.channels
    }

    pub fn level(&self, level: usize) -> &FeatureMap {
        match level {
            0 => &self.p8,
            _ => &self.p16,
        }
    }

    pub fn level_sizes(&self) -> [(usize, usize); 2] {
        [
            (self.p8.height, self.p8.width),
            (self.p16.height, self.p16.width),
        ]
    }

    pub fn total_locations(&self) -> usize {
        self.p8.locations() + self.p16.locations()
    }
}

/// Per-level sigmoid class scores, one channel per class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMaps {
    pub levels: [FeatureMap; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectedCenter {
    /// 0 for stride 8, 1 for stride 16.
    pub level: usize,
    pub stride: u32,
    pub row: usize,
    pub col: usize,
    /// Index into the stride-8-then-stride-16 concatenation.
    pub flat_index: usize,
    pub class: usize,
    pub score: f32,
}

/// Raw head outputs at one selected location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawOutput {
    pub offset2d: Vec<f32>,
    pub size2d: Vec<f32>,
    pub offset3d: Vec<f32>,
    pub size3d: Vec<f32>,
    pub depth: f32,
    pub uncertainty: f32,
    pub orientation: Vec<f32>,
    /// 64-channel activation entering the depth head's final 1×1 conv.
    pub depth_features: Vec<f32>,
}

impl RawOutput {
    fn values(&self) -> impl Iterator<Item = f32> + '_ {
        self.offset2d
            .iter()
            .chain(&self.size2d)
            .chain(&self.offset3d)
            .chain(&self.size3d)
            .chain(std::iter::once(&self.depth))
            .chain(std::iter::once(&self.uncertainty))
            .chain(&self.orientation)
            .chain(&self.depth_features)
            .copied()
    }

    pub fn bitwise_eq(&self, other: &RawOutput) -> bool {
        let a: Vec<u32> = self.values().map(f32::to_bits).collect();
        let b: Vec<u32> = other.values().map(f32::to_bits).collect();
        a == b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: usize,
    pub confidence: f64,
    pub box2d: Box2D,
    pub box3d: Box3D,
    pub sigma: f64,
    pub center: SelectedCenter,
}

impl Detection {
    fn bits(&self) -> Vec<u64> {
        let b = &self.box3d;
        let mut v = vec![
            self.class as u64,
            self.confidence.to_bits(),
            self.sigma.to_bits(),
            self.box2d.x1.to_bits(),
            self.box2d.y1.to_bits(),
            self.box2d.x2.to_bits(),
            self.box2d.y2.to_bits(),
            b.dims.h.to_bits(),
            b.dims.w.to_bits(),
            b.dims.l.to_bits(),
            self.center.flat_index as u64,
        ];
        v.extend(b.center.iter().map(|x| x.to_bits()));
        v.extend(b.rotation.matrix().iter().map(|x| x.to_bits()));
        v
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DetectionSet(pub Vec<Detection>);

impl DetectionSet {
    /// Exact equality of every field's bit pattern.
    pub fn bitwise_eq(&self, other: &DetectionSet) -> bool {
        self.0.len() == other.0.len()
            && self.0.iter().zip(&other.0).all(|(a, b)| a.bits() == b.bits())
    }

    /// Largest absolute difference over all numeric fields; infinite when
    /// the sets differ structurally.
    pub fn max_abs_diff(&self, other: &DetectionSet) -> f64 {
        if self.0.len() != other.0.len() {
            return f64::INFINITY;
        }
        let mut worst: f64 = 0.0;
        for (a, b) in self.0.iter().zip(&other.0) {
            if a.class != b.class || a.center != b.center {
                return f64::INFINITY;
            }
            let pairs = [
                (a.confidence, b.confidence),
                (a.sigma, b.sigma),
                (a.box2d.x1, b.box2d.x1),
                (a.box2d.y1, b.box2d.y1),
                (a.box2d.x2, b.box2d.x2),
                (a.box2d.y2, b.box2d.y2),
                (a.box3d.dims.h, b.box3d.dims.h),
                (a.box3d.dims.w, b.box3d.dims.w),
                (a.box3d.dims.l, b.box3d.dims.l),
            ];
            for (x, y) in pairs {
                worst = worst.max((x - y).abs());
            }
            worst = worst.max((a.box3d.center - b.box3d.center).amax());
            worst = worst.max((a.box3d.rotation.matrix() - b.box3d.rotation.matrix()).amax());
        }
        worst
    }
}

/// Inputs to decoding beyond the raw head outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub intrinsics: CameraIntrinsics,
    /// Mean `(h, w, l)` per class; predicted sizes are offsets to these.
    pub class_mean_dims: Vec<Dimensions>,
    pub orientation_mode: OrientationMode,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Dense classification scores over both levels.
pub fn dense_classify(features: &FeatureMapSet, heads: &DetectorHeads) -> Result<ScoreMaps> {
    let run = |map: &FeatureMap| -> Result<FeatureMap> {
        let mut out = head_forward(map, &heads.cls, heads.activation)?;
        out.data.iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(out)
    };
    Ok(ScoreMaps {
        levels: [run(&features.p8)?, run(&features.p16)?],
    })
}

/// Top-k locations by max-over-class score across the stride-8 then
/// stride-16 concatenation. Ties go to the lower flat index; when `k`
/// exceeds the number of locations every location is returned.
pub fn topk_select(scores: &ScoreMaps, k: usize) -> Result<Vec<SelectedCenter>> {
    if k == 0 {
        return Err(Error::invalid("top-k needs k >= 1"));
    }
    let mut all = Vec::new();
    let mut flat = 0usize;
    for (level, map) in scores.levels.iter().enumerate() {
        for row in 0..map.height {
            for col in 0..map.width {
                let mut best = (0usize, f32::NEG_INFINITY);
                for c in 0..map.channels {
                    let s = map.get(c, row, col);
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                all.push(SelectedCenter {
                    level,
                    stride: STRIDES[level],
                    row,
                    col,
                    flat_index: flat,
                    class: best.0,
                    score: best.1,
                });
                flat += 1;
            }
        }
    }
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.flat_index.cmp(&b.flat_index)));
    all.truncate(k);
    Ok(all)
}

/// The `C × 3 × 3` neighborhood of each center, zero outside its map.
pub fn extract_patches(features: &FeatureMapSet, centers: &[SelectedCenter]) -> Result<Vec<FeatureMap>> {
    centers
        .iter()
        .map(|c| {
            let map = features.level(c.level);
            if c.row >= map.height || c.col >= map.width {
                return Err(Error::invalid(format!(
                    "center ({}, {}) outside the {}x{} stride-{} map",
                    c.row, c.col, map.height, map.width, c.stride
                )));
            }
            let mut patch = FeatureMap::zeros(map.channels, 3, 3);
            for ch in 0..map.channels {
                for dy in 0..3 {
                    for dx in 0..3 {
                        let v = map.get_padded(ch, c.row as isize + dy as isize - 1, c.col as isize + dx as isize - 1);
                        let i = patch.index(ch, dy, dx);
                        patch.data[i] = v;
                    }
                }
            }
            Ok(patch)
        })
        .collect()
}

fn eval_on_patch(head: &HeadParams, patch: &FeatureMap, heads: &DetectorHeads) -> (Vec<f32>, Vec<f32>) {
    head.eval_point(|ic, dy, dx| patch.get_padded(ic, 1 + dy, 1 + dx), heads.activation)
}

/// Regression heads evaluated once per patch.
pub fn gated_heads(patches: &[FeatureMap], heads: &DetectorHeads) -> Vec<RawOutput> {
    patches
        .iter()
        .map(|p| {
            let (depth_features, depth) = eval_on_patch(&heads.depth, p, heads);
            RawOutput {
                offset2d: eval_on_patch(&heads.offset2d, p, heads).1,
                size2d: eval_on_patch(&heads.size2d, p, heads).1,
                offset3d: eval_on_patch(&heads.offset3d, p, heads).1,
                size3d: eval_on_patch(&heads.size3d, p, heads).1,
                depth: depth[0],
                uncertainty: eval_on_patch(&heads.uncertainty, p, heads).1[0],
                orientation: eval_on_patch(&heads.orientation, p, heads).1,
                depth_features,
            }
        })
        .collect()
}

/// Dense maps of every regression head for one level.
pub struct DenseLevelOutputs {
    pub offset2d: FeatureMap,
    pub size2d: FeatureMap,
    pub offset3d: FeatureMap,
    pub size3d: FeatureMap,
    pub depth: FeatureMap,
    pub depth_features: FeatureMap,
    pub uncertainty: FeatureMap,
    pub orientation: FeatureMap,
}

pub fn dense_heads(map: &FeatureMap, heads: &DetectorHeads) -> Result<DenseLevelOutputs> {
    let act = heads.activation;
    let (depth_features, depth) = head_forward_tapped(map, &heads.depth, act)?;
    Ok(DenseLevelOutputs {
        offset2d: head_forward(map, &heads.offset2d, act)?,
        size2d: head_forward(map, &heads.size2d, act)?,
        offset3d: head_forward(map, &heads.offset3d, act)?,
        size3d: head_forward(map, &heads.size3d, act)?,
        depth,
        depth_features,
        uncertainty: head_forward(map, &heads.uncertainty, act)?,
        orientation: head_forward(map, &heads.orientation, act)?,
    })
}

fn gather_dense(levels: &[DenseLevelOutputs; 2], centers: &[SelectedCenter]) -> Vec<RawOutput> {
    centers
        .iter()
        .map(|c| {
            let d = &levels[c.level];
            RawOutput {
                offset2d: d.offset2d.pixel(c.row, c.col),
                size2d: d.size2d.pixel(c.row, c.col),
                offset3d: d.offset3d.pixel(c.row, c.col),
                size3d: d.size3d.pixel(c.row, c.col),
                depth: d.depth.get(0, c.row, c.col),
                uncertainty: d.uncertainty.get(0, c.row, c.col),
                orientation: d.orientation.pixel(c.row, c.col),
                depth_features: d.depth_features.pixel(c.row, c.col),
            }
        })
        .collect()
}

fn finite(what: &str, values: &[f32]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Turns raw head outputs into boxes. Offsets and 2D sizes are in grid cells
/// and scale with the stride; 3D sizes are offsets to the class mean.
pub fn decode_detections(raw: &[RawOutput], centers: &[SelectedCenter], cfg: &DecodeConfig) -> Result<DetectionSet> {
    if raw.len() != centers.len() {
        return Err(Error::shape(format!("{} raw outputs", centers.len()), raw.len()));
    }
    let mut out = Vec::with_capacity(raw.len());
    for (r, c) in raw.iter().zip(centers) {
        finite("raw head outputs", &r.values().collect::<Vec<_>>())?;
        let s = c.stride as f64;
        let ax = s * (c.col as f64 + 0.5);
        let ay = s * (c.row as f64 + 0.5);

        let cx2 = ax + r.offset2d[0] as f64 * s;
        let cy2 = ay + r.offset2d[1] as f64 * s;
        let h2 = s * (r.size2d[0] as f64).max(0.0);
        let w2 = s * (r.size2d[1] as f64).max(0.0);
        let box2d = Box2D::from_center_size(cx2, cy2, w2, h2)?;

        let u = ax + r.offset3d[0] as f64 * s;
        let v = ay + r.offset3d[1] as f64 * s;
        let depth = (r.depth as f64).max(MIN_DEPTH);
        let sigma = (r.uncertainty as f64).exp();
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::NonFinite("decoded depth uncertainty".into()));
        }
        let mean = cfg.class_mean_dims.get(c.class).ok_or_else(|| {
            Error::invalid(format!("no mean dimensions configured for class {}", c.class))
        })?;
        let dims = Dimensions::new(
            (mean.h + r.size3d[0] as f64).max(MIN_DIM),
            (mean.w + r.size3d[1] as f64).max(MIN_DIM),
            (mean.l + r.size3d[2] as f64).max(MIN_DIM),
        )?;
        let center: Vector3<f64> = cfg.intrinsics.backproject(u, v, depth)?;
        let rotation = decode_orientation(&r.orientation, &center, cfg.orientation_mode)?;
        out.push(Detection {
            class: c.class,
            confidence: c.score as f64,
            box2d,
            box3d: Box3D::new(center, dims, rotation)?,
            sigma,
            center: *c,
        });
    }
    Ok(DetectionSet(out))
}

fn decode_orientation(raw: &[f32], center: &Vector3<f64>, mode: OrientationMode) -> Result<Rotation> {
    match mode {
        OrientationMode::MultiBin => {
            if raw.len() != 2 * NUM_BINS {
                return Err(Error::shape(2 * NUM_BINS, raw.len()));
            }
            let mut bin = 0;
            for i in 1..NUM_BINS {
                if raw[i] > raw[bin] {
                    bin = i;
                }
            }
            let alpha = OrientationMultiBin {
                bin_index: bin,
                residual: raw[NUM_BINS + bin] as f64,
            }
            .decode();
            Ok(Rotation::from_yaw(observation_angle_to_yaw(alpha, center)))
        }
        OrientationMode::So3 => {
            if raw.len() != 6 {
                return Err(Error::shape(6, raw.len()));
            }
            let v: [f64; 6] = std::array::from_fn(|i| raw[i] as f64);
            allocentric_to_egocentric(&gram_schmidt_6d(&v)?, center)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferMode {
    Dense,
    Gated,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StageTimings {
    pub classification: Duration,
    pub topk: Duration,
    pub patch_extraction: Duration,
    pub regression_heads: Duration,
    pub decoding: Duration,
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub detections: DetectionSet,
    pub centers: Vec<SelectedCenter>,
    pub raw: Vec<RawOutput>,
    pub macs: HeadMacReport,
    pub timings: StageTimings,
}

/// End-to-end inference in either mode; both return identical detections.
pub fn infer(
    features: &FeatureMapSet,
    heads: &DetectorHeads,
    k: usize,
    mode: InferMode,
    cfg: &DecodeConfig,
) -> Result<InferenceOutput> {
    if features.channels() != heads.in_channels {
        return Err(Error::shape(
            format!("{} feature channels", heads.in_channels),
            features.channels(),
        ));
    }
    if cfg.orientation_mode != heads.orientation_mode {
        return Err(Error::invalid("decode orientation mode differs from the heads"));
    }
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let scores = dense_classify(features, heads)?;
    timings.classification = t.elapsed();

    let t = Instant::now();
    let centers = topk_select(&scores, k)?;
    timings.topk = t.elapsed();

    let raw = match mode {
        InferMode::Gated => {
            let t = Instant::now();
            let patches = extract_patches(features, &centers)?;
            timings.patch_extraction = t.elapsed();
            let t = Instant::now();
            let raw = gated_heads(&patches, heads);
            timings.regression_heads = t.elapsed();
            raw
        }
        InferMode::Dense => {
            let t = Instant::now();
            let levels = [dense_heads(&features.p8, heads)?, dense_heads(&features.p16, heads)?];
            let raw = gather_dense(&levels, &centers);
            timings.regression_heads = t.elapsed();
            raw
        }
    };

    let t = Instant::now();
    let detections = decode_detections(&raw, &centers, cfg)?;
    timings.decoding = t.elapsed();

    let mut macs = HeadMacReport::new(heads, &features.level_sizes(), k);
    if mode == InferMode::Dense {
        macs.regression_gated = macs.regression_dense;
    }
    Ok(InferenceOutput {
        detections,
        centers,
        raw,
        macs,
        timings,
    })
}
