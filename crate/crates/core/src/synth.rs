//! Seeded synthetic scenes, detections, assignment problems and feature
//! maps. Everything here is deterministic in its seed.

use std::path::Path;

use nalgebra::Vector3;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assign::{AnchorPrediction, GtInstance};
use crate::dataio::kitti::{format_labels, KittiLabel};
use crate::error::{Error, Result};
use crate::eval::{EvalDetection, GroundTruthObject};
use crate::geometry::{Box2D, Box3D, CameraIntrinsics, Dimensions};
use crate::infer::FeatureMapSet;
use crate::nn::FeatureMap;

/// Height of the camera above the ground plane in metres.
pub const CAMERA_HEIGHT: f64 = 1.65;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DimRange {
    /// `[h, w, l]` lower bounds.
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma_depth: f64,
    pub sigma_dims: f64,
    pub sigma_yaw: f64,
    pub sigma_center: f64,
    /// Chance that each true object spawns an extra false positive.
    pub fp_rate: f64,
    /// Chance that each true object is missed.
    pub fn_rate: f64,
}

impl NoiseSpec {
    pub fn depth_only(sigma: f64) -> Self {
        NoiseSpec {
            sigma_depth: sigma,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sig = [self.sigma_depth, self.sigma_dims, self.sigma_yaw, self.sigma_center];
        if !sig.iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(Error::invalid("noise sigmas must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.fp_rate) || !(0.0..=1.0).contains(&self.fn_rate) {
            return Err(Error::invalid("fp_rate and fn_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_objects: usize,
    /// Range of object center depth.
    pub depth_range: [f64; 2],
    /// One entry per class.
    pub dim_ranges: Vec<DimRange>,
    pub yaw_range: [f64; 2],
    pub image_width: u32,
    pub image_height: u32,
    pub intrinsics: CameraIntrinsics,
    /// Relative frequency of occlusion states 0, 1 and 2.
    pub occlusion_weights: [f64; 3],
    pub noise: NoiseSpec,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            n_objects: 8,
            depth_range: [5.0, 45.0],
            dim_ranges: vec![
                DimRange { min: [1.4, 1.5, 3.5], max: [1.7, 1.8, 4.4] },
                DimRange { min: [1.5, 0.5, 0.6], max: [1.9, 0.8, 1.0] },
                DimRange { min: [1.5, 0.5, 1.5], max: [1.9, 0.7, 1.9] },
            ],
            yaw_range: [-std::f64::consts::PI, std::f64::consts::PI],
            image_width: 1242,
            image_height: 375,
            intrinsics: CameraIntrinsics::kitti_default(),
            occlusion_weights: [0.6, 0.25, 0.15],
            noise: NoiseSpec::default(),
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let [z0, z1] = self.depth_range;
        if !(z0.is_finite() && z1.is_finite() && z0 <= z1) {
            return Err(Error::invalid("depth_range must be ordered and finite"));
        }
        if self.dim_ranges.is_empty() {
            return Err(Error::invalid("dim_ranges is empty"));
        }
        let mut reach: f64 = 0.0;
        for r in &self.dim_ranges {
            if !(0..3).all(|i| r.min[i] > 0.0 && r.min[i] <= r.max[i]) {
                return Err(Error::invalid(format!("bad dimension range {r:?}")));
            }
            reach = reach.max(0.5 * (r.max[1].powi(2) + r.max[2].powi(2)).sqrt());
        }
        if z0 - reach <= 1.0 {
            return Err(Error::invalid(format!(
                "nearest depth {z0} leaves corners within 1 m of the camera"
            )));
        }
        if !(self.yaw_range[0] <= self.yaw_range[1]) {
            return Err(Error::invalid("yaw_range must be ordered"));
        }
        if self.image_width == 0 || self.image_height == 0 {
            return Err(Error::invalid("image size must be nonzero"));
        }
        let w = self.occlusion_weights;
        if !(w.iter().all(|x| *x >= 0.0) && w.iter().sum::<f64>() > 0.0) {
            return Err(Error::invalid("occlusion weights must be non-negative with a positive sum"));
        }
        self.noise.validate()
    }

    pub fn num_classes(&self) -> usize {
        self.dim_ranges.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub gts: Vec<GroundTruthObject>,
    pub intrinsics: CameraIntrinsics,
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Objects standing on the ground plane with their projected center inside
/// the image. Box2D is the unclipped projected corner hull; truncation is the
/// fraction of that hull outside the image.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.intrinsics;
    let (iw, ih) = (spec.image_width as f64, spec.image_height as f64);
    let occ_total: f64 = spec.occlusion_weights.iter().sum();
    let mut gts = Vec::with_capacity(spec.n_objects);
    for _ in 0..spec.n_objects {
        let class = rng.random_range(0..spec.num_classes());
        let r = spec.dim_ranges[class];
        let dims = Dimensions::new(
            uniform(&mut rng, r.min[0], r.max[0]),
            uniform(&mut rng, r.min[1], r.max[1]),
            uniform(&mut rng, r.min[2], r.max[2]),
        )?;
        let z = uniform(&mut rng, spec.depth_range[0], spec.depth_range[1]);
        let u = uniform(&mut rng, 0.05 * iw, 0.95 * iw);
        let x = (u - k.cx) * z / k.fx;
        let y = CAMERA_HEIGHT - dims.h / 2.0;
        let yaw = uniform(&mut rng, spec.yaw_range[0], spec.yaw_range[1]);
        let box3d = Box3D::from_yaw(Vector3::new(x, y, z), dims, yaw)?;
        let box2d = k.project_box(&box3d)?;
        let truncation = match box2d.clip(iw, ih) {
            Some(c) if box2d.area() > 0.0 => (1.0 - c.area() / box2d.area()).clamp(0.0, 1.0),
            _ => 1.0,
        };
        let mut pick = uniform(&mut rng, 0.0, occ_total);
        let mut occlusion = 2u8;
        for (i, w) in spec.occlusion_weights.iter().enumerate() {
            if pick < *w {
                occlusion = i as u8;
                break;
            }
            pick -= w;
        }
        gts.push(GroundTruthObject::new(class, box2d, box3d, truncation, occlusion)?);
    }
    Ok(Scene { gts, intrinsics: k })
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("validated sigma")
}

/// Confidence `2·sigmoid(−e)`: 1 at zero error, decreasing in `e`.
pub fn confidence_from_error(e: f64) -> f64 {
    2.0 / (1.0 + e.exp())
}

/// Noisy detections of `gts`. Depth, dimensions, yaw and center are jittered
/// independently; the confidence falls with the norm of the injected error.
/// False positives are placed at random depths with confidence at most 0.5.
pub fn perturb(gts: &[GroundTruthObject], noise: &NoiseSpec, seed: u64) -> Result<Vec<EvalDetection>> {
    noise.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nz, nd, ny, nc) = (
        normal(noise.sigma_depth),
        normal(noise.sigma_dims),
        normal(noise.sigma_yaw),
        normal(noise.sigma_center),
    );
    let mut out = Vec::with_capacity(gts.len());
    for g in gts {
        if noise.fn_rate > 0.0 && rng.random_bool(noise.fn_rate) {
            continue;
        }
        let d = [nz.sample(&mut rng), nd.sample(&mut rng), nd.sample(&mut rng), nd.sample(&mut rng)];
        let e_yaw = ny.sample(&mut rng);
        let e_c = [nc.sample(&mut rng), nc.sample(&mut rng)];
        let b = &g.box3d;
        let min_z = 1.0 + 0.5 * (b.dims.w.powi(2) + b.dims.l.powi(2)).sqrt();
        let center = Vector3::new(b.center.x + e_c[0], b.center.y + e_c[1], (b.center.z + d[0]).max(min_z));
        let dims = Dimensions::new(
            (b.dims.h + d[1]).max(0.1),
            (b.dims.w + d[2]).max(0.1),
            (b.dims.l + d[3]).max(0.1),
        )?;
        let err = (d.iter().chain(&e_c).map(|v| v * v).sum::<f64>() + e_yaw * e_yaw).sqrt();
        out.push(EvalDetection {
            class: g.class,
            box2d: g.box2d,
            box3d: Box3D::from_yaw(center, dims, b.rotation.yaw() + e_yaw)?,
            score: confidence_from_error(err),
        });
        if noise.fp_rate > 0.0 && rng.random_bool(noise.fp_rate) {
            let z = uniform(&mut rng, min_z + 5.0, min_z + 60.0);
            let x = uniform(&mut rng, -15.0, 15.0);
            out.push(EvalDetection {
                class: g.class,
                box2d: g.box2d,
                box3d: Box3D::from_yaw(Vector3::new(x, b.center.y, z), b.dims, uniform(&mut rng, -3.0, 3.0))?,
                score: uniform(&mut rng, 0.01, 0.5),
            });
        }
    }
    Ok(out)
}

/// Writes `NNNNNN.txt` label files for ground truth and detections.
pub fn write_kitti_scenes(
    dir: &Path,
    classes: &[String],
    scenes: &[(Vec<GroundTruthObject>, Vec<EvalDetection>)],
    which: KittiOutput,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, (gts, dets)) in scenes.iter().enumerate() {
        let labels: Vec<KittiLabel> = match which {
            KittiOutput::GroundTruth => gts
                .iter()
                .map(|g| KittiLabel::from_ground_truth(g, classes))
                .collect::<Result<_>>()?,
            KittiOutput::Detections => dets
                .iter()
                .map(|d| KittiLabel::from_detection(d, classes))
                .collect::<Result<_>>()?,
        };
        let path = dir.join(format!("{i:06}.txt"));
        std::fs::write(&path, format_labels(&labels)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KittiOutput {
    GroundTruth,
    Detections,
}

/// Small label-assignment problem on a 320×160 image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentScene {
    pub gts: Vec<GtInstance>,
    pub preds: Vec<AnchorPrediction>,
}

pub const ASSIGN_IMAGE: (f64, f64) = (320.0, 160.0);

/// Between 1 and `max_gt` objects with 2D boxes of 20–60 px and between 1
/// and `max_anchors` anchors. Each prediction is a noisy copy of a random
/// object, and half the anchors are placed inside that object's box, so
/// candidate sets are dense and overlap.
pub fn assignment_scene(seed: u64, max_gt: usize, max_anchors: usize, num_classes: usize) -> Result<AssignmentScene> {
    if max_gt == 0 || max_anchors == 0 || num_classes == 0 {
        return Err(Error::invalid("assignment scene needs objects, anchors and classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (iw, ih) = ASSIGN_IMAGE;
    let n_gt = rng.random_range(1..=max_gt);
    let n_anchor = rng.random_range(1..=max_anchors);
    let random_box3d = |rng: &mut ChaCha8Rng| -> Result<Box3D> {
        Box3D::from_yaw(
            Vector3::new(uniform(rng, -8.0, 8.0), uniform(rng, 0.5, 1.5), uniform(rng, 8.0, 40.0)),
            Dimensions::new(uniform(rng, 1.2, 2.0), uniform(rng, 0.5, 2.0), uniform(rng, 0.6, 4.5))?,
            uniform(rng, -3.1, 3.1),
        )
    };
    let mut gts = Vec::with_capacity(n_gt);
    for _ in 0..n_gt {
        let (w, h) = (uniform(&mut rng, 20.0, 60.0), uniform(&mut rng, 20.0, 60.0));
        let (x, y) = (uniform(&mut rng, 0.0, iw - w), uniform(&mut rng, 0.0, ih - h));
        gts.push(GtInstance {
            class: rng.random_range(0..num_classes),
            box2d: Box2D::new(x, y, x + w, y + h)?,
            box3d: random_box3d(&mut rng)?,
        });
    }
    let mut preds = Vec::with_capacity(n_anchor);
    for _ in 0..n_anchor {
        let src = &gts[rng.random_range(0..n_gt)];
        let anchor = if rng.random_bool(0.5) {
            let b = src.box2d;
            [uniform(&mut rng, b.x1, b.x2), uniform(&mut rng, b.y1, b.y2)]
        } else {
            [uniform(&mut rng, 0.0, iw), uniform(&mut rng, 0.0, ih)]
        };
        let jit = uniform(&mut rng, 0.0, 15.0);
        let b = src.box2d;
        let box2d = Box2D::new(
            b.x1 + uniform(&mut rng, -jit, jit),
            b.y1 + uniform(&mut rng, -jit, jit),
            b.x2 + uniform(&mut rng, 0.0, jit),
            b.y2 + uniform(&mut rng, 0.0, jit),
        )?;
        let box3d = if rng.random_bool(0.7) {
            let c = src.box3d.center;
            let s = uniform(&mut rng, 0.0, 2.0);
            Box3D::from_yaw(
                Vector3::new(c.x + uniform(&mut rng, -s, s), c.y, c.z + uniform(&mut rng, -2.0 * s, 2.0 * s)),
                src.box3d.dims.scaled(uniform(&mut rng, 0.8, 1.2)),
                src.box3d.rotation.yaw() + uniform(&mut rng, -0.5, 0.5),
            )?
        } else {
            random_box3d(&mut rng)?
        };
        let class_probs = (0..num_classes).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
        preds.push(AnchorPrediction {
            anchor,
            class_probs,
            box2d,
            box3d,
        });
    }
    Ok(AssignmentScene { gts, preds })
}

/// Uniform random features in `[-1, 1)` with a stride-16 map of half the
/// stride-8 size (rounded up).
pub fn random_feature_maps(channels: usize, h8: usize, w8: usize, seed: u64) -> Result<FeatureMapSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = |h: usize, w: usize| {
        FeatureMap::new(channels, h, w, (0..channels * h * w).map(|_| rng.random_range(-1.0f32..1.0)).collect())
    };
    let p8 = map(h8, w8)?;
    let p16 = map(h8.div_ceil(2), w8.div_ceil(2))?;
    FeatureMapSet::new(p8, p16)
}
