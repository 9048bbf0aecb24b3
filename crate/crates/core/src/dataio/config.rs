//! Run configuration: one flat, versioned JSON object. Every key is
//! optional and defaults to the values below; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assign::MatchConfig;
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::geometry::{CameraIntrinsics, Dimensions};
use crate::losses::LossWeights;
use crate::nn::OrientationMode;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,

    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub topk: usize,

    pub epsilon: f64,
    pub eta_cap: Option<f64>,

    pub lambda_d2d: f64,
    pub lambda_o2d: f64,
    pub lambda_d3d: f64,
    pub lambda_o3d: f64,
    pub lambda_rot: f64,
    pub lambda_z: f64,
    pub lambda_distill: f64,

    /// Locations kept by gated inference.
    pub gated_k: usize,
    pub orientation: OrientationMode,

    pub classes: Vec<String>,
    /// Mean `[h, w, l]` per class in metres.
    pub class_mean_dims: Vec<[f64; 3]>,
    pub iou_thresholds: Vec<f64>,

    pub image_width: u32,
    pub image_height: u32,
    /// `[fx, fy, cx, cy]`.
    pub intrinsics: [f64; 4],
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = MatchConfig::default();
        let w = LossWeights::default();
        let d = DistillConfig::default();
        let k = CameraIntrinsics::kitti_default();
        RunConfig {
            version: CONFIG_VERSION,
            alpha: m.alpha,
            beta: m.beta,
            gamma: m.gamma,
            topk: m.topk,
            epsilon: d.epsilon,
            eta_cap: d.eta_cap,
            lambda_d2d: w.d2d,
            lambda_o2d: w.o2d,
            lambda_d3d: w.d3d,
            lambda_o3d: w.o3d,
            lambda_rot: w.rot,
            lambda_z: w.z,
            lambda_distill: w.distill,
            gated_k: 50,
            orientation: OrientationMode::MultiBin,
            classes: vec!["Car".into(), "Pedestrian".into(), "Cyclist".into()],
            class_mean_dims: vec![
                [1.52563191, 1.62856739, 3.88311640],
                [1.76255119, 0.66068622, 0.84422524],
                [1.73698127, 0.59706367, 1.76282397],
            ],
            iou_thresholds: vec![0.7, 0.5, 0.5],
            image_width: 1242,
            image_height: 375,
            intrinsics: [k.fx, k.fy, k.cx, k.cy],
        }
    }
}

impl RunConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides; values are parsed as JSON and fall
    /// back to plain strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        let obj = value.as_object_mut().expect("config is an object");
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            if !obj.contains_key(key) {
                return Err(Error::Config(format!("unknown field `{key}`")));
            }
            let v = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
            obj.insert(key.to_string(), v);
        }
        let cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return fail(format!("unsupported version {}, expected {CONFIG_VERSION}", self.version));
        }
        self.match_config().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.loss_weights().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if let Some(cap) = self.eta_cap {
            if !(cap.is_finite() && cap > 0.0) {
                return fail(format!("eta_cap must be positive, got {cap}"));
            }
        }
        if self.gated_k == 0 {
            return fail("gated_k must be at least 1".into());
        }
        if self.classes.is_empty() {
            return fail("classes is empty".into());
        }
        if self.class_mean_dims.len() != self.classes.len() {
            return fail(format!(
                "{} classes but {} class_mean_dims",
                self.classes.len(),
                self.class_mean_dims.len()
            ));
        }
        self.mean_dims()?;
        self.eval_config().validate()?;
        self.camera()?;
        if self.image_width == 0 || self.image_height == 0 {
            return fail("image size must be nonzero".into());
        }
        Ok(())
    }

    pub fn match_config(&self) -> MatchConfig {
        MatchConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            topk: self.topk,
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            epsilon: self.epsilon,
            eta_cap: self.eta_cap,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            d2d: self.lambda_d2d,
            o2d: self.lambda_o2d,
            d3d: self.lambda_d3d,
            o3d: self.lambda_o3d,
            rot: self.lambda_rot,
            z: self.lambda_z,
            distill: self.lambda_distill,
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            classes: self.classes.clone(),
            iou_thresholds: self.iou_thresholds.clone(),
        }
    }

    pub fn mean_dims(&self) -> Result<Vec<Dimensions>> {
        self.class_mean_dims
            .iter()
            .map(|[h, w, l]| Dimensions::new(*h, *w, *l).map_err(|e| Error::Config(format!("class_mean_dims: {e}"))))
            .collect()
    }

    pub fn camera(&self) -> Result<CameraIntrinsics> {
        let [fx, fy, cx, cy] = self.intrinsics;
        CameraIntrinsics::new(fx, fy, cx, cy).map_err(|e| Error::Config(format!("intrinsics: {e}")))
    }
}
