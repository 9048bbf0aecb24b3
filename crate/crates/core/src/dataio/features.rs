//! Frozen teacher outputs for offline distillation.
//!
//! Stored in the tensor container with `kind = "teacher_features"`, an
//! `instances` meta list of `[image, instance]` ids and tensors `features`
//! `[N, 64]`, `depth` `[N]` and optionally `gt_depth` `[N]`.

use std::path::Path;

use serde_json::json;

use super::container::{Tensor, TensorContainer};
use crate::distill::FEATURE_DIM;
use crate::error::{Error, Result};

pub const FEATURES_KIND: &str = "teacher_features";

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherFeatures {
    pub instances: Vec<(usize, usize)>,
    /// One 64-vector per instance.
    pub features: Vec<Vec<f32>>,
    pub depth: Vec<f32>,
    pub gt_depth: Option<Vec<f32>>,
}

impl TeacherFeatures {
    pub fn new(
        instances: Vec<(usize, usize)>,
        features: Vec<Vec<f32>>,
        depth: Vec<f32>,
        gt_depth: Option<Vec<f32>>,
    ) -> Result<Self> {
        let n = instances.len();
        if features.len() != n || depth.len() != n {
            return Err(Error::shape(
                format!("{n} feature rows and depths"),
                format!("{} and {}", features.len(), depth.len()),
            ));
        }
        if let Some(bad) = features.iter().find(|f| f.len() != FEATURE_DIM) {
            return Err(Error::shape(format!("feature length {FEATURE_DIM}"), bad.len()));
        }
        if gt_depth.as_ref().is_some_and(|g| g.len() != n) {
            return Err(Error::shape(format!("{n} ground-truth depths"), gt_depth.map_or(0, |g| g.len())));
        }
        Ok(TeacherFeatures {
            instances,
            features,
            depth,
            gt_depth,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let n = self.len();
        let mut c = TensorContainer::new();
        c.meta.insert("kind".into(), json!(FEATURES_KIND));
        c.meta.insert("instances".into(), json!(self.instances));
        c.push(Tensor::new("features", vec![n, FEATURE_DIM], self.features.concat())?)?;
        c.push(Tensor::new("depth", vec![n], self.depth.clone())?)?;
        if let Some(g) = &self.gt_depth {
            c.push(Tensor::new("gt_depth", vec![n], g.clone())?)?;
        }
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let kind = c.meta_str("kind")?;
        if kind != FEATURES_KIND {
            return Err(Error::Container(format!("expected kind {FEATURES_KIND:?}, found {kind:?}")));
        }
        let instances: Vec<(usize, usize)> = serde_json::from_value(
            c.meta
                .get("instances")
                .cloned()
                .ok_or_else(|| Error::Container("missing meta key \"instances\"".into()))?,
        )
        .map_err(|e| Error::Container(format!("instances: {e}")))?;
        let n = instances.len();
        let features = c.expect("features", &[n, FEATURE_DIM])?;
        let depth = c.expect("depth", &[n])?;
        let gt_depth = match c.get("gt_depth") {
            Some(_) => Some(c.expect("gt_depth", &[n])?.data.clone()),
            None => None,
        };
        let known = ["features", "depth", "gt_depth"];
        if let Some(t) = c.tensors.iter().find(|t| !known.contains(&t.name.as_str())) {
            return Err(Error::Container(format!("unexpected tensor {:?}", t.name)));
        }
        TeacherFeatures::new(
            instances,
            features.data.chunks(FEATURE_DIM).map(<[f32]>::to_vec).collect(),
            depth.data.clone(),
            gt_depth,
        )
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&TensorContainer::read_file(path)?)
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write_file(path)
    }
}
