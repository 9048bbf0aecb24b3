//! KITTI-protocol average precision over 3D and bird's-eye-view overlap.
//!
//! Ground truth is split into Easy, Moderate and Hard by 2D height,
//! occlusion and truncation. Objects of the evaluated class that fail a
//! level's thresholds are ignored at that level: detections matched to them
//! count as neither true nor false positives.

mod matching;
mod report;

pub use matching::{ap_r40, interpolated_precision, match_for_pr, MatchFlag, RECALL_POINTS};
pub use report::{evaluate, ApEntry, EvalConfig, EvalReport, Metric};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box2D, Box3D};

/// Minimum 2D box height in pixels per difficulty (KITTI devkit).
pub const MIN_HEIGHT: [f64; 3] = [40.0, 25.0, 25.0];
/// Maximum occlusion state per difficulty (KITTI devkit).
pub const MAX_OCCLUSION: [u8; 3] = [0, 1, 2];
/// Maximum truncation per difficulty (KITTI devkit).
pub const MAX_TRUNCATION: [f64; 3] = [0.15, 0.30, 0.50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }

    /// Whether an object with these attributes is counted at this level.
    pub fn admits(self, height: f64, occlusion: u8, truncation: f64) -> bool {
        let i = self.index();
        height >= MIN_HEIGHT[i] && occlusion <= MAX_OCCLUSION[i] && truncation <= MAX_TRUNCATION[i]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub class: usize,
    pub box2d: Box2D,
    pub box3d: Box3D,
    /// Fraction of the object outside the image, in `[0, 1]`.
    pub truncation: f64,
    /// 0 visible, 1 partly occluded, 2 largely occluded, 3 unknown.
    pub occlusion: u8,
}

impl GroundTruthObject {
    pub fn new(class: usize, box2d: Box2D, box3d: Box3D, truncation: f64, occlusion: u8) -> Result<Self> {
        if !(0.0..=1.0).contains(&truncation) {
            return Err(Error::invalid(format!("truncation {truncation} outside [0, 1]")));
        }
        if occlusion > 3 {
            return Err(Error::invalid(format!("occlusion {occlusion} outside 0..=3")));
        }
        Ok(GroundTruthObject {
            class,
            box2d,
            box3d,
            truncation,
            occlusion,
        })
    }

    /// The strictest level this object qualifies for, or `None` when it is
    /// ignored at every level.
    pub fn difficulty(&self) -> Option<Difficulty> {
        difficulty_filter(self.box2d.height(), self.occlusion, self.truncation)
    }
}

pub fn difficulty_filter(height: f64, occlusion: u8, truncation: f64) -> Option<Difficulty> {
    Difficulty::ALL
        .into_iter()
        .find(|d| d.admits(height, occlusion, truncation))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDetection {
    pub class: usize,
    pub box2d: Box2D,
    pub box3d: Box3D,
    pub score: f64,
}
