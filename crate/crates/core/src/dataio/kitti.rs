use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalDetection, GroundTruthObject};
use crate::geometry::{yaw_to_observation_angle, Box2D, Box3D, CameraIntrinsics, Dimensions};

/// One object line: type, truncated, occluded, alpha, bbox (4), dimensions
/// (h, w, l), location (x, y, z of the bottom center), rotation_y and an
/// optional score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiLabel {
    pub class_name: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub bbox: [f64; 4],
    pub dims: [f64; 3],
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

fn located(source: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message: message.into(),
    }
}

const FIELD_NAMES: [&str; 16] = [
    "type", "truncated", "occluded", "alpha", "bbox_left", "bbox_top", "bbox_right", "bbox_bottom",
    "height", "width", "length", "x", "y", "z", "rotation_y", "score",
];

/// Parses one label line; `line` is the 1-based position used in errors.
pub fn parse_kitti_label(text: &str, source: &str, line: usize) -> Result<KittiLabel> {
    let fields: Vec<&str> = text.split_whitespace().collect();
    if fields.len() != 15 && fields.len() != 16 {
        return Err(located(
            source,
            line,
            format!("expected 15 or 16 fields, found {}", fields.len()),
        ));
    }
    let num = |i: usize| -> Result<f64> {
        let v: f64 = fields[i]
            .parse()
            .map_err(|_| located(source, line, format!("{} is not a number: {:?}", FIELD_NAMES[i], fields[i])))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(located(source, line, format!("{} is not finite", FIELD_NAMES[i])))
        }
    };
    let occ = num(2)?;
    if occ.fract() != 0.0 || occ.abs() > 1e6 {
        return Err(located(source, line, format!("occluded must be an integer, got {}", fields[2])));
    }
    Ok(KittiLabel {
        class_name: fields[0].to_string(),
        truncation: num(1)?,
        occlusion: occ as i32,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        dims: [num(8)?, num(9)?, num(10)?],
        location: [num(11)?, num(12)?, num(13)?],
        rotation_y: num(14)?,
        score: if fields.len() == 16 { Some(num(15)?) } else { None },
    })
}

impl KittiLabel {
    /// Canonical text form: two decimals throughout, integer occlusion and a
    /// four-decimal score so that rankings survive the round trip.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            self.class_name,
            self.truncation,
            self.occlusion,
            self.alpha,
            self.bbox[0],
            self.bbox[1],
            self.bbox[2],
            self.bbox[3],
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.location[0],
            self.location[1],
            self.location[2],
            self.rotation_y
        );
        if let Some(score) = self.score {
            s.push_str(&format!(" {score:.4}"));
        }
        s
    }

    fn box3d(&self) -> Result<Box3D> {
        let [h, w, l] = self.dims;
        let [x, y, z] = self.location;
        Box3D::from_yaw(Vector3::new(x, y - h / 2.0, z), Dimensions::new(h, w, l)?, self.rotation_y)
    }

    fn box2d(&self) -> Result<Box2D> {
        let [x1, y1, x2, y2] = self.bbox;
        Box2D::new(x1, y1, x2, y2)
    }

    fn class_index(&self, classes: &[String]) -> Option<usize> {
        classes.iter().position(|c| *c == self.class_name)
    }

    /// Ground truth for an evaluated class; `None` for other types such as
    /// `DontCare`.
    pub fn to_ground_truth(&self, classes: &[String]) -> Result<Option<GroundTruthObject>> {
        let Some(class) = self.class_index(classes) else {
            return Ok(None);
        };
        if !(0..=3).contains(&self.occlusion) {
            return Err(Error::invalid(format!("occluded {} outside 0..=3", self.occlusion)));
        }
        GroundTruthObject::new(class, self.box2d()?, self.box3d()?, self.truncation, self.occlusion as u8).map(Some)
    }

    pub fn to_detection(&self, classes: &[String]) -> Result<Option<EvalDetection>> {
        let Some(class) = self.class_index(classes) else {
            return Ok(None);
        };
        let score = self
            .score
            .ok_or_else(|| Error::invalid("detection line has no score"))?;
        Ok(Some(EvalDetection {
            class,
            box2d: self.box2d()?,
            box3d: self.box3d()?,
            score,
        }))
    }

    fn from_parts(class_name: &str, box2d: &Box2D, box3d: &Box3D, truncation: f64, occlusion: i32, score: Option<f64>) -> Self {
        let d = box3d.dims;
        let yaw = box3d.rotation.yaw();
        KittiLabel {
            class_name: class_name.to_string(),
            truncation,
            occlusion,
            alpha: yaw_to_observation_angle(yaw, &box3d.center),
            bbox: [box2d.x1, box2d.y1, box2d.x2, box2d.y2],
            dims: [d.h, d.w, d.l],
            location: [box3d.center.x, box3d.center.y + d.h / 2.0, box3d.center.z],
            rotation_y: yaw,
            score,
        }
    }

    pub fn from_ground_truth(gt: &GroundTruthObject, classes: &[String]) -> Result<Self> {
        let name = classes
            .get(gt.class)
            .ok_or_else(|| Error::invalid(format!("class index {} has no name", gt.class)))?;
        Ok(Self::from_parts(name, &gt.box2d, &gt.box3d, gt.truncation, gt.occlusion as i32, None))
    }

    /// Detection line; truncation and occlusion use the devkit's `-1`
    /// placeholders.
    pub fn from_detection(det: &EvalDetection, classes: &[String]) -> Result<Self> {
        let name = classes
            .get(det.class)
            .ok_or_else(|| Error::invalid(format!("class index {} has no name", det.class)))?;
        Ok(Self::from_parts(name, &det.box2d, &det.box3d, -1.0, -1, Some(det.score)))
    }
}

/// Parsed contents of one label file with 1-based line numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelFile {
    pub source: String,
    pub entries: Vec<(usize, KittiLabel)>,
}

impl LabelFile {
    fn convert<T>(&self, f: impl Fn(&KittiLabel) -> Result<Option<T>>) -> Result<Vec<T>> {
        let mut out = Vec::new();
        for (line, label) in &self.entries {
            match f(label) {
                Ok(Some(v)) => out.push(v),
                Ok(None) => {}
                Err(e) => return Err(located(&self.source, *line, e.to_string())),
            }
        }
        Ok(out)
    }

    pub fn ground_truths(&self, classes: &[String]) -> Result<Vec<GroundTruthObject>> {
        self.convert(|l| l.to_ground_truth(classes))
    }

    pub fn detections(&self, classes: &[String]) -> Result<Vec<EvalDetection>> {
        self.convert(|l| l.to_detection(classes))
    }
}

/// Parses a whole label file; blank lines are skipped.
pub fn parse_labels(text: &str, source: &str) -> Result<LabelFile> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        entries.push((i + 1, parse_kitti_label(line, source, i + 1)?));
    }
    Ok(LabelFile {
        source: source.to_string(),
        entries,
    })
}

pub fn format_labels<'a>(labels: impl IntoIterator<Item = &'a KittiLabel>) -> String {
    labels.into_iter().map(|l| l.to_line() + "\n").collect()
}

pub fn read_label_file(path: &Path) -> Result<LabelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text, &path.display().to_string())
}

/// `*.txt` files of a directory sorted by name.
pub fn label_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KittiCalib {
    pub intrinsics: CameraIntrinsics,
    /// Row-major 3×4 `P2`.
    pub p2: [f64; 12],
}

impl KittiCalib {
    pub fn from_intrinsics(k: CameraIntrinsics) -> Self {
        KittiCalib {
            intrinsics: k,
            p2: [k.fx, 0.0, k.cx, 0.0, 0.0, k.fy, k.cy, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    /// `P2` and an identity `R0_rect`, enough for [`parse_kitti_calib`].
    pub fn to_text(&self) -> String {
        let p2: Vec<String> = self.p2.iter().map(|v| format!("{v:e}")).collect();
        format!("P2: {}\nR0_rect: 1 0 0 0 1 0 0 0 1\n", p2.join(" "))
    }

    /// Translation column of `P2`; nonzero for rectified non-reference cameras.
    pub fn baseline_offset(&self) -> [f64; 3] {
        [self.p2[3], self.p2[7], self.p2[11]]
    }

    pub fn has_baseline_offset(&self) -> bool {
        self.baseline_offset().iter().any(|v| *v != 0.0)
    }
}

/// Reads the `P2:` row of a calibration file; other rows are ignored.
pub fn parse_kitti_calib(text: &str, source: &str) -> Result<KittiCalib> {
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        if key.trim() != "P2" {
            continue;
        }
        let values: Vec<f64> = rest
            .split_whitespace()
            .map(|t| t.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<_>>()
            .ok_or_else(|| located(source, i + 1, "P2 contains a non-numeric value"))?;
        let p2: [f64; 12] = values
            .as_slice()
            .try_into()
            .map_err(|_| located(source, i + 1, format!("P2 needs 12 values, found {}", values.len())))?;
        let intrinsics = CameraIntrinsics::new(p2[0], p2[5], p2[2], p2[6])
            .map_err(|e| located(source, i + 1, e.to_string()))?;
        return Ok(KittiCalib { intrinsics, p2 });
    }
    Err(located(source, 0, "no P2 row"))
}

pub fn read_calib_file(path: &Path) -> Result<KittiCalib> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kitti_calib(&text, &path.display().to_string())
}
