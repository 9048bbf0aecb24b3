use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::{ap_r40, interpolated_precision, match_for_pr, MatchFlag, RECALL_POINTS};
use super::{Difficulty, EvalDetection, GroundTruthObject, MIN_HEIGHT};
use crate::error::{Error, Result};
use crate::geometry::{iou_3d, rotated_iou_bev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "3d")]
    ThreeD,
    #[serde(rename = "bev")]
    Bev,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::ThreeD, Metric::Bev];

    pub fn name(self) -> &'static str {
        match self {
            Metric::ThreeD => "3d",
            Metric::Bev => "bev",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub classes: Vec<String>,
    /// Overlap threshold per class, same order as `classes`.
    pub iou_thresholds: Vec<f64>,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.len() != self.iou_thresholds.len() {
            return Err(Error::Config(format!(
                "{} classes but {} iou thresholds",
                self.classes.len(),
                self.iou_thresholds.len()
            )));
        }
        if let Some(t) = self.iou_thresholds.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::Config(format!("iou threshold {t} outside [0, 1)")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApEntry {
    pub class: String,
    pub difficulty: Difficulty,
    pub metric: Metric,
    /// Percent in `[0, 100]`; 0 when there is no eligible ground truth.
    pub ap: f64,
    pub n_gt: usize,
    pub n_tp: usize,
    pub n_fp: usize,
    /// Interpolated precision at recalls `1/40 ..= 40/40`.
    pub precision: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub num_images: usize,
    pub entries: Vec<ApEntry>,
}

impl EvalReport {
    pub fn get(&self, class: &str, difficulty: Difficulty, metric: Metric) -> Option<&ApEntry> {
        self.entries
            .iter()
            .find(|e| e.class == class && e.difficulty == difficulty && e.metric == metric)
    }

    /// Mean AP over classes with at least one eligible object.
    pub fn mean_ap(&self, difficulty: Difficulty, metric: Metric) -> Option<f64> {
        let v: Vec<f64> = self
            .entries
            .iter()
            .filter(|e| e.difficulty == difficulty && e.metric == metric && e.n_gt > 0)
            .map(|e| e.ap)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// One row per entry and recall sample.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,difficulty,metric,recall,precision\n");
        for e in &self.entries {
            for (i, p) in e.precision.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{:.6},{:.6}",
                    e.class,
                    e.difficulty.name(),
                    e.metric.name(),
                    (i + 1) as f64 / RECALL_POINTS as f64,
                    p
                );
            }
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<12} {:<6} {:>8} {:>8} {:>8}\n", "class", "metric", "easy", "mod", "hard");
        let mut classes: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !classes.contains(&e.class.as_str()) {
                classes.push(&e.class);
            }
        }
        for class in classes {
            for metric in Metric::ALL {
                let cell = |d| match self.get(class, d, metric) {
                    Some(e) if e.n_gt > 0 => format!("{:.2}", e.ap),
                    _ => "-".to_string(),
                };
                let _ = writeln!(
                    out,
                    "{:<12} {:<6} {:>8} {:>8} {:>8}",
                    class,
                    metric.name(),
                    cell(Difficulty::Easy),
                    cell(Difficulty::Moderate),
                    cell(Difficulty::Hard)
                );
            }
        }
        out
    }
}

/// Scored flags and eligible-object count for one (class, metric, difficulty).
#[derive(Default)]
struct Tally {
    scored: Vec<(f64, MatchFlag)>,
    n_gt: usize,
}

fn cell(class: usize, metric: Metric, d: Difficulty) -> usize {
    (class * 2 + metric as usize) * 3 + d.index()
}

fn evaluate_image(
    dets: &[EvalDetection],
    gts: &[GroundTruthObject],
    cfg: &EvalConfig,
) -> Result<Vec<Tally>> {
    let n_classes = cfg.classes.len();
    let mut tallies: Vec<Tally> = (0..n_classes * 6).map(|_| Tally::default()).collect();
    for class in 0..n_classes {
        let mut cd: Vec<&EvalDetection> = dets.iter().filter(|d| d.class == class).collect();
        cd.sort_by(|a, b| b.score.total_cmp(&a.score));
        let cg: Vec<&GroundTruthObject> = gts.iter().filter(|g| g.class == class).collect();
        for metric in Metric::ALL {
            let iou = cd
                .iter()
                .map(|d| {
                    cg.iter()
                        .map(|g| match metric {
                            Metric::ThreeD => iou_3d(&d.box3d, &g.box3d),
                            Metric::Bev => rotated_iou_bev(&d.box3d, &g.box3d),
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            for d in Difficulty::ALL {
                let gt_ignored: Vec<bool> = cg
                    .iter()
                    .map(|g| !d.admits(g.box2d.height(), g.occlusion, g.truncation))
                    .collect();
                let det_ignored: Vec<bool> = cd
                    .iter()
                    .map(|x| x.box2d.height() < MIN_HEIGHT[d.index()])
                    .collect();
                let flags = match_for_pr(&iou, &gt_ignored, &det_ignored, cfg.iou_thresholds[class]);
                let t = &mut tallies[cell(class, metric, d)];
                t.n_gt = gt_ignored.iter().filter(|i| !**i).count();
                t.scored = cd.iter().map(|x| x.score).zip(flags).collect();
            }
        }
    }
    Ok(tallies)
}

/// Full evaluation over paired per-image detection and ground-truth lists.
/// Images are processed in parallel and merged in input order.
pub fn evaluate(
    detections: &[Vec<EvalDetection>],
    ground_truth: &[Vec<GroundTruthObject>],
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    if detections.len() != ground_truth.len() {
        return Err(Error::shape(
            format!("{} detection lists", ground_truth.len()),
            detections.len(),
        ));
    }
    let n_classes = cfg.classes.len();
    for (i, (ds, gs)) in detections.iter().zip(ground_truth).enumerate() {
        let bad = ds.iter().map(|d| d.class).chain(gs.iter().map(|g| g.class)).find(|c| *c >= n_classes);
        if let Some(c) = bad {
            return Err(Error::invalid(format!(
                "image {i}: class index {c} not in the {n_classes} configured classes"
            )));
        }
        if let Some(d) = ds.iter().find(|d| !d.score.is_finite()) {
            return Err(Error::NonFinite(format!("image {i}: detection score {}", d.score)));
        }
    }

    let per_image: Vec<Vec<Tally>> = detections
        .par_iter()
        .zip(ground_truth.par_iter())
        .map(|(d, g)| evaluate_image(d, g, cfg))
        .collect::<Result<_>>()?;

    let mut entries = Vec::with_capacity(n_classes * 6);
    for (class, name) in cfg.classes.iter().enumerate() {
        for d in Difficulty::ALL {
            for metric in Metric::ALL {
                let idx = cell(class, metric, d);
                let mut n_gt = 0;
                let mut scored = Vec::new();
                for img in &per_image {
                    n_gt += img[idx].n_gt;
                    scored.extend_from_slice(&img[idx].scored);
                }
                // stable: equal scores keep image then detection order
                scored.sort_by(|a, b| b.0.total_cmp(&a.0));
                let flags: Vec<MatchFlag> = scored.iter().map(|s| s.1).collect();
                entries.push(ApEntry {
                    class: name.clone(),
                    difficulty: d,
                    metric,
                    ap: ap_r40(&flags, n_gt),
                    n_gt,
                    n_tp: flags.iter().filter(|f| **f == MatchFlag::Tp).count(),
                    n_fp: flags.iter().filter(|f| **f == MatchFlag::Fp).count(),
                    precision: interpolated_precision(&flags, n_gt),
                });
            }
        }
    }
    Ok(EvalReport {
        num_images: detections.len(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Box2D, Box3D, Dimensions};
    use nalgebra::Vector3;

    fn cfg() -> EvalConfig {
        EvalConfig {
            classes: vec!["Car".into()],
            iou_thresholds: vec![0.7],
        }
    }

    fn gt(x: f64, z: f64) -> GroundTruthObject {
        let b3 = Box3D::from_yaw(Vector3::new(x, 1.0, z), Dimensions::new(1.5, 1.6, 3.9).unwrap(), 0.3).unwrap();
        GroundTruthObject::new(0, Box2D::new(0.0, 0.0, 50.0, 60.0).unwrap(), b3, 0.0, 0).unwrap()
    }

    fn det(g: &GroundTruthObject, score: f64) -> EvalDetection {
        EvalDetection {
            class: g.class,
            box2d: g.box2d,
            box3d: g.box3d.clone(),
            score,
        }
    }

    #[test]
    fn perfect_run_is_100() {
        let gts = vec![vec![gt(0.0, 10.0), gt(5.0, 20.0)], vec![gt(-3.0, 15.0)]];
        let dets: Vec<Vec<EvalDetection>> = gts.iter().map(|v| v.iter().map(|g| det(g, 1.0)).collect()).collect();
        let r = evaluate(&dets, &gts, &cfg()).unwrap();
        assert_eq!(r.entries.len(), 6);
        assert!(r.entries.iter().all(|e| e.ap == 100.0 && e.n_gt == 3));
    }

    #[test]
    fn empty_dataset() {
        let r = evaluate(&[], &[], &cfg()).unwrap();
        assert!(r.entries.iter().all(|e| e.n_gt == 0 && e.ap == 0.0));
        assert_eq!(r.mean_ap(Difficulty::Moderate, Metric::ThreeD), None);
    }

    #[test]
    fn class_outside_config() {
        let mut g = gt(0.0, 10.0);
        g.class = 1;
        assert!(evaluate(&[vec![]], &[vec![g]], &cfg()).is_err());
        assert!(evaluate(&[vec![], vec![]], &[vec![]], &cfg()).is_err());
    }

    #[test]
    fn csv_has_forty_rows_per_entry() {
        let gts = vec![vec![gt(0.0, 10.0)]];
        let dets = vec![vec![det(&gts[0][0], 0.9)]];
        let r = evaluate(&dets, &gts, &cfg()).unwrap();
        assert_eq!(r.to_csv().lines().count(), 1 + 6 * 40);
        assert!(r.to_table().contains("100.00"));
    }
}
