//! Independent reference implementations used by the integration and
//! acceptance tests.

#![allow(dead_code)]

use std::cmp::Ordering;

use mono3d::assign::{AnchorPrediction, GtInstance, MatchConfig};
use mono3d::dataio::RunConfig;
use mono3d::distill::{distill_loss, importance_omega, quality_eta, DistillPair, FEATURE_DIM};
use mono3d::losses::{
    bce_cls, depth_laplacian, l1_term, orientation_multibin_loss, orientation_so3_loss_entries, MULTIBIN_CHANNELS,
};
use mono3d::eval::{evaluate, Difficulty, EvalConfig, EvalDetection, GroundTruthObject, Metric};
use mono3d::geometry::{gram_schmidt_6d, iou_2d, Box2D, Box3D, Dimensions, OrientationMultiBin, Rotation};
use mono3d::infer::{infer, DecodeConfig, FeatureMapSet, InferMode};
use mono3d::nn::{DetectorHeads, OrientationMode};
use mono3d::synth::random_feature_maps;
use mono3d::mgiou::mgiou_clamped;
use mono3d::synth::{generate_scene, perturb, NoiseSpec, SceneSpec};
use mono3d::dataio::container::{Tensor, TensorContainer};
use mono3d::dataio::kitti::{parse_kitti_label, KittiLabel};
use mono3d::Error;
use nalgebra::{Point3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-6;

pub fn central_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut dn = x.to_vec();
    up[i] += h;
    dn[i] -= h;
    (f(&up) - f(&dn)) / (2.0 * h)
}

/// Largest relative error between `analytic` and central differences over
/// the coordinates for which `check` holds. Pairs where both values are
/// below 1e-9 in magnitude count as agreeing.
pub fn grad_rel_err(f: &dyn Fn(&[f64]) -> f64, x: &[f64], analytic: &[f64], check: &dyn Fn(usize) -> bool) -> f64 {
    assert_eq!(x.len(), analytic.len());
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        if !check(i) {
            continue;
        }
        let n = central_diff(f, x, i, FD_STEP);
        let a = analytic[i];
        let scale = a.abs().max(n.abs());
        if scale < 1e-9 {
            continue;
        }
        worst = worst.max((a - n).abs() / scale);
    }
    worst
}

/// Worst relative gradient error of each loss term over a few random
/// batches. Coordinates within 1e-3 of an L1 kink are skipped.
pub fn loss_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut bce: f64 = 0.0;
    for _ in 0..20 {
        let n = r.random_range(1..40);
        let t: Vec<f64> = (0..n)
            .map(|_| if r.random_bool(0.3) { r.random_range(0.0..1.0) } else { r.random_range(0..2) as f64 })
            .collect();
        let p: Vec<f64> = (0..n).map(|_| r.random_range(0.01..0.99)).collect();
        let g = bce_cls(&t, &p).unwrap();
        bce = bce.max(grad_rel_err(&|x| bce_cls(&t, x).unwrap().value, &p, &g.grad, &|_| true));
    }

    let mut l1: f64 = 0.0;
    for dim in [1, 2, 3] {
        let n = 7 * dim;
        let gt: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let pred: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let g = l1_term(&gt, &pred, dim).unwrap();
        let guard = |i: usize| (gt[i] - pred[i]).abs() > 1e-3;
        l1 = l1.max(grad_rel_err(&|x| l1_term(&gt, x, dim).unwrap().value, &pred, &g.grad, &guard));
    }

    let n = 25;
    let z: Vec<f64> = (0..n).map(|_| r.random_range(5.0..60.0)).collect();
    let zh: Vec<f64> = z.iter().map(|v| v + r.random_range(-4.0..4.0)).collect();
    let s: Vec<f64> = (0..n).map(|_| r.random_range(0.2..3.0)).collect();
    let d = depth_laplacian(&z, &zh, &s).unwrap();
    let guard = |i: usize| (z[i] - zh[i]).abs() > 1e-3;
    let depth = grad_rel_err(&|x| depth_laplacian(&z, x, &s).unwrap().value, &zh, &d.grad_depth, &guard);
    let sigma = grad_rel_err(&|x| depth_laplacian(&z, &zh, x).unwrap().value, &s, &d.grad_sigma, &|_| true);

    let n = 6;
    let gt: Vec<OrientationMultiBin> =
        (0..n).map(|_| OrientationMultiBin::encode(r.random_range(-3.14..3.14))).collect();
    let pred: Vec<f64> = (0..n * MULTIBIN_CHANNELS).map(|_| r.random_range(-2.0..2.0)).collect();
    let g = orientation_multibin_loss(&gt, &pred).unwrap();
    let guard = |i: usize| {
        let (inst, ch) = (i / MULTIBIN_CHANNELS, i % MULTIBIN_CHANNELS);
        ch < 12 || (pred[i] - gt[inst].residual).abs() > 1e-3
    };
    let multibin = grad_rel_err(&|x| orientation_multibin_loss(&gt, x).unwrap().value, &pred, &g.grad, &guard);

    let n = 8;
    let gt: Vec<Rotation> = (0..n)
        .map(|_| {
            let v: [f64; 6] = std::array::from_fn(|_| r.random_range(-1.0..1.0));
            gram_schmidt_6d(&v).unwrap()
        })
        .collect();
    let pred: Vec<f64> = gt
        .iter()
        .flat_map(|g| g.rows().into_iter().flatten().collect::<Vec<_>>())
        .map(|v| v + r.random_range(-0.3..0.3))
        .collect();
    let g = orientation_so3_loss_entries(&gt, &pred).unwrap();
    let guard = |i: usize| (pred[i] - gt[i / 9].rows()[(i % 9) / 3][i % 3]).abs() > 1e-3;
    let so3 = grad_rel_err(&|x| orientation_so3_loss_entries(&gt, x).unwrap().value, &pred, &g.grad, &guard);

    vec![
        ("bce", bce),
        ("l1", l1),
        ("depth", depth),
        ("depth_sigma", sigma),
        ("multibin", multibin),
        ("so3", so3),
    ]
}

/// Worst relative gradient error of the distillation loss w.r.t. student
/// features over `pairings` random pairings.
pub fn distill_gradient_error(seed: u64, pairings: usize) -> f64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairings {
        let n = r.random_range(1..6);
        let w: Vec<f64> = (0..FEATURE_DIM).map(|_| r.random_range(-1.0..1.0)).collect();
        let omega = importance_omega(&w).unwrap();
        let pairs: Vec<DistillPair> = (0..n)
            .map(|i| {
                let ft: Vec<f64> = (0..FEATURE_DIM).map(|_| r.random_range(-2.0..2.0)).collect();
                let fs: Vec<f64> = (0..FEATURE_DIM).map(|_| r.random_range(-2.0..2.0)).collect();
                let z = r.random_range(5.0..50.0);
                DistillPair::new(0, i, ft, fs, z, z + r.random_range(-3.0..3.0)).unwrap()
            })
            .collect();
        let etas: Vec<f64> = pairs.iter().map(|p| quality_eta(p.z_gt, p.z_teacher, 0.1)).collect();
        let loss = distill_loss(&pairs, &omega, &etas).unwrap();
        let flat: Vec<f64> = pairs.iter().flat_map(|p| p.feat_student.clone()).collect();
        let grad: Vec<f64> = loss.grad_student.concat();
        let f = |x: &[f64]| {
            let ps: Vec<DistillPair> = pairs
                .iter()
                .enumerate()
                .map(|(i, p)| DistillPair {
                    feat_student: x[i * FEATURE_DIM..(i + 1) * FEATURE_DIM].to_vec(),
                    ..p.clone()
                })
                .collect();
            distill_loss(&ps, &omega, &etas).unwrap().value
        };
        let guard = |i: usize| (pairs[i / FEATURE_DIM].feat_teacher[i % FEATURE_DIM] - flat[i]).abs() > 1e-3;
        worst = worst.max(grad_rel_err(&f, &flat, &grad, &guard));
    }
    worst
}

// ------------------------------------------------------------------ overlap

pub fn random_box(r: &mut ChaCha8Rng) -> Box3D {
    Box3D::from_yaw(
        Vector3::new(r.random_range(-5.0..5.0), r.random_range(-1.0..1.0), r.random_range(5.0..30.0)),
        Dimensions::new(r.random_range(0.5..2.5), r.random_range(0.4..2.0), r.random_range(0.5..5.0)).unwrap(),
        r.random_range(-3.14..3.14),
    )
    .unwrap()
}

/// `b` near `a`: shifted, resized and turned by amounts that often keep
/// them overlapping.
pub fn nearby_box(r: &mut ChaCha8Rng, a: &Box3D) -> Box3D {
    let s = r.random_range(0.0..1.5);
    Box3D::from_yaw(
        a.center + Vector3::new(r.random_range(-s..s), r.random_range(-0.3..0.3), r.random_range(-s..s)),
        a.dims.scaled(r.random_range(0.6..1.4)),
        a.rotation.yaw() + r.random_range(-1.0..1.0),
    )
    .unwrap()
}

fn corners(b: &Box3D) -> Vec<Vector3<f64>> {
    let m = b.rotation.matrix();
    let (l, h, w) = (b.dims.l / 2.0, b.dims.h / 2.0, b.dims.w / 2.0);
    let mut out = Vec::with_capacity(8);
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                out.push(b.center + m * Vector3::new(sx * l, sy * h, sz * w));
            }
        }
    }
    out
}

fn giou_interval(a: (f64, f64), b: (f64, f64)) -> f64 {
    let hull = a.1.max(b.1) - a.0.min(b.0);
    if hull == 0.0 {
        return 1.0;
    }
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (hull - union) / hull
}

/// Marginal GIoU straight from the definition: project all 16 corners onto
/// each of the six box axes.
pub fn mgiou_oracle(a: &Box3D, b: &Box3D) -> f64 {
    let (ca, cb) = (corners(a), corners(b));
    let span = |pts: &[Vector3<f64>], axis: &Vector3<f64>| {
        pts.iter().map(|p| p.dot(axis)).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)))
    };
    let mut total = 0.0;
    for r in [a.rotation.matrix(), b.rotation.matrix()] {
        for c in 0..3 {
            let axis = r.column(c).into_owned();
            total += giou_interval(span(&ca, &axis), span(&cb, &axis));
        }
    }
    total / 6.0
}

fn inside(b: &Box3D, p: &Vector3<f64>) -> bool {
    let local = b.rotation.matrix().transpose() * (p - b.center);
    local.x.abs() <= b.dims.l / 2.0 && local.y.abs() <= b.dims.h / 2.0 && local.z.abs() <= b.dims.w / 2.0
}

/// Volumetric IoU by sampling voxel centers of an `n³` grid spanning both
/// boxes' joint axis-aligned bounds.
pub fn voxel_iou(a: &Box3D, b: &Box3D, n: usize) -> f64 {
    let pts: Vec<Vector3<f64>> = corners(a).into_iter().chain(corners(b)).collect();
    let mut lo = Point3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Point3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let step = (hi - lo) / n as f64;
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let p = Vector3::new(
                    lo.x + (i as f64 + 0.5) * step.x,
                    lo.y + (j as f64 + 0.5) * step.y,
                    lo.z + (k as f64 + 0.5) * step.z,
                );
                let (ia, ib) = (inside(a, &p), inside(b, &p));
                inter += (ia && ib) as usize;
                union += (ia || ib) as usize;
            }
        }
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

// --------------------------------------------------------------- assignment

/// A scored candidate as `(gt, anchor, score)`.
pub type Cand = (usize, usize, f64);

/// Candidates by the definition: anchor center inside the (non-degenerate)
/// GT box, score `p^α · IoU^β · max(0, MGIoU)^γ` or its 2D part alone.
pub fn oracle_candidates(gts: &[GtInstance], preds: &[AnchorPrediction], cfg: &MatchConfig, use_3d: bool) -> Vec<Cand> {
    let mut out = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        let b = gt.box2d;
        if (b.x2 - b.x1) * (b.y2 - b.y1) <= 0.0 {
            continue;
        }
        for (a, p) in preds.iter().enumerate() {
            let [x, y] = p.anchor;
            if x < b.x1 || x > b.x2 || y < b.y1 || y > b.y2 {
                continue;
            }
            let mut s = p.class_probs[gt.class].powf(cfg.alpha) * iou_2d(&p.box2d, &b).powf(cfg.beta);
            if use_3d {
                s *= mgiou_clamped(&p.box3d, &gt.box3d).powf(cfg.gamma);
            }
            out.push((g, a, s));
        }
    }
    out
}

/// Higher score first, then lower anchor, then lower GT.
fn rank(a: &Cand, b: &Cand) -> Ordering {
    b.2.total_cmp(&a.2).then(a.1.cmp(&b.1)).then(a.0.cmp(&b.0))
}

/// Lexicographic comparison of two rank-sorted pair sequences: the first
/// better-ranked element wins, and a strict extension beats its prefix.
fn lex_cmp(a: &[Cand], b: &[Cand]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match rank(x, y) {
            Ordering::Equal => continue,
            Ordering::Less => return Ordering::Greater,
            Ordering::Greater => return Ordering::Less,
        }
    }
    a.len().cmp(&b.len())
}

fn consider(best: &mut Option<Vec<Cand>>, chosen: &[Cand]) {
    let mut seq = chosen.to_vec();
    seq.sort_by(rank);
    if best.as_ref().is_none_or(|b| lex_cmp(&seq, b) == Ordering::Greater) {
        *best = Some(seq);
    }
}

/// Exhaustive one-to-one search: every GT takes one of its candidates or
/// nothing, anchors used at most once.
pub fn lexmax_one_to_one(cands: &[Cand], n_gt: usize) -> Vec<Cand> {
    let per_gt: Vec<Vec<Cand>> = (0..n_gt).map(|g| cands.iter().copied().filter(|c| c.0 == g).collect()).collect();
    fn go(g: usize, per_gt: &[Vec<Cand>], used: &mut Vec<usize>, chosen: &mut Vec<Cand>, best: &mut Option<Vec<Cand>>) {
        if g == per_gt.len() {
            consider(best, chosen);
            return;
        }
        go(g + 1, per_gt, used, chosen, best);
        for c in &per_gt[g] {
            if used.contains(&c.1) {
                continue;
            }
            used.push(c.1);
            chosen.push(*c);
            go(g + 1, per_gt, used, chosen, best);
            chosen.pop();
            used.pop();
        }
    }
    let mut best = None;
    go(0, &per_gt, &mut Vec::new(), &mut Vec::new(), &mut best);
    best.unwrap_or_default()
}

/// Exhaustive search with per-GT capacity: every anchor goes to one GT it
/// is a candidate for, or to none.
pub fn lexmax_capacity(cands: &[Cand], n_gt: usize, n_anchor: usize, capacity: usize) -> Vec<Cand> {
    let per_anchor: Vec<Vec<Cand>> =
        (0..n_anchor).map(|a| cands.iter().copied().filter(|c| c.1 == a).collect()).collect();
    fn go(a: usize, per_anchor: &[Vec<Cand>], load: &mut Vec<usize>, cap: usize, chosen: &mut Vec<Cand>, best: &mut Option<Vec<Cand>>) {
        if a == per_anchor.len() {
            consider(best, chosen);
            return;
        }
        go(a + 1, per_anchor, load, cap, chosen, best);
        for c in &per_anchor[a] {
            if load[c.0] >= cap {
                continue;
            }
            load[c.0] += 1;
            chosen.push(*c);
            go(a + 1, per_anchor, load, cap, chosen, best);
            chosen.pop();
            load[c.0] -= 1;
        }
    }
    let mut best = None;
    go(0, &per_anchor, &mut vec![0; n_gt], capacity, &mut Vec::new(), &mut best);
    best.unwrap_or_default()
}

/// Canonical form for comparing assignments: sorted `(gt, anchor, score bits)`.
pub fn canonical(pairs: impl IntoIterator<Item = Cand>) -> Vec<(usize, usize, u64)> {
    let mut v: Vec<_> = pairs.into_iter().map(|(g, a, s)| (g, a, s.to_bits())).collect();
    v.sort();
    v
}

// --------------------------------------------------------------- evaluation

/// Precision/recall after each detection prefix, using a maximum-cardinality
/// matching of that prefix (found by brute force) at overlap `> thr`.
pub fn brute_force_pr(iou: &[Vec<f64>], n_gt: usize, thr: f64) -> Vec<(f64, f64)> {
    fn max_match(d: usize, iou: &[Vec<f64>], used: &mut Vec<bool>, thr: f64) -> usize {
        if d == iou.len() {
            return 0;
        }
        let mut best = max_match(d + 1, iou, used, thr);
        for g in 0..used.len() {
            if !used[g] && iou[d][g] > thr {
                used[g] = true;
                best = best.max(1 + max_match(d + 1, iou, used, thr));
                used[g] = false;
            }
        }
        best
    }
    (1..=iou.len())
        .map(|k| {
            let tp = max_match(0, &iou[..k], &mut vec![false; n_gt], thr);
            (tp as f64 / k as f64, tp as f64 / n_gt as f64)
        })
        .collect()
}

/// R40 average precision from explicit (precision, recall) points.
pub fn r40_from_points(points: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for r in 1..=40 {
        let target = r as f64 / 40.0;
        let best = points
            .iter()
            .filter(|(_, rec)| *rec >= target - 1e-12)
            .map(|(p, _)| *p)
            .fold(0.0, f64::max);
        total += best;
    }
    100.0 * total / 40.0
}

// ---------------------------------------------------------------- synthetic

pub type Dataset = (Vec<Vec<EvalDetection>>, Vec<Vec<GroundTruthObject>>);

/// `images` scenes of `objects` objects each, detections perturbed by `noise`.
pub fn synthetic_dataset(seed: u64, images: usize, objects: usize, noise: &NoiseSpec) -> Dataset {
    let mut dets = Vec::with_capacity(images);
    let mut gts = Vec::with_capacity(images);
    for i in 0..images {
        let spec = SceneSpec {
            seed: seed * 100_003 + i as u64,
            n_objects: objects,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec).unwrap();
        dets.push(perturb(&scene.gts, noise, spec.seed ^ 0xABCD).unwrap());
        gts.push(scene.gts);
    }
    (dets, gts)
}

pub fn eval_config() -> EvalConfig {
    RunConfig::default().eval_config()
}

/// Mean over classes and seeds of the AP for one difficulty and metric,
/// one value per depth-noise level.
pub fn depth_noise_sweep(levels: &[f64], seeds: &[u64], images: usize, d: Difficulty, m: Metric) -> Vec<f64> {
    let cfg = eval_config();
    levels
        .iter()
        .map(|&sigma| {
            let mut total = 0.0;
            for &seed in seeds {
                let (dets, gts) = synthetic_dataset(seed, images, 8, &NoiseSpec::depth_only(sigma));
                total += evaluate(&dets, &gts, &cfg).unwrap().mean_ap(d, m).unwrap();
            }
            total / seeds.len() as f64
        })
        .collect()
}

/// One image, two cars side by side and three detections: an exact hit on
/// the left car, a shifted duplicate of it, and a slightly shifted hit on
/// the right car, in descending confidence.
pub fn eval_hand_case() -> (Vec<EvalDetection>, Vec<GroundTruthObject>) {
    let dims = Dimensions::new(1.5, 1.6, 3.9).unwrap();
    let car = |x: f64| Box3D::from_yaw(Vector3::new(x, 1.0, 20.0), dims, 0.0).unwrap();
    let b2 = |x: f64| Box2D::new(600.0 + 40.0 * x, 150.0, 680.0 + 40.0 * x, 210.0).unwrap();
    let gts = vec![
        GroundTruthObject::new(0, b2(0.0), car(0.0), 0.0, 0).unwrap(),
        GroundTruthObject::new(0, b2(5.0), car(5.0), 0.0, 0).unwrap(),
    ];
    let det = |x: f64, at: f64, score: f64| EvalDetection { class: 0, box2d: b2(at), box3d: car(x), score };
    let dets = vec![det(0.0, 0.0, 0.9), det(0.3, 0.0, 0.8), det(5.1, 5.0, 0.7)];
    (dets, gts)
}

// ---------------------------------------------------------------------- I/O

pub const LABEL_SAMPLE: &str =
    "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";

pub fn random_label(rng: &mut ChaCha8Rng) -> KittiLabel {
    let names = ["Car", "Pedestrian", "Cyclist", "Van", "DontCare"];
    let mut f = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let x1 = f(0.0, 1200.0);
    let y1 = f(0.0, 370.0);
    let label = KittiLabel {
        class_name: String::new(),
        truncation: f(0.0, 1.0),
        occlusion: 0,
        alpha: f(-3.14, 3.14),
        bbox: [x1, y1, x1 + f(1.0, 300.0), y1 + f(1.0, 200.0)],
        dims: [f(0.5, 4.0), f(0.3, 3.0), f(0.3, 12.0)],
        location: [f(-40.0, 40.0), f(-3.0, 3.0), f(-5.0, 90.0)],
        rotation_y: f(-3.14, 3.14),
        score: None,
    };
    KittiLabel {
        class_name: names[rng.random_range(0..names.len())].to_string(),
        occlusion: rng.random_range(-1..4),
        score: rng.random_bool(0.5).then(|| rng.random_range(0.0..1.0)),
        ..label
    }
}

/// `parse(write(x))` normalizes once; afterwards write and parse are fixed
/// points. Returns the first offending line.
pub fn label_idempotence(seed: u64, n: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n {
        let line = random_label(&mut rng).to_line();
        let once = parse_kitti_label(&line, "gen", 1).map_err(|e| e.to_string())?;
        let again = once.to_line();
        if again != line || parse_kitti_label(&again, "gen", 1).map_err(|e| e.to_string())? != once {
            return Err(line);
        }
    }
    Ok(())
}

const FUZZ_TOKENS: [&str; 12] = ["nan", "inf", "-", "1e999", "0x10", "", " ", "\t", "ä", "1.5.2", "--3", "Car"];

/// One random edit of `line`: character deletion, insertion or replacement,
/// field deletion, duplication or swap, token injection, or truncation.
pub fn mutate_line(rng: &mut ChaCha8Rng, line: &str) -> String {
    let chars: Vec<char> = line.chars().collect();
    if chars.is_empty() {
        return FUZZ_TOKENS[rng.random_range(0..FUZZ_TOKENS.len())].to_string();
    }
    let mut fields: Vec<String> = line.split(' ').map(str::to_string).collect();
    let pos = rng.random_range(0..chars.len());
    let fi = rng.random_range(0..fields.len());
    match rng.random_range(0..8) {
        0 => chars.iter().enumerate().filter(|(i, _)| *i != pos).map(|(_, c)| c).collect(),
        1 => {
            let mut c = chars.clone();
            c.insert(pos, char::from_u32(rng.random_range(0..0x3000)).unwrap_or('?'));
            c.into_iter().collect()
        }
        2 => {
            let mut c = chars.clone();
            c[pos] = char::from(rng.random_range(32u8..127));
            c.into_iter().collect()
        }
        3 => {
            fields.remove(fi);
            fields.join(" ")
        }
        4 => {
            let f = fields[fi].clone();
            fields.insert(fi, f);
            fields.join(" ")
        }
        5 => {
            let fj = rng.random_range(0..fields.len());
            fields.swap(fi, fj);
            fields.join(" ")
        }
        6 => {
            fields[fi] = FUZZ_TOKENS[rng.random_range(0..FUZZ_TOKENS.len())].to_string();
            fields.join(" ")
        }
        _ => chars[..pos].iter().collect(),
    }
}

/// Feeds `n` mutated lines (repeatedly mutated up to three times) to the
/// parser. Every outcome must be a full record or a parse error carrying
/// the given location. Returns the number of rejected lines.
pub fn fuzz_labels(seed: u64, n: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rejected = 0;
    for i in 0..n {
        let base = if i % 2 == 0 { LABEL_SAMPLE.to_string() } else { random_label(&mut rng).to_line() };
        let mut line = base;
        for _ in 0..rng.random_range(1..4) {
            line = mutate_line(&mut rng, &line);
        }
        let at = i + 1;
        let outcome = std::panic::catch_unwind(|| parse_kitti_label(&line, "fuzz.txt", at));
        match outcome {
            Err(_) => return Err(format!("panic on {line:?}")),
            Ok(Ok(_)) => {}
            Ok(Err(Error::Parse { source_name, line: l, .. })) if source_name == "fuzz.txt" && l == at => rejected += 1,
            Ok(Err(e)) => return Err(format!("unlocated error {e} for {line:?}")),
        }
    }
    Ok(rejected)
}

/// A container with random shapes and raw f32 bit patterns, including NaNs,
/// infinities and subnormals.
pub fn random_container(seed: u64) -> TensorContainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = TensorContainer::new();
    c.meta.insert("kind".into(), "fuzz".into());
    c.meta.insert("seed".into(), seed.into());
    for t in 0..rng.random_range(0..5) {
        let shape: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..6)).collect();
        let n = shape.iter().product();
        let data = (0..n).map(|_| f32::from_bits(rng.random())).collect();
        c.push(Tensor::new(format!("t{t}"), shape, data).unwrap()).unwrap();
    }
    c
}

/// Bitwise equality of encoded bytes across `decode(encode(x))`.
pub fn container_roundtrip(seed: u64) -> bool {
    let c = random_container(seed);
    let bytes = c.to_bytes().unwrap();
    let back = TensorContainer::from_bytes(&bytes).unwrap();
    back == c && back.to_bytes().unwrap() == bytes
}

// ---------------------------------------------------------------- inference

pub fn decode_config(mode: OrientationMode) -> DecodeConfig {
    let run = RunConfig::default();
    DecodeConfig {
        intrinsics: run.camera().unwrap(),
        class_mean_dims: run.mean_dims().unwrap(),
        orientation_mode: mode,
    }
}

/// Random heads and features of random (possibly odd) size. Returns the
/// total number of locations as well.
pub fn random_inference_instance(seed: u64) -> (FeatureMapSet, DetectorHeads, DecodeConfig, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = rng.random_range(1..24);
    let (h8, w8) = (rng.random_range(1..12), rng.random_range(1..20));
    let mode = if rng.random_bool(0.5) { OrientationMode::MultiBin } else { OrientationMode::So3 };
    let features = random_feature_maps(c, h8, w8, seed ^ 0x5eed).unwrap();
    let heads = DetectorHeads::random(c, 3, mode, seed.wrapping_mul(31) + 7);
    let n = features.total_locations();
    (features, heads, decode_config(mode), n)
}

/// Gated and dense inference agree bit for bit on centers, raw outputs and
/// decoded detections.
pub fn gated_equals_dense(features: &FeatureMapSet, heads: &DetectorHeads, cfg: &DecodeConfig, k: usize) -> bool {
    let g = infer(features, heads, k, InferMode::Gated, cfg).unwrap();
    let d = infer(features, heads, k, InferMode::Dense, cfg).unwrap();
    g.centers == d.centers
        && g.raw.len() == d.raw.len()
        && g.raw.iter().zip(&d.raw).all(|(a, b)| a.bitwise_eq(b))
        && g.detections.bitwise_eq(&d.detections)
        && g.detections.0.len() == k.min(features.total_locations())
}
