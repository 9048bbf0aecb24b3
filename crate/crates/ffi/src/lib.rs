//! C ABI over the mono3d toolkit.
//!
//! Boxes cross the boundary as rows of 15 doubles: center (3), dimensions
//! `h, w, l` (3) and the rotation matrix in row-major order (9). 2D boxes are
//! rows of 4 doubles `x1, y1, x2, y2`. Every function returns an
//! [`M3dStatus`]; on failure [`m3d_last_error`] describes the problem.
//! Handles are opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use mono3d::assign::{assign, AnchorPrediction, GtInstance, MatchConfig, MatchMode};
use mono3d::dataio::RunConfig;
use mono3d::distill::{distill_loss, importance_omega, quality_eta, DistillPair, FEATURE_DIM};
use mono3d::eval::{evaluate, Difficulty, EvalConfig, EvalDetection, EvalReport, GroundTruthObject, Metric};
use mono3d::geometry::{iou_3d, Box2D, Box3D, BOX_ROW_LEN};
use mono3d::mgiou::mgiou_3d;
use mono3d::Error;

/// Tolerance on rotation blocks received over the boundary.
pub const M3D_ROTATION_TOL: f64 = 1e-6;
pub const M3D_BOX_ROW_LEN: usize = 15;
pub const M3D_BOX2D_ROW_LEN: usize = 4;
pub const M3D_FEATURE_DIM: usize = 64;

const _: () = assert!(M3D_BOX_ROW_LEN == BOX_ROW_LEN && M3D_FEATURE_DIM == FEATURE_DIM);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M3dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Degenerate = 5,
    NotYawOnly = 6,
    Parse = 7,
    Config = 8,
    Container = 9,
    Io = 10,
    /// Output buffer too small; the required length is reported.
    BufferTooSmall = 11,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M3dMatchMode {
    OneToOne = 0,
    OneToMany = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M3dDifficulty {
    Easy = 0,
    Moderate = 1,
    Hard = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum M3dMetric {
    ThreeD = 0,
    Bev = 1,
}

/// Assignment settings.
pub struct M3dMatcher {
    cfg: MatchConfig,
}

/// Accumulates images, then evaluates them in one pass.
pub struct M3dEvaluator {
    cfg: EvalConfig,
    detections: Vec<Vec<EvalDetection>>,
    ground_truth: Vec<Vec<GroundTruthObject>>,
    report: Option<EvalReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(M3dStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidInput(_) => M3dStatus::InvalidInput,
            Error::Degenerate(_) => M3dStatus::Degenerate,
            Error::ShapeMismatch { .. } => M3dStatus::ShapeMismatch,
            Error::NonFinite(_) => M3dStatus::NonFinite,
            Error::NotYawOnly => M3dStatus::NotYawOnly,
            Error::Parse { .. } | Error::Json(_) => M3dStatus::Parse,
            Error::Config(_) => M3dStatus::Config,
            Error::Container(_) => M3dStatus::Container,
            Error::Io { .. } => M3dStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> M3dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            M3dStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            M3dStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(M3dStatus::NullPointer, format!("{name} is NULL"))
}

/// Borrows `len` elements; a NULL pointer is accepted only when `len == 0`.
unsafe fn view<'a, T>(p: *const T, len: usize, name: &str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn view_mut<'a, T>(p: *mut T, len: usize, name: &str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

fn checked_len(n: usize, width: usize, name: &str) -> FfiResult<usize> {
    n.checked_mul(width)
        .ok_or_else(|| Failure(M3dStatus::ShapeMismatch, format!("{name}: {n} rows of {width} overflow")))
}

fn box3d_rows(data: &[f64], name: &str) -> FfiResult<Vec<Box3D>> {
    data.chunks_exact(BOX_ROW_LEN)
        .enumerate()
        .map(|(i, row)| {
            Box3D::from_row(row, M3D_ROTATION_TOL).map_err(|e| {
                let Failure(status, msg) = Failure::from(e);
                Failure(status, format!("{name} row {i}: {msg}"))
            })
        })
        .collect()
}

fn box2d_rows(data: &[f64], name: &str) -> FfiResult<Vec<Box2D>> {
    data.chunks_exact(M3D_BOX2D_ROW_LEN)
        .enumerate()
        .map(|(i, r)| {
            Box2D::new(r[0], r[1], r[2], r[3]).map_err(|e| {
                let Failure(status, msg) = Failure::from(e);
                Failure(status, format!("{name} row {i}: {msg}"))
            })
        })
        .collect()
}

unsafe fn opt_str<'a>(p: *const c_char, name: &str) -> FfiResult<Option<&'a str>> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| Failure(M3dStatus::InvalidInput, format!("{name} is not UTF-8")))
}

unsafe fn run_config(json: *const c_char) -> FfiResult<RunConfig> {
    match opt_str(json, "config_json")? {
        Some(text) => Ok(RunConfig::from_json_str(text)?),
        None => Ok(RunConfig::default()),
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn m3d_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn m3d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// MGIoU of row pairs: `out[i] = mgiou(a[i], b[i])` for `n` rows of 15.
///
/// # Safety
/// `a` and `b` must hold `n * 15` doubles and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn m3d_mgiou3d(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> M3dStatus {
    guard(|| {
        let len = checked_len(n, BOX_ROW_LEN, "boxes")?;
        let ba = box3d_rows(view(a, len, "a")?, "a")?;
        let bb = box3d_rows(view(b, len, "b")?, "b")?;
        let out = view_mut(out, n, "out")?;
        for ((o, x), y) in out.iter_mut().zip(&ba).zip(&bb) {
            *o = mgiou_3d(x, y);
        }
        Ok(())
    })
}

/// 3D IoU of row pairs; both boxes of a pair must be yaw-only.
///
/// # Safety
/// As for [`m3d_mgiou3d`].
#[no_mangle]
pub unsafe extern "C" fn m3d_iou3d(a: *const f64, b: *const f64, n: usize, out: *mut f64) -> M3dStatus {
    guard(|| {
        let len = checked_len(n, BOX_ROW_LEN, "boxes")?;
        let ba = box3d_rows(view(a, len, "a")?, "a")?;
        let bb = box3d_rows(view(b, len, "b")?, "b")?;
        let out = view_mut(out, n, "out")?;
        for (i, ((o, x), y)) in out.iter_mut().zip(&ba).zip(&bb).enumerate() {
            *o = iou_3d(x, y).map_err(|e| {
                let Failure(status, msg) = Failure::from(e);
                Failure(status, format!("pair {i}: {msg}"))
            })?;
        }
        Ok(())
    })
}

/// `out[i] = z_gt[i] / max(|z_gt[i] − z_teacher[i]|, epsilon)`.
///
/// # Safety
/// All arrays must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn m3d_quality_eta(
    z_gt: *const f64,
    z_teacher: *const f64,
    n: usize,
    epsilon: f64,
    out: *mut f64,
) -> M3dStatus {
    guard(|| {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Failure(M3dStatus::InvalidInput, format!("epsilon must be positive, got {epsilon}")));
        }
        let z = view(z_gt, n, "z_gt")?;
        let zt = view(z_teacher, n, "z_teacher")?;
        let out = view_mut(out, n, "out")?;
        for ((o, a), b) in out.iter_mut().zip(z).zip(zt) {
            *o = quality_eta(*a, *b, epsilon);
        }
        Ok(())
    })
}

/// Channel importance `|w| / Σ|w|` over `n` final depth weights.
///
/// # Safety
/// `w_final` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn m3d_importance_omega(w_final: *const f64, n: usize, out: *mut f64) -> M3dStatus {
    guard(|| {
        let omega = importance_omega(view(w_final, n, "w_final")?)?;
        view_mut(out, n, "out")?.copy_from_slice(omega.as_slice());
        Ok(())
    })
}

/// Weighted feature distillation loss over `n` pairs of 64-channel features.
/// Channel importance is derived from `w_final` (64 doubles). `grad_student`
/// may be NULL; otherwise it receives `n * 64` doubles.
///
/// # Safety
/// `feat_teacher` and `feat_student` must hold `n * 64` doubles, `eta` `n`
/// doubles and `loss` must point to one double.
#[no_mangle]
pub unsafe extern "C" fn m3d_distill_loss(
    feat_teacher: *const f64,
    feat_student: *const f64,
    eta: *const f64,
    w_final: *const f64,
    n: usize,
    loss: *mut f64,
    grad_student: *mut f64,
) -> M3dStatus {
    guard(|| {
        if loss.is_null() {
            return Err(null("loss"));
        }
        let len = checked_len(n, FEATURE_DIM, "features")?;
        let ft = view(feat_teacher, len, "feat_teacher")?;
        let fs = view(feat_student, len, "feat_student")?;
        let etas = view(eta, n, "eta")?;
        let omega = importance_omega(view(w_final, FEATURE_DIM, "w_final")?)?;
        let pairs = (0..n)
            .map(|i| {
                let r = i * FEATURE_DIM..(i + 1) * FEATURE_DIM;
                // depths only feed eta, which the caller supplies
                DistillPair::new(0, i, ft[r.clone()].to_vec(), fs[r].to_vec(), 1.0, 1.0)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let result = distill_loss(&pairs, &omega, etas)?;
        *loss = result.value;
        if !grad_student.is_null() {
            let g = view_mut(grad_student, len, "grad_student")?;
            for (dst, src) in g.chunks_exact_mut(FEATURE_DIM).zip(&result.grad_student) {
                dst.copy_from_slice(src);
            }
        }
        Ok(())
    })
}

/// New matcher with the given exponents and per-object capacity `topk`.
/// Returns NULL on invalid settings.
#[no_mangle]
pub extern "C" fn m3d_matcher_new(alpha: f64, beta: f64, gamma: f64, topk: usize) -> *mut M3dMatcher {
    let mut handle = ptr::null_mut();
    guard(|| {
        let cfg = MatchConfig { alpha, beta, gamma, topk };
        cfg.validate()?;
        handle = Box::into_raw(Box::new(M3dMatcher { cfg }));
        Ok(())
    });
    handle
}

/// Matcher from a JSON run configuration; NULL selects the defaults.
/// Returns NULL on malformed JSON or unknown keys.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn m3d_matcher_from_config(config_json: *const c_char) -> *mut M3dMatcher {
    let mut handle = ptr::null_mut();
    guard(|| {
        let cfg = run_config(config_json)?.match_config();
        handle = Box::into_raw(Box::new(M3dMatcher { cfg }));
        Ok(())
    });
    handle
}

/// # Safety
/// `matcher` must be NULL or a handle from a `m3d_matcher_*` constructor,
/// released at most once.
#[no_mangle]
pub unsafe extern "C" fn m3d_matcher_free(matcher: *mut M3dMatcher) {
    if !matcher.is_null() {
        drop(Box::from_raw(matcher));
    }
}

/// Assigns `n_pred` anchor predictions to `n_gt` objects.
///
/// Objects: `gt_class[n_gt]`, `gt_box2d[n_gt * 4]`, `gt_box3d[n_gt * 15]`.
/// Predictions: `anchors[n_pred * 2]`, `class_probs[n_pred * num_classes]`,
/// `pred_box2d[n_pred * 4]`, `pred_box3d[n_pred * 15]`.
///
/// Pairs are written to `out_gt`, `out_anchor` and `out_score` (each of
/// length `capacity`) and their count to `out_len`. When `capacity` is too
/// small nothing is written except `out_len`, which then holds the required
/// length, and the status is `BufferTooSmall`.
///
/// # Safety
/// Every pointer must reference the documented number of elements.
#[no_mangle]
pub unsafe extern "C" fn m3d_matcher_assign(
    matcher: *const M3dMatcher,
    gt_class: *const usize,
    gt_box2d: *const f64,
    gt_box3d: *const f64,
    n_gt: usize,
    anchors: *const f64,
    class_probs: *const f64,
    num_classes: usize,
    pred_box2d: *const f64,
    pred_box3d: *const f64,
    n_pred: usize,
    mode: M3dMatchMode,
    out_gt: *mut usize,
    out_anchor: *mut usize,
    out_score: *mut f64,
    capacity: usize,
    out_len: *mut usize,
) -> M3dStatus {
    guard(|| {
        let m = matcher.as_ref().ok_or_else(|| null("matcher"))?;
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        let classes = view(gt_class, n_gt, "gt_class")?;
        let g2 = box2d_rows(view(gt_box2d, checked_len(n_gt, 4, "gt_box2d")?, "gt_box2d")?, "gt_box2d")?;
        let g3 = box3d_rows(view(gt_box3d, checked_len(n_gt, BOX_ROW_LEN, "gt_box3d")?, "gt_box3d")?, "gt_box3d")?;
        let gts: Vec<GtInstance> = (0..n_gt)
            .map(|i| GtInstance { class: classes[i], box2d: g2[i], box3d: g3[i] })
            .collect();
        let anchors = view(anchors, checked_len(n_pred, 2, "anchors")?, "anchors")?;
        let probs = view(class_probs, checked_len(n_pred, num_classes, "class_probs")?, "class_probs")?;
        let p2 = box2d_rows(view(pred_box2d, checked_len(n_pred, 4, "pred_box2d")?, "pred_box2d")?, "pred_box2d")?;
        let p3 =
            box3d_rows(view(pred_box3d, checked_len(n_pred, BOX_ROW_LEN, "pred_box3d")?, "pred_box3d")?, "pred_box3d")?;
        let preds: Vec<AnchorPrediction> = (0..n_pred)
            .map(|i| AnchorPrediction {
                anchor: [anchors[2 * i], anchors[2 * i + 1]],
                class_probs: probs[i * num_classes..(i + 1) * num_classes].to_vec(),
                box2d: p2[i],
                box3d: p3[i],
            })
            .collect();
        let mode = match mode {
            M3dMatchMode::OneToOne => MatchMode::OneToOne,
            M3dMatchMode::OneToMany => MatchMode::OneToMany,
        };
        let result = assign(&gts, &preds, &m.cfg, mode)?;
        let n = result.pairs.len();
        *out_len = n;
        if n > capacity {
            return Err(Failure(
                M3dStatus::BufferTooSmall,
                format!("{n} pairs do not fit in capacity {capacity}"),
            ));
        }
        let (og, oa, os) = (
            view_mut(out_gt, n, "out_gt")?,
            view_mut(out_anchor, n, "out_anchor")?,
            view_mut(out_score, n, "out_score")?,
        );
        for (i, p) in result.pairs.iter().enumerate() {
            og[i] = p.gt_index;
            oa[i] = p.anchor_index;
            os[i] = p.score;
        }
        Ok(())
    })
}

/// New evaluator from a JSON run configuration (NULL for defaults); uses
/// its `classes` and `iou_thresholds`. Returns NULL on invalid input.
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn m3d_evaluator_new(config_json: *const c_char) -> *mut M3dEvaluator {
    let mut handle = ptr::null_mut();
    guard(|| {
        let cfg = run_config(config_json)?.eval_config();
        handle = Box::into_raw(Box::new(M3dEvaluator {
            cfg,
            detections: Vec::new(),
            ground_truth: Vec::new(),
            report: None,
        }));
        Ok(())
    });
    handle
}

/// # Safety
/// `evaluator` must be NULL or a handle from [`m3d_evaluator_new`], released
/// at most once.
#[no_mangle]
pub unsafe extern "C" fn m3d_evaluator_free(evaluator: *mut M3dEvaluator) {
    if !evaluator.is_null() {
        drop(Box::from_raw(evaluator));
    }
}

/// Appends one image. Detections: `det_class[n_det]`, `det_box2d[n_det * 4]`,
/// `det_box3d[n_det * 15]`, `det_score[n_det]`. Objects: `gt_class[n_gt]`,
/// `gt_box2d[n_gt * 4]`, `gt_box3d[n_gt * 15]`, `gt_truncation[n_gt]`,
/// `gt_occlusion[n_gt]`. Discards any earlier report.
///
/// # Safety
/// Every pointer must reference the documented number of elements.
#[no_mangle]
pub unsafe extern "C" fn m3d_evaluator_add_image(
    evaluator: *mut M3dEvaluator,
    det_class: *const usize,
    det_box2d: *const f64,
    det_box3d: *const f64,
    det_score: *const f64,
    n_det: usize,
    gt_class: *const usize,
    gt_box2d: *const f64,
    gt_box3d: *const f64,
    gt_truncation: *const f64,
    gt_occlusion: *const u8,
    n_gt: usize,
) -> M3dStatus {
    guard(|| {
        let ev = evaluator.as_mut().ok_or_else(|| null("evaluator"))?;
        let dc = view(det_class, n_det, "det_class")?;
        let d2 = box2d_rows(view(det_box2d, checked_len(n_det, 4, "det_box2d")?, "det_box2d")?, "det_box2d")?;
        let d3 = box3d_rows(view(det_box3d, checked_len(n_det, BOX_ROW_LEN, "det_box3d")?, "det_box3d")?, "det_box3d")?;
        let ds = view(det_score, n_det, "det_score")?;
        let dets = (0..n_det)
            .map(|i| EvalDetection { class: dc[i], box2d: d2[i], box3d: d3[i], score: ds[i] })
            .collect();
        let gc = view(gt_class, n_gt, "gt_class")?;
        let g2 = box2d_rows(view(gt_box2d, checked_len(n_gt, 4, "gt_box2d")?, "gt_box2d")?, "gt_box2d")?;
        let g3 = box3d_rows(view(gt_box3d, checked_len(n_gt, BOX_ROW_LEN, "gt_box3d")?, "gt_box3d")?, "gt_box3d")?;
        let gt_t = view(gt_truncation, n_gt, "gt_truncation")?;
        let gt_o = view(gt_occlusion, n_gt, "gt_occlusion")?;
        let gts = (0..n_gt)
            .map(|i| GroundTruthObject::new(gc[i], g2[i], g3[i], gt_t[i], gt_o[i]))
            .collect::<Result<Vec<_>, _>>()?;
        ev.detections.push(dets);
        ev.ground_truth.push(gts);
        ev.report = None;
        Ok(())
    })
}

/// Evaluates every image added so far.
///
/// # Safety
/// `evaluator` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn m3d_evaluator_run(evaluator: *mut M3dEvaluator) -> M3dStatus {
    guard(|| {
        let ev = evaluator.as_mut().ok_or_else(|| null("evaluator"))?;
        ev.report = Some(evaluate(&ev.detections, &ev.ground_truth, &ev.cfg)?);
        Ok(())
    })
}

fn report(ev: &M3dEvaluator) -> FfiResult<&EvalReport> {
    ev.report
        .as_ref()
        .ok_or_else(|| Failure(M3dStatus::InvalidInput, "m3d_evaluator_run has not been called".into()))
}

/// AP (percent) and eligible-object count for one cell of the last report.
///
/// # Safety
/// `evaluator` must be a live handle; `ap` and `n_gt` must be writable.
#[no_mangle]
pub unsafe extern "C" fn m3d_evaluator_ap(
    evaluator: *const M3dEvaluator,
    class_index: usize,
    difficulty: M3dDifficulty,
    metric: M3dMetric,
    ap: *mut f64,
    n_gt: *mut usize,
) -> M3dStatus {
    guard(|| {
        let ev = evaluator.as_ref().ok_or_else(|| null("evaluator"))?;
        if ap.is_null() || n_gt.is_null() {
            return Err(null("ap or n_gt"));
        }
        let class = ev.cfg.classes.get(class_index).ok_or_else(|| {
            Failure(M3dStatus::InvalidInput, format!("class index {class_index} out of range"))
        })?;
        let d = match difficulty {
            M3dDifficulty::Easy => Difficulty::Easy,
            M3dDifficulty::Moderate => Difficulty::Moderate,
            M3dDifficulty::Hard => Difficulty::Hard,
        };
        let m = match metric {
            M3dMetric::ThreeD => Metric::ThreeD,
            M3dMetric::Bev => Metric::Bev,
        };
        let e = report(ev)?
            .get(class, d, m)
            .ok_or_else(|| Failure(M3dStatus::InvalidInput, format!("no entry for {class}")))?;
        *ap = e.ap;
        *n_gt = e.n_gt;
        Ok(())
    })
}

/// The last report as a JSON string, or NULL on failure. Release it with
/// [`m3d_string_free`].
///
/// # Safety
/// `evaluator` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn m3d_evaluator_report_json(evaluator: *const M3dEvaluator) -> *mut c_char {
    let mut out = ptr::null_mut();
    guard(|| {
        let ev = evaluator.as_ref().ok_or_else(|| null("evaluator"))?;
        let text = serde_json::to_string(report(ev)?).map_err(|e| Failure::from(Error::from(e)))?;
        out = CString::new(text).expect("JSON has no NULs").into_raw();
        Ok(())
    });
    out
}

/// # Safety
/// `s` must be NULL or a string returned by this library, released once.
#[no_mangle]
pub unsafe extern "C" fn m3d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
