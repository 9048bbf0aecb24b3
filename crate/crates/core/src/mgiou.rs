//! Marginalized generalized IoU between oriented 3D boxes.
//!
//! Both boxes' corner sets are projected onto each of the six principal axes
//! (three per box). On every axis the two projections form intervals whose
//! 1D GIoU is computed; the six values are averaged. The measure is symmetric,
//! lies in `(-1, 1]`, is invariant to a common uniform scaling and stays
//! informative (negative) for disjoint boxes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Box3D;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::NonFinite("interval".into()));
        }
        if hi < lo {
            return Err(Error::invalid(format!("interval [{lo}, {hi}] is reversed")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    fn projection(points: &[nalgebra::Point3<f64>; 8], axis: &Vector3<f64>) -> Interval {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in points {
            let t = p.coords.dot(axis);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        Interval { lo, hi }
    }
}

/// `IoU(a, b) − |C \ (a ∪ b)| / |C|` where `C` is the enclosing interval.
///
/// When both intervals have zero length the result is `1` for coincident
/// points and `-gap/span = -1` otherwise.
pub fn giou_1d(a: &Interval, b: &Interval) -> f64 {
    let span = a.hi.max(b.hi) - a.lo.min(b.lo);
    if span <= 0.0 {
        return 1.0;
    }
    let inter = (a.hi.min(b.hi) - a.lo.max(b.lo)).max(0.0);
    let union = a.len() + b.len() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (span - union) / span
}

pub fn mgiou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let ca = a.corners();
    let cb = b.corners();
    let mut sum = 0.0;
    for r in [&a.rotation, &b.rotation] {
        for i in 0..3 {
            let axis = r.axis(i);
            sum += giou_1d(
                &Interval::projection(&ca, &axis),
                &Interval::projection(&cb, &axis),
            );
        }
    }
    sum / 6.0
}

/// Non-negative matching factor `max(0, mgiou_3d(a, b))`.
pub fn mgiou_clamped(a: &Box3D, b: &Box3D) -> f64 {
    clamp_positive(mgiou_3d(a, b))
}

pub fn clamp_positive(v: f64) -> f64 {
    v.max(0.0)
}
