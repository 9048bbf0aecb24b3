use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::rotation::Rotation;
use crate::error::{Error, Result};

/// Axis-aligned image-plane box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box2D {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Box2D {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("2d box".into()));
        }
        if x2 < x1 || y2 < y1 {
            return Err(Error::invalid(format!(
                "2d box corners out of order: [{x1}, {y1}, {x2}, {y2}]"
            )));
        }
        Ok(Box2D { x1, y1, x2, y2 })
    }

    pub fn from_center_size(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        Box2D::new(
            cx - width / 2.0,
            cy - height / 2.0,
            cx + width / 2.0,
            cy + height / 2.0,
        )
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Inclusive containment test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x1 && x <= self.x2 && y >= self.y1 && y <= self.y2
    }

    /// Smallest box containing all `points`.
    pub fn hull(points: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut it = points.into_iter();
        let (x0, y0) = it
            .next()
            .ok_or_else(|| Error::invalid("hull of an empty point set"))?;
        let (mut x1, mut y1, mut x2, mut y2) = (x0, y0, x0, y0);
        for (x, y) in it {
            x1 = x1.min(x);
            y1 = y1.min(y);
            x2 = x2.max(x);
            y2 = y2.max(y);
        }
        Box2D::new(x1, y1, x2, y2)
    }

    pub fn clip(&self, width: f64, height: f64) -> Option<Box2D> {
        let x1 = self.x1.max(0.0);
        let y1 = self.y1.max(0.0);
        let x2 = self.x2.min(width);
        let y2 = self.y2.min(height);
        (x2 > x1 && y2 > y1).then_some(Box2D { x1, y1, x2, y2 })
    }
}

/// Physical box extents in meters: height (y), width (z) and length (x)
/// in the object frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dimensions {
    pub h: f64,
    pub w: f64,
    pub l: f64,
}

impl Dimensions {
    pub fn new(h: f64, w: f64, l: f64) -> Result<Self> {
        if ![h, w, l].iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::invalid(format!(
                "box dimensions must be positive, got (h={h}, w={w}, l={l})"
            )));
        }
        Ok(Dimensions { h, w, l })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Dimensions {
            h: self.h * s,
            w: self.w * s,
            l: self.l * s,
        }
    }

    pub fn volume(&self) -> f64 {
        self.h * self.w * self.l
    }
}

/// Values per box in the flat row layout used at language boundaries.
pub const BOX_ROW_LEN: usize = 15;

/// Oriented 3D box in the camera frame. `center` is the geometric center
/// (not the KITTI bottom-center).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: Vector3<f64>,
    pub dims: Dimensions,
    pub rotation: Rotation,
}

impl Box3D {
    pub fn new(center: Vector3<f64>, dims: Dimensions, rotation: Rotation) -> Result<Self> {
        if center.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("3d box center".into()));
        }
        Ok(Box3D {
            center,
            dims,
            rotation,
        })
    }

    pub fn from_yaw(center: Vector3<f64>, dims: Dimensions, yaw: f64) -> Result<Self> {
        Box3D::new(center, dims, Rotation::from_yaw(yaw))
    }

    /// Reads the flat row layout: center (3), dimensions `h, w, l` (3),
    /// rotation row-major (9). The rotation must be orthonormal within `tol`.
    pub fn from_row(row: &[f64], tol: f64) -> Result<Self> {
        if row.len() != BOX_ROW_LEN {
            return Err(Error::shape(BOX_ROW_LEN, row.len()));
        }
        let m = Matrix3::from_row_slice(&row[6..15]);
        Box3D::new(
            Vector3::new(row[0], row[1], row[2]),
            Dimensions::new(row[3], row[4], row[5])?,
            Rotation::with_tolerance(m, tol)?,
        )
    }

    pub fn to_row(&self) -> [f64; BOX_ROW_LEN] {
        let mut out = [0.0; BOX_ROW_LEN];
        out[..3].copy_from_slice(self.center.as_slice());
        out[3..6].copy_from_slice(&[self.dims.h, self.dims.w, self.dims.l]);
        for (i, r) in self.rotation.rows().iter().enumerate() {
            out[6 + 3 * i..9 + 3 * i].copy_from_slice(r);
        }
        out
    }

    /// Half extents along the local axes in (x, y, z) = (l, h, w) order.
    pub fn half_extents(&self) -> Vector3<f64> {
        Vector3::new(self.dims.l / 2.0, self.dims.h / 2.0, self.dims.w / 2.0)
    }

    /// The eight corners `R·(±l/2, ±h/2, ±w/2) + center`.
    ///
    /// Corner `i` takes the `+` sign on local x when bit 2 of `i` is set, on
    /// local y when bit 1 is set and on local z when bit 0 is set; so corner 0
    /// is `(-,-,-)` and corner 7 is `(+,+,+)`.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let half = self.half_extents();
        let r = self.rotation.matrix();
        std::array::from_fn(|i| {
            let sign = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
            let local = Vector3::new(sign(2) * half.x, sign(1) * half.y, sign(0) * half.z);
            Point3::from(r * local + self.center)
        })
    }

    /// Bird's-eye-view footprint as `(x, z)` points, counter-clockwise in the
    /// `(x, z)` plane (x as the first coordinate).
    pub fn bev_polygon(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.dims.l / 2.0, self.dims.w / 2.0);
        let r = self.rotation.matrix();
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[lx, lz]| {
            [
                r[(0, 0)] * lx + r[(0, 2)] * lz + self.center.x,
                r[(2, 0)] * lx + r[(2, 2)] * lz + self.center.z,
            ]
        })
    }

    /// Vertical extent `[y_min, y_max]` of a yaw-only box.
    pub fn vertical_extent(&self) -> (f64, f64) {
        (
            self.center.y - self.dims.h / 2.0,
            self.center.y + self.dims.h / 2.0,
        )
    }

    pub fn volume(&self) -> f64 {
        self.dims.volume()
    }
}

/// Pinhole intrinsics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if ![fx, fy, cx, cy].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("camera intrinsics".into()));
        }
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Typical KITTI left color camera.
    pub fn kitti_default() -> Self {
        CameraIntrinsics {
            fx: 721.5377,
            fy: 721.5377,
            cx: 609.5593,
            cy: 172.854,
        }
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<(f64, f64)> {
        if !(p.z > 0.0) {
            return Err(Error::invalid(format!(
                "cannot project a point with depth {}",
                p.z
            )));
        }
        Ok((self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }

    pub fn backproject(&self, u: f64, v: f64, depth: f64) -> Result<Vector3<f64>> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::invalid(format!(
                "cannot backproject with depth {depth}"
            )));
        }
        Ok(Vector3::new(
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ))
    }

    /// Projected 2D hull of a box's corners. Requires every corner in front
    /// of the camera.
    pub fn project_box(&self, b: &Box3D) -> Result<Box2D> {
        let pts = b
            .corners()
            .iter()
            .map(|c| self.project(&c.coords))
            .collect::<Result<Vec<_>>>()?;
        Box2D::hull(pts)
    }
}
