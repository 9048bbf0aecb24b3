//! Box types, orientation codecs, pinhole projection and overlap measures.
//!
//! Frames follow the KITTI camera convention (x right, y down, z forward).
//! In an object's local frame, length runs along x, height along y and
//! width along z.

mod boxes;
mod iou;
mod multibin;
mod rotation;

pub use boxes::{Box2D, Box3D, CameraIntrinsics, Dimensions, BOX_ROW_LEN};
pub use iou::{
    bev_intersection_area, clip_convex, iou_2d, iou_3d, polygon_area, rotated_iou_bev, CLIP_EPS,
};
pub use multibin::{bin_center, OrientationMultiBin, BIN_WIDTH, NUM_BINS};
pub use rotation::{
    allocentric_to_egocentric, angle_diff, egocentric_to_allocentric, gram_schmidt_6d,
    observation_angle_to_yaw, orthonormality_error, viewing_ray_rotation, wrap_angle,
    yaw_to_observation_angle, Rotation, GRAM_SCHMIDT_EPS, ROTATION_TOL,
};
