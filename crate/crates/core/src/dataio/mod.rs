//! File formats: KITTI label and calibration text, the binary tensor
//! container, teacher feature dumps and the JSON run configuration.

pub mod config;
pub mod container;
pub mod features;
pub mod kitti;

pub use config::{RunConfig, CONFIG_VERSION};
pub use container::{Tensor, TensorContainer};
pub use features::TeacherFeatures;
pub use kitti::{
    format_labels, label_files, parse_kitti_calib, parse_kitti_label, parse_labels, read_calib_file,
    read_label_file, KittiCalib, KittiLabel, LabelFile,
};
