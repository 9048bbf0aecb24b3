//! Forward-only convolution engine for the prediction heads.
//!
//! Each head is one 3×3 convolution followed by two 1×1 convolutions, so its
//! output at a location depends on exactly the 3×3 input neighborhood. Every
//! evaluation path funnels through [`Conv2d::eval_point`], which fixes the
//! floating-point summation order.

mod conv;
mod flops;
mod heads;
mod tensor;

pub use conv::{activate, conv2d, Activation, Conv2d};
pub use flops::{flop_count_dense, flop_count_gated, HeadMacReport};
pub use heads::{
    head_forward, head_forward_tapped, DetectorHeads, HeadKind, HeadParams, OrientationMode, HIDDEN,
};
pub use tensor::FeatureMap;
