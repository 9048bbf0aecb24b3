use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::rotation::wrap_angle;

pub const NUM_BINS: usize = 12;
pub const BIN_WIDTH: f64 = 2.0 * PI / NUM_BINS as f64;

/// Center angle of orientation bin `i`: `-π + (i + 0.5)·π/6`.
pub fn bin_center(i: usize) -> f64 {
    -PI + (i as f64 + 0.5) * BIN_WIDTH
}

/// An angle split into one of 12 bins plus a residual to the bin center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationMultiBin {
    pub bin_index: usize,
    pub residual: f64,
}

impl OrientationMultiBin {
    pub fn encode(theta: f64) -> Self {
        let wrapped = wrap_angle(theta);
        let bin_index = (((wrapped + PI) / BIN_WIDTH).floor() as usize).min(NUM_BINS - 1);
        let residual = wrap_angle(wrapped - bin_center(bin_index));
        OrientationMultiBin {
            bin_index,
            residual,
        }
    }

    /// Decoded angle in `[-π, π)`.
    pub fn decode(&self) -> f64 {
        wrap_angle(bin_center(self.bin_index) + self.residual)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::angle_diff;

    #[test]
    fn bin_center_encodes_to_zero_residual() {
        let enc = OrientationMultiBin::encode(bin_center(3));
        assert_eq!(enc.bin_index, 3);
        assert!(enc.residual.abs() < 1e-15);
    }

    #[test]
    fn minus_pi_goes_to_first_bin() {
        let enc = OrientationMultiBin::encode(-PI);
        assert_eq!(enc.bin_index, 0);
        assert!((enc.residual + PI / 12.0).abs() < 1e-15);
        // +π is the same angle
        let enc = OrientationMultiBin::encode(PI);
        assert_eq!(enc.bin_index, 0);
    }

    #[test]
    fn roundtrip_grid() {
        for i in 0..720 {
            let theta = -2.0 * PI + 4.0 * PI * i as f64 / 720.0;
            let enc = OrientationMultiBin::encode(theta);
            assert!(enc.bin_index < NUM_BINS);
            assert!(enc.residual.abs() <= PI / 12.0 + 1e-9);
            assert!(angle_diff(enc.decode(), theta).abs() < 1e-12);
        }
    }
}
