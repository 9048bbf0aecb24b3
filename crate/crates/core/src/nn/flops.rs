use serde::Serialize;

use super::heads::{DetectorHeads, HeadParams};

/// Multiply–accumulates of one head evaluated densely over an `h × w` map:
/// `h·w·(9·C·64 + 64·64 + 64·out)`.
pub fn flop_count_dense(params: &HeadParams, h: usize, w: usize) -> u64 {
    (h * w) as u64 * params.macs_per_location()
}

/// Multiply–accumulates of one head evaluated at `k` gated locations.
pub fn flop_count_gated(params: &HeadParams, k: usize) -> u64 {
    k as u64 * params.macs_per_location()
}

/// Head-level MAC accounting for one image over all pyramid levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HeadMacReport {
    pub locations: u64,
    pub selected: u64,
    /// Classification head, dense in both modes.
    pub classification: u64,
    pub regression_dense: u64,
    pub regression_gated: u64,
}

impl HeadMacReport {
    pub fn new(heads: &DetectorHeads, level_sizes: &[(usize, usize)], k: usize) -> Self {
        let locations: usize = level_sizes.iter().map(|(h, w)| h * w).sum();
        let selected = k.min(locations);
        let classification = level_sizes
            .iter()
            .map(|&(h, w)| flop_count_dense(&heads.cls, h, w))
            .sum();
        let regression_dense = heads
            .regression_heads()
            .iter()
            .flat_map(|p| level_sizes.iter().map(move |&(h, w)| flop_count_dense(p, h, w)))
            .sum();
        let regression_gated = heads
            .regression_heads()
            .iter()
            .map(|p| flop_count_gated(p, selected))
            .sum();
        HeadMacReport {
            locations: locations as u64,
            selected: selected as u64,
            classification,
            regression_dense,
            regression_gated,
        }
    }

    /// Gated over dense regression-head MACs as an exact fraction.
    pub fn regression_ratio(&self) -> (u64, u64) {
        (self.regression_gated, self.regression_dense)
    }

    pub fn regression_ratio_f64(&self) -> f64 {
        self.regression_gated as f64 / self.regression_dense as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::heads::{HeadKind, OrientationMode};

    #[test]
    fn closed_form() {
        let h = HeadParams::zeros(HeadKind::Depth, 64, 1);
        assert_eq!(flop_count_dense(&h, 8, 8), 64 * (9 * 64 * 64 + 64 * 64 + 64));
        assert_eq!(flop_count_gated(&h, 64), flop_count_dense(&h, 8, 8));
        assert_eq!(flop_count_gated(&h, 4) * 64, flop_count_dense(&h, 8, 8) * 4);
        assert_eq!(flop_count_gated(&h, 8), 2 * flop_count_gated(&h, 4));
    }

    #[test]
    fn report_clamps_k() {
        let heads = DetectorHeads::random(4, 2, OrientationMode::MultiBin, 0);
        let r = HeadMacReport::new(&heads, &[(2, 3), (1, 2)], 100);
        assert_eq!(r.selected, 8);
        assert_eq!(r.regression_gated, r.regression_dense);
    }
}
