//! Weight-magnitude analysis, AP evaluation, attention complexity counts, the
//! attention benchmark and a toy training loop for the block.

mod ap;
mod bench;
mod magnitude;
mod train;

use serde::Serialize;

pub use ap::{evaluate_ap, r40_ap, ApResult, FrameEval, Region, RegionFilter, DEFAULT_IOU_THRESHOLDS};
pub use bench::{benchmark_attention, fit_slope, BenchReport, BenchRow};
pub use magnitude::{
    layer_magnitude_stats, weight_magnitude_stats, LayerMagnitudeStats, MagnitudeReport, SkippedLayer, DEAD_THRESHOLD,
};
pub use train::{train_toy_regression, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComplexityCount {
    pub dense_entries: u64,
    pub sparse_entries: u64,
}

/// Score-matrix sizes of attention over every cell, `(HW)^2`, versus over the
/// `p` occupied cells, `p^2`.
pub fn complexity_count(h: usize, w: usize, p: usize) -> ComplexityCount {
    let hw = (h * w) as u64;
    let p = p as u64;
    ComplexityCount { dense_entries: hw * hw, sparse_entries: p * p }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complexity_examples() {
        let c = complexity_count(320, 320, 200);
        assert_eq!(c.dense_entries, 10_485_760_000);
        assert_eq!(c.sparse_entries, 40_000);
        let full = complexity_count(4, 5, 20);
        assert_eq!(full.dense_entries, full.sparse_entries);
        assert_eq!(complexity_count(4, 4, 0).sparse_entries, 0);
    }
}
