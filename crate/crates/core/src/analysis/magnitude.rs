//! Per-layer weight-magnitude box plots: clip at 0, divide by the layer
//! maximum, drop magnitudes at or below 0.001, then quartiles (type 7),
//! Tukey whiskers at 1.5 IQR and the outlier count over the survivors.

use serde::Serialize;

use crate::nn::WeightStore;

pub const DEAD_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerMagnitudeStats {
    pub layer: String,
    pub surviving: usize,
    pub dead: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedLayer {
    pub layer: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MagnitudeReport {
    pub layers: Vec<LayerMagnitudeStats>,
    pub skipped: Vec<SkippedLayer>,
}

impl MagnitudeReport {
    /// One row per layer, ready for a box-plot script.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,surviving,dead,q1,median,q3,whisker_low,whisker_high,outliers\n");
        for s in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                s.layer, s.surviving, s.dead, s.q1, s.median, s.q3, s.whisker_low, s.whisker_high, s.outliers
            ));
        }
        out
    }
}

/// Linear interpolation between closest ranks on `k`-th smallest values,
/// fetched with `nth`.
fn type7(n: usize, q: f64, mut nth: impl FnMut(usize) -> f64) -> f64 {
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let x_lo = nth(lo);
    if lo + 1 >= n {
        return x_lo;
    }
    let x_hi = nth(lo + 1);
    x_lo + (h - lo as f64) * (x_hi - x_lo)
}

/// Statistics of one layer, or the reason it was skipped.
pub fn layer_magnitude_stats(layer: &str, values: &[f64]) -> Result<LayerMagnitudeStats, SkippedLayer> {
    let skip = |reason: &str| SkippedLayer { layer: layer.to_string(), reason: reason.to_string() };
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !(max > 0.0) || !max.is_finite() {
        return Err(skip("no positive weights survive clipping"));
    }
    let mut survivors: Vec<f64> = values.iter().map(|&v| v.max(0.0) / max).filter(|&m| m > DEAD_THRESHOLD).collect();
    let n = survivors.len();
    let mut nth = |k: usize| *survivors.select_nth_unstable_by(k, f64::total_cmp).1;
    let q1 = type7(n, 0.25, &mut nth);
    let median = type7(n, 0.5, &mut nth);
    let q3 = type7(n, 0.75, &mut nth);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let mut whisker_low = f64::INFINITY;
    let mut whisker_high = f64::NEG_INFINITY;
    let mut outliers = 0;
    for &m in &survivors {
        if m < lo_fence || m > hi_fence {
            outliers += 1;
        } else {
            whisker_low = whisker_low.min(m);
            whisker_high = whisker_high.max(m);
        }
    }
    Ok(LayerMagnitudeStats {
        layer: layer.to_string(),
        surviving: n,
        dead: values.len() - n,
        q1,
        median,
        q3,
        whisker_low,
        whisker_high,
        outliers,
    })
}

/// Analyzes every convolution and linear weight (tensors named `*.weight`
/// with two or more dimensions), in store order.
pub fn weight_magnitude_stats(store: &WeightStore) -> MagnitudeReport {
    let mut report = MagnitudeReport::default();
    for (name, t) in &store.tensors {
        if !name.ends_with(".weight") || t.shape.len() < 2 {
            continue;
        }
        match layer_magnitude_stats(name, &t.data.to_f64()) {
            Ok(s) => report.layers.push(s),
            Err(skip) => {
                log::warn!("skipping {}: {}", skip.layer, skip.reason);
                report.skipped.push(skip);
            }
        }
    }
    report
}
