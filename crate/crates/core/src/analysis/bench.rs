//! Wall-clock scaling of the attention block in the token count.

use std::time::Instant;

use serde::Serialize;

use crate::attention::{forward, AttentionConfig, AttentionWeights, OpCounter};
use crate::nn::Matrix;
use crate::rng::SplitMix64;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub p: usize,
    pub median_ns: f64,
    /// Median absolute deviation from the median.
    pub mad_ns: f64,
    pub mean_ns: f64,
    pub stddev_ns: f64,
    pub score_entries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Least-squares slope of `ln(median)` against `ln(p)` over the rows within
    /// a factor of ten of the largest `p`.
    pub slope: f64,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,median_ns,mad_ns,mean_ns,stddev_ns,score_entries\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.p, r.median_ns, r.mad_ns, r.mean_ns, r.stddev_ns, r.score_entries
            ));
        }
        out
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares slope of `y` on `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Times the float32 inference forward of one block at each `p` (ascending)
/// on the calling thread, after `warmup` untimed runs, with fixed weights.
pub fn benchmark_attention(
    cfg: &AttentionConfig,
    p_values: &[usize],
    repetitions: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport> {
    let weights = AttentionWeights::<f32>::random(cfg, seed);
    let mut rng = SplitMix64::new(seed ^ 0x5eed);
    let mut rows = Vec::with_capacity(p_values.len());
    for &p in p_values {
        let tokens = Matrix::from_fn(p, cfg.channels, |_, _| rng.uniform(-1.0, 1.0) as f32);
        let mut ops = OpCounter::default();
        for _ in 0..warmup {
            forward(cfg, &weights, &tokens, None, &mut OpCounter::default())?;
        }
        let mut times = Vec::with_capacity(repetitions.max(1));
        for rep in 0..repetitions.max(1) {
            let mut run_ops = OpCounter::default();
            let start = Instant::now();
            let out = forward(cfg, &weights, &tokens, None, &mut run_ops)?;
            times.push(start.elapsed().as_nanos() as f64);
            std::hint::black_box(out);
            if rep == 0 {
                ops = run_ops;
            }
        }
        let n = times.len() as f64;
        let mean = times.iter().sum::<f64>() / n;
        let var = times.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n;
        let med = median(&mut times.clone());
        let mut dev: Vec<f64> = times.iter().map(|t| (t - med).abs()).collect();
        rows.push(BenchRow {
            p,
            median_ns: med,
            mad_ns: median(&mut dev),
            mean_ns: mean,
            stddev_ns: var.sqrt(),
            score_entries: ops.score_entries,
        });
    }
    let p_max = p_values.iter().copied().max().unwrap_or(0) as f64;
    let fit: Vec<&BenchRow> = rows.iter().filter(|r| r.p as f64 >= p_max / 10.0 && r.p > 0).collect();
    let slope = if fit.len() >= 2 {
        let x: Vec<f64> = fit.iter().map(|r| (r.p as f64).ln()).collect();
        let y: Vec<f64> = fit.iter().map(|r| r.median_ns.max(1.0).ln()).collect();
        fit_slope(&x, &y)
    } else {
        f64::NAN
    };
    Ok(BenchReport { rows, slope })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let x: Vec<f64> = [1.0f64, 2.0, 4.0, 8.0].iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = [1.0f64, 4.0, 16.0, 64.0].iter().map(|v| v.ln()).collect();
        assert!((fit_slope(&x, &y) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn score_entries_are_p_squared() {
        let cfg = AttentionConfig::new(8, 8);
        let r = benchmark_attention(&cfg, &[0, 3, 17], 2, 0, 1).unwrap();
        let entries: Vec<u64> = r.rows.iter().map(|r| r.score_entries).collect();
        assert_eq!(entries, vec![0, 9, 289]);
        assert_eq!(r.to_csv().lines().count(), 4);
    }
}
