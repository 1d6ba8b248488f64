//! Fixed-seed oracle suites behind `rpk selfcheck`.

use std::path::PathBuf;

use serde::Serialize;

use crate::attention::{dense_masked_oracle, gradient_check, pillar_attention_infer, AttentionConfig, AttentionWeights};
use crate::features::{decompose_radial, pillar_velocity_offsets};
use crate::nn::ops::{conv2d, transposed_conv2d, ConvParams};
use crate::nn::{FeatureMap, Matrix, ModelConfig, Scalar, WeightStore};
use crate::pillars::{assign_pillars, gather_from_grid, scatter_to_grid, GridConfig, SparsePillarTensor};
use crate::radar_io::{generate_scene, SceneSpec};
use crate::rng::SplitMix64;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfCheckReport {
    pub float64: bool,
    pub suites: Vec<SuiteResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(|s| s.passed)
    }

    pub fn failures(&self) -> Vec<&str> {
        self.suites.iter().filter(|s| !s.passed).map(|s| s.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct SelfCheckOptions {
    /// Runs the precision-dependent suites in f64 with tighter tolerances.
    pub float64: bool,
    pub seed: u64,
    /// A weight directory to validate against a config.
    pub weights: Option<(ModelConfig, PathBuf)>,
}

fn suite(name: &str, outcome: Result<f64>, tolerance: f64, detail: String) -> SuiteResult {
    match outcome {
        Ok(err) => SuiteResult { name: name.into(), passed: err < tolerance, max_error: err, tolerance, detail },
        Err(e) => SuiteResult { name: name.into(), passed: false, max_error: f64::NAN, tolerance, detail: e.to_string() },
    }
}

/// Max abs difference between the sparse block and the dense masked oracle on
/// the occupied cells of one random grid with sides up to `max_side`.
pub fn sparse_vs_dense_instance<T: Scalar>(seed: u64, max_side: usize, hidden_dim: usize) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let h = rng.range_inclusive(1, max_side);
    let w = rng.range_inclusive(1, max_side);
    let c = rng.range_inclusive(1, 8);
    let mut cells: Vec<usize> = (0..h * w).collect();
    rng.shuffle(&mut cells);
    let p = rng.range_inclusive(0, h * w);
    let mut idx = cells[..p].to_vec();
    idx.sort_unstable();
    let feats = Matrix::from_fn(p, c, |_, _| T::from_f64(rng.uniform(-1.0, 1.0)));
    let sparse = SparsePillarTensor::new(feats, idx, h, w)?;
    let cfg = AttentionConfig::new(c, hidden_dim);
    let weights = AttentionWeights::<T>::random(&cfg, rng.next_u64());
    let (out, _) = pillar_attention_infer(&sparse, &weights, &cfg)?;
    let (dense, _) = dense_masked_oracle(&scatter_to_grid(&sparse)?, &weights, &cfg)?;
    let n = h * w;
    let mut diff = 0.0f64;
    for (r, &cell) in out.indices.iter().enumerate() {
        for ch in 0..c {
            diff = diff.max((out.features.get(r, ch).to_f64() - dense.features.data[ch * n + cell].to_f64()).abs());
        }
    }
    Ok(diff)
}

fn sparse_vs_dense<T: Scalar>(seed: u64, instances: usize) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..instances {
        let e = if i % 2 == 0 { 8 } else { 32 };
        worst = worst.max(sparse_vs_dense_instance::<T>(seed.wrapping_add(i as u64), 16, e)?);
    }
    Ok(worst)
}

fn gradients(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let c = rng.range_inclusive(1, 6);
        let e = 2 * rng.range_inclusive(1, 4);
        let mut cfg = AttentionConfig::new(c, e);
        cfg.heads = if rng.below(2) == 0 { 1 } else { 2 };
        let p = rng.range_inclusive(1, 8);
        let tokens = Matrix::from_fn(p, c, |_, _| rng.uniform(-1.0, 1.0));
        let w = AttentionWeights::<f64>::random(&cfg, rng.next_u64());
        worst = worst.max(gradient_check(&cfg, &w, &tokens, None, 1e-5, rng.next_u64())?.max_rel_error);
    }
    Ok(worst)
}

fn random_map<T: Scalar>(rng: &mut SplitMix64, c: usize, h: usize, w: usize) -> FeatureMap<T> {
    let data = (0..c * h * w).map(|_| T::from_f64(rng.uniform(-1.0, 1.0))).collect();
    FeatureMap::from_vec(c, h, w, data).expect("sized")
}

/// Relative mismatch of `<conv(x), y>` and `<x, tconv(y)>`, plus any
/// scatter/gather roundtrip error.
fn adjointness<T: Scalar>(seed: u64, instances: usize) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let side = 2 * rng.range_inclusive(2, 8);
        let (ci, co) = (rng.range_inclusive(1, 4), rng.range_inclusive(1, 4));
        let (p, op) = if rng.below(2) == 0 { (ConvParams::new(3, 1, 1), 0) } else { (ConvParams::new(3, 2, 1), 1) };
        let wt: Vec<T> = (0..co * ci * 9).map(|_| T::from_f64(rng.uniform(-1.0, 1.0))).collect();
        let x = random_map::<T>(&mut rng, ci, side, side);
        let out = conv2d(&x, &wt, co, None, p)?;
        let (_, ho, wo) = out.shape();
        let y = random_map::<T>(&mut rng, co, ho, wo);
        let lhs = out.dot(&y);
        let rhs = x.dot(&transposed_conv2d(&y, &wt, ci, None, p, op)?);
        worst = worst.max((lhs - rhs).abs() / lhs.abs().max(1.0));

        let mut cells: Vec<usize> = (0..side * side).collect();
        rng.shuffle(&mut cells);
        let mut idx = cells[..rng.below(side * side + 1)].to_vec();
        idx.sort_unstable();
        let feats = Matrix::from_fn(idx.len(), ci, |_, _| T::from_f64(rng.uniform(-1.0, 1.0)));
        let sparse = SparsePillarTensor::new(feats, idx, side, side)?;
        let back = gather_from_grid(&scatter_to_grid(&sparse)?);
        if back.indices != sparse.indices {
            return Err(crate::Error::Invariant("gather after scatter changed the indices".into()));
        }
        worst = worst.max(back.features.max_abs_diff(&sparse.features));
    }
    Ok(worst)
}

/// Velocity decomposition norm identity and zero-sum pillar offsets.
fn decomposition(seed: u64, points: usize) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    for _ in 0..points {
        let (x, y, v) = (rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(-30.0, 30.0));
        let d = decompose_radial(x, y, v);
        if !d.degenerate && v != 0.0 {
            worst = worst.max(((d.vx * d.vx + d.vy * d.vy) - v * v).abs() / (v * v));
        }
    }
    let (frame, _) = generate_scene(&SceneSpec { seed, ..SceneSpec::default() })?;
    let assignment = assign_pillars(&frame, &GridConfig::default())?;
    let v: Vec<f64> = frame.points.iter().map(|p| p.v_r).collect();
    for before_cap in [false, true] {
        let offsets = pillar_velocity_offsets(&v, &assignment, before_cap);
        let groups: Vec<&[usize]> = if before_cap {
            assignment.members.iter().map(Vec::as_slice).collect()
        } else {
            assignment.retained_members().collect()
        };
        for g in groups {
            worst = worst.max(g.iter().map(|&i| offsets[i]).sum::<f64>().abs());
        }
    }
    Ok(worst)
}

fn check_weights(cfg: &ModelConfig, dir: &std::path::Path) -> Result<f64> {
    WeightStore::load(dir)?.check_against(cfg)?;
    Ok(0.0)
}

pub fn run_selfcheck(opts: &SelfCheckOptions) -> SelfCheckReport {
    let seed = opts.seed;
    let mut suites = Vec::new();
    let (sd, sd_tol, adj, adj_tol) = if opts.float64 {
        (sparse_vs_dense::<f64>(seed, 20), 1e-10, adjointness::<f64>(seed, 20), 1e-11)
    } else {
        (sparse_vs_dense::<f32>(seed, 20), 1e-5, adjointness::<f32>(seed, 20), 1e-5)
    };
    suites.push(suite("sparse_vs_dense_attention", sd, sd_tol, "20 grids up to 16x16, E in {8, 32}".into()));
    suites.push(suite("attention_gradients", gradients(seed, 5), 1e-6, "f64 central differences, h = 1e-5".into()));
    suites.push(suite("conv_and_scatter_adjointness", adj, adj_tol, "20 random maps up to 16x16".into()));
    suites.push(suite("velocity_decomposition", decomposition(seed, 10_000), 1e-6, "norm identity and offset sums".into()));
    if let Some((cfg, dir)) = &opts.weights {
        suites.push(suite("weight_file", check_weights(cfg, dir), 0.5, dir.display().to_string()));
    }
    SelfCheckReport { float64: opts.float64, suites }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;

    #[test]
    fn all_suites_pass_in_both_precisions() {
        for float64 in [false, true] {
            let r = run_selfcheck(&SelfCheckOptions { float64, ..SelfCheckOptions::default() });
            assert!(r.passed(), "{:?}", r.suites);
        }
    }

    #[test]
    fn corrupted_weight_file_fails() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = ModelConfig::preset("uniform-c16").unwrap();
        cfg.grid = cfg.grid.with_cells(32, 32);
        init_weights(&cfg, 1).save(dir.path()).unwrap();
        let ok = run_selfcheck(&SelfCheckOptions { weights: Some((cfg.clone(), dir.path().into())), ..Default::default() });
        assert!(ok.passed());
        let other = ModelConfig::preset("uniform-c32").unwrap();
        let bad = run_selfcheck(&SelfCheckOptions { weights: Some((other, dir.path().into())), ..Default::default() });
        assert_eq!(bad.failures(), vec!["weight_file"]);
        assert!(bad.suites.last().unwrap().detail.contains("shape"));
    }
}
