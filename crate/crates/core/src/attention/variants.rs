use serde::Serialize;

use super::block::{backward, forward, forward_train, AttentionCache, AttentionConfig, AttentionGrads, AttentionWeights, OpCounter};
use crate::nn::config::AttentionVariant;
use crate::nn::{FeatureMap, Matrix, Scalar};
use crate::pillars::{pfn_point_activations, PfnWeights, PillarAssignment, SparsePillarTensor};
use crate::{Error, Result};

/// Exported operation record of one attention call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AttentionOps {
    pub variant: AttentionVariant,
    #[serde(rename = "H")]
    pub h: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub p: usize,
    pub score_entries: u64,
    pub flops: u64,
}

impl AttentionOps {
    pub fn new(variant: AttentionVariant, h: usize, w: usize, p: usize, ops: OpCounter) -> Self {
        Self { variant, h, w, p, score_entries: ops.score_entries, flops: ops.flops() }
    }
}

fn same_indices<T: Scalar>(sparse: &SparsePillarTensor<T>, features: Matrix<T>) -> SparsePillarTensor<T> {
    SparsePillarTensor { features, indices: sparse.indices.clone(), height: sparse.height, width: sparse.width }
}

/// Occupied pillars as tokens; indices and grid shape pass through unchanged.
pub fn pillar_attention_forward<T: Scalar>(
    sparse: &SparsePillarTensor<T>,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
) -> Result<(SparsePillarTensor<T>, AttentionCache<T>)> {
    sparse.check()?;
    let (out, cache) = forward_train(cfg, w, &sparse.features, None)?;
    Ok((same_indices(sparse, out), cache))
}

pub fn pillar_attention_backward<T: Scalar>(
    cfg: &AttentionConfig,
    w: &AttentionWeights<T>,
    cache: &AttentionCache<T>,
    grad_out: &Matrix<T>,
) -> Result<AttentionGrads<T>> {
    backward(cfg, w, cache, grad_out)
}

/// Inference path without the cache.
pub fn pillar_attention_infer<T: Scalar>(
    sparse: &SparsePillarTensor<T>,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
) -> Result<(SparsePillarTensor<T>, AttentionOps)> {
    sparse.check()?;
    let mut ops = OpCounter::default();
    let out = forward(cfg, w, &sparse.features, None, &mut ops)?;
    let rec = AttentionOps::new(AttentionVariant::Pillar, sparse.height, sparse.width, sparse.len(), ops);
    Ok((same_indices(sparse, out), rec))
}

/// Groups the retained point rows of `inputs` (frame order) by pillar, each
/// group zero-padded to the pillar cap. Returns the tokens and the validity of
/// every slot.
pub fn group_point_tokens<T: Scalar>(inputs: &Matrix<T>, assignment: &PillarAssignment) -> (Matrix<T>, Vec<bool>) {
    let cap = assignment.max_points_per_pillar;
    let n = assignment.num_pillars() * cap;
    let mut tokens = Matrix::zeros(n, inputs.cols);
    let mut valid = vec![false; n];
    for (pi, members) in assignment.retained_members().enumerate() {
        for (slot, &i) in members.iter().enumerate() {
            tokens.row_mut(pi * cap + slot).copy_from_slice(inputs.row(i));
            valid[pi * cap + slot] = true;
        }
    }
    (tokens, valid)
}

/// Every point is a token (groups padded to the pillar cap); attention runs
/// over all of them before the pillar encoder pools each group. With `masked`
/// the padding slots are excluded as keys.
pub fn point_attention_forward<T: Scalar>(
    inputs: &Matrix<T>,
    assignment: &PillarAssignment,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
    pfn: &PfnWeights<T>,
    masked: bool,
) -> Result<(SparsePillarTensor<T>, AttentionOps)> {
    if inputs.rows != assignment.members_len() {
        return Err(Error::shape(format!("{} input rows for {} points", inputs.rows, assignment.members_len())));
    }
    let (tokens, valid) = group_point_tokens(inputs, assignment);
    let mut ops = OpCounter::default();
    let attended = forward(cfg, w, &tokens, masked.then_some(valid.as_slice()), &mut ops)?;
    let act = pfn_point_activations(&attended, pfn)?;
    let cap = assignment.max_points_per_pillar;
    let c = act.cols;
    let mut pooled = Matrix::zeros(assignment.num_pillars(), c);
    for (pi, &count) in assignment.counts.iter().enumerate() {
        let dst = pooled.row_mut(pi);
        dst.copy_from_slice(act.row(pi * cap));
        for slot in 1..count {
            for (d, &v) in dst.iter_mut().zip(act.row(pi * cap + slot)) {
                if v > *d {
                    *d = v;
                }
            }
        }
    }
    let variant = if masked { AttentionVariant::PointMasked } else { AttentionVariant::PointUnmasked };
    let rec = AttentionOps::new(variant, assignment.n_y, assignment.n_x, tokens.rows, ops);
    let sparse = SparsePillarTensor::new(pooled, assignment.occupied.clone(), assignment.n_y, assignment.n_x)?;
    Ok((sparse, rec))
}

/// Dense attention over every cell of a feature map (flattened row-major).
/// Refuses maps with more than `token_limit` cells.
pub fn feature_attention_forward<T: Scalar>(
    map: &FeatureMap<T>,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
    token_limit: usize,
) -> Result<(FeatureMap<T>, AttentionOps)> {
    let (c, h, wd) = map.shape();
    let n = h * wd;
    if n > token_limit {
        return Err(Error::Resource(format!(
            "feature attention over {h}x{wd} = {n} tokens exceeds the limit of {token_limit}"
        )));
    }
    let tokens = Matrix::from_fn(n, c, |t, ch| map.data[ch * n + t]);
    let mut ops = OpCounter::default();
    let out = forward(cfg, w, &tokens, None, &mut ops)?;
    let oc = out.cols;
    let mut data = vec![T::zero(); oc * n];
    for t in 0..n {
        for (ch, &v) in out.row(t).iter().enumerate() {
            data[ch * n + t] = v;
        }
    }
    let rec = AttentionOps::new(AttentionVariant::FeatureLate, h, wd, n, ops);
    Ok((FeatureMap::from_vec(oc, h, wd, data)?, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::dense_masked_oracle;
    use crate::nn::ops::BatchNorm;
    use crate::pillars::{assign_pillars, scatter_to_grid, GridConfig};
    use crate::radar_io::{RadarFrame, RadarPoint};
    use crate::rng::SplitMix64;

    fn pfn(d: usize, c: usize) -> PfnWeights<f64> {
        let mut rng = SplitMix64::new(77);
        PfnWeights { linear: Matrix::from_fn(c, d, |_, _| rng.uniform(-1.0, 1.0)), bn: BatchNorm::identity(c) }
    }

    fn toy_frame() -> RadarFrame {
        // Two pillars: three points in one, one in the other.
        let p = |x, y| RadarPoint::new(x, y, 0.0, 1.0, 0.5, 0.5);
        RadarFrame::new("toy", vec![p(10.0, 0.01), p(10.02, 0.03), p(10.05, 0.07), p(20.0, 5.0)])
    }

    fn inputs(n: usize, d: usize) -> Matrix<f64> {
        let mut rng = SplitMix64::new(5);
        Matrix::from_fn(n, d, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn padding_gets_zero_weight_when_masked() {
        let frame = toy_frame();
        let a = assign_pillars(&frame, &GridConfig { max_points_per_pillar: 4, ..GridConfig::default() }).unwrap();
        assert_eq!(a.counts, vec![3, 1]);
        let x = inputs(4, 3);
        let (tokens, valid) = group_point_tokens(&x, &a);
        assert_eq!(valid, vec![true, true, true, false, true, false, false, false]);
        let cfg = AttentionConfig::new(3, 4);
        let w = AttentionWeights::random(&cfg, 2);
        let (_, cache) = forward_train(&cfg, &w, &tokens, Some(&valid)).unwrap();
        for i in 0..tokens.rows {
            for (j, &ok) in valid.iter().enumerate() {
                if !ok {
                    assert_eq!(cache.probs[0].get(i, j), 0.0);
                }
            }
        }
        let (_, cache) = forward_train(&cfg, &w, &tokens, None).unwrap();
        assert!(cache.probs[0].get(0, 3) > 0.0);
    }

    #[test]
    fn masked_and_unmasked_agree_without_padding() {
        let frame = RadarFrame::new("full", vec![RadarPoint::new(10.0, 0.01, 0.0, 1.0, 0.5, 0.5), RadarPoint::new(12.0, 0.01, 0.0, 1.0, 0.5, 0.5)]);
        let a = assign_pillars(&frame, &GridConfig { max_points_per_pillar: 1, ..GridConfig::default() }).unwrap();
        let cfg = AttentionConfig::new(3, 4);
        let w = AttentionWeights::random(&cfg, 2);
        let x = inputs(2, 3);
        let p = pfn(3, 5);
        let (m, _) = point_attention_forward(&x, &a, &w, &cfg, &p, true).unwrap();
        let (u, _) = point_attention_forward(&x, &a, &w, &cfg, &p, false).unwrap();
        assert_eq!(m, u);
    }

    #[test]
    fn single_point_matches_single_pillar() {
        let frame = RadarFrame::new("one", vec![RadarPoint::new(10.0, 0.01, 0.0, 1.0, 0.5, 0.5)]);
        let a = assign_pillars(&frame, &GridConfig::default()).unwrap();
        let cfg = AttentionConfig::new(3, 4);
        let w = AttentionWeights::random(&cfg, 3);
        let x = inputs(1, 3);
        let p = pfn(3, 5);
        let (s, ops) = point_attention_forward(&x, &a, &w, &cfg, &p, true).unwrap();
        assert_eq!(ops.p, 10);
        let mut o = OpCounter::default();
        let direct = forward(&cfg, &w, &x, None, &mut o).unwrap();
        let want = pfn_point_activations(&direct, &p).unwrap();
        assert!(s.features.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn feature_attention_shapes_and_guard() {
        let cfg = AttentionConfig { variant: AttentionVariant::FeatureLate, ..AttentionConfig::new(3, 4) };
        let w = AttentionWeights::<f32>::random(&cfg, 4);
        let map = FeatureMap::from_vec(3, 4, 4, (0..48).map(|v| v as f32 * 0.01).collect()).unwrap();
        let (out, ops) = feature_attention_forward(&map, &w, &cfg, 32768).unwrap();
        assert_eq!(out.shape(), (3, 4, 4));
        assert_eq!(ops.score_entries, 256);
        assert!(matches!(feature_attention_forward(&map, &w, &cfg, 15), Err(Error::Resource(_))));
    }

    #[test]
    fn constant_map_gives_uniform_attention() {
        let cfg = AttentionConfig::new(2, 4);
        let w = AttentionWeights::<f64>::random(&cfg, 6);
        let tokens = Matrix::from_fn(9, 2, |_, c| [0.3, -0.7][c]);
        let (_, cache) = forward_train(&cfg, &w, &tokens, None).unwrap();
        assert!(cache.probs[0].data.iter().all(|&p| (p - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn sparse_path_matches_oracle_on_toy_grid() {
        let mut rng = SplitMix64::new(8);
        let idx = vec![0, 5, 6, 15];
        let feats = Matrix::from_fn(4, 3, |_, _| rng.uniform(-1.0, 1.0) as f32);
        let s = SparsePillarTensor::new(feats, idx, 4, 4).unwrap();
        let cfg = AttentionConfig::new(3, 8);
        let w = AttentionWeights::<f32>::random(&cfg, 1);
        let (out, ops) = pillar_attention_infer(&s, &w, &cfg).unwrap();
        let (dense, oracle_ops) = dense_masked_oracle(&scatter_to_grid(&s).unwrap(), &w, &cfg).unwrap();
        assert_eq!(ops.score_entries, 16);
        assert_eq!(oracle_ops.score_entries, 256);
        let sparse_dense = scatter_to_grid(&out).unwrap();
        let diff = sparse_dense
            .features
            .data
            .iter()
            .zip(&dense.features.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(diff < 1e-5, "{diff}");
    }
}
