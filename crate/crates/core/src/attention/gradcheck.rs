use indexmap::IndexMap;
use serde::Serialize;

use super::block::{backward, forward, forward_train, AttentionConfig, AttentionWeights, OpCounter};
use crate::nn::Matrix;
use crate::rng::SplitMix64;
use crate::Result;

/// Per-tensor relative error `max|analytic - numeric| / max(max|numeric|, floor)`
/// with `floor = 1e-3` times the largest numeric gradient over all tensors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub per_tensor: IndexMap<String, f64>,
    pub max_rel_error: f64,
}

/// Compares the analytic backward against central differences with step `h`
/// on the scalar loss `sum(R * out)` for a fixed random `R`.
pub fn gradient_check(
    cfg: &AttentionConfig,
    weights: &AttentionWeights<f64>,
    tokens: &Matrix<f64>,
    key_mask: Option<&[bool]>,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = SplitMix64::new(seed);
    let r = Matrix::from_fn(tokens.rows, cfg.channels, |_, _| rng.uniform(-1.0, 1.0));
    let loss = |w: &AttentionWeights<f64>, x: &Matrix<f64>| -> Result<f64> {
        let out = forward(cfg, w, x, key_mask, &mut OpCounter::default())?;
        Ok(out.data.iter().zip(&r.data).map(|(a, b)| a * b).sum())
    };
    let (_, cache) = forward_train(cfg, weights, tokens, key_mask)?;
    let grads = backward(cfg, weights, &cache, &r)?;

    let mut per_tensor = IndexMap::new();
    let mut x = tokens.clone();
    let mut numeric = vec![0.0; x.data.len()];
    for i in 0..x.data.len() {
        let orig = x.data[i];
        x.data[i] = orig + h;
        let plus = loss(weights, &x)?;
        x.data[i] = orig - h;
        let minus = loss(weights, &x)?;
        x.data[i] = orig;
        numeric[i] = (plus - minus) / (2.0 * h);
    }
    let mut pairs = vec![("input".to_string(), grads.input.data.clone(), numeric)];

    let analytic: Vec<(String, Vec<f64>)> =
        grads.weights.named().into_iter().map(|(n, v)| (n, v.to_vec())).collect();
    let mut w = weights.clone();
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for i in 0..a.len() {
            let orig = w.named()[ti].1[i];
            w.named_mut()[ti].1[i] = orig + h;
            let plus = loss(&w, tokens)?;
            w.named_mut()[ti].1[i] = orig - h;
            let minus = loss(&w, tokens)?;
            w.named_mut()[ti].1[i] = orig;
            numeric[i] = (plus - minus) / (2.0 * h);
        }
        pairs.push((name.clone(), a.clone(), numeric));
    }
    // Some gradients are exactly zero (the key bias cancels in the softmax);
    // their finite differences are pure roundoff, so the denominator is floored
    // at a small fraction of the largest gradient of the loss.
    let global = pairs.iter().flat_map(|(_, _, n)| n.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * global).max(1e-12);
    for (name, analytic, numeric) in pairs {
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(floor);
        let diff = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        per_tensor.insert(name, diff / scale);
    }
    let max_rel_error = per_tensor.values().fold(0.0f64, |m, &v| m.max(v));
    Ok(GradCheckReport { per_tensor, max_rel_error })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::config::ProjActivation;

    fn tokens(n: usize, c: usize, seed: u64) -> Matrix<f64> {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(n, c, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = AttentionConfig::new(4, 8);
        let w = AttentionWeights::random(&cfg, 11);
        let r = gradient_check(&cfg, &w, &tokens(8, 4, 12), None, 1e-5, 13).unwrap();
        assert_eq!(r.per_tensor.len(), 19);
        assert!(r.max_rel_error < 1e-6, "{:?}", r.per_tensor);
    }

    #[test]
    fn gradients_with_heads_prenorm_mask_and_gelu_projections() {
        let cfg = AttentionConfig {
            heads: 2,
            prenorm_attention: true,
            proj_activation: ProjActivation::Gelu,
            ..AttentionConfig::new(3, 4)
        };
        let w = AttentionWeights::random(&cfg, 21);
        let mask = [true, false, true, true, false, true];
        let r = gradient_check(&cfg, &w, &tokens(6, 3, 22), Some(&mask), 1e-5, 23).unwrap();
        assert!(r.max_rel_error < 1e-6, "{:?}", r.per_tensor);
    }
}
