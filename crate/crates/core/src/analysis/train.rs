//! Toy regression through one attention block with the analytic gradients.

use serde::Serialize;

use crate::attention::{backward, forward, forward_train, AttentionConfig, AttentionWeights, OpCounter};
use crate::nn::Matrix;
use crate::rng::SplitMix64;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    pub tokens: usize,
    pub channels: usize,
    pub hidden_dim: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { tokens: 32, channels: 8, hidden_dim: 16, steps: 500, learning_rate: 0.05, momentum: 0.9, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// MSE before each step.
    pub losses: Vec<f64>,
}

fn mse(out: &Matrix<f64>, target: &Matrix<f64>) -> f64 {
    out.data.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out.data.len() as f64
}

/// Fits the block to `Y = X M` for fixed random `X` (`tokens x C`) and `M`
/// (`C x C`) with momentum SGD on the mean squared error.
pub fn train_toy_regression(tc: &TrainConfig) -> Result<TrainReport> {
    let cfg = AttentionConfig::new(tc.channels, tc.hidden_dim);
    cfg.validate()?;
    let mut rng = SplitMix64::new(tc.seed);
    let c = tc.channels;
    let x = Matrix::from_fn(tc.tokens, c, |_, _| rng.uniform(-1.0, 1.0));
    let m = Matrix::from_fn(c, c, |_, _| rng.gaussian(0.0, 1.0 / (c as f64).sqrt()));
    let target = Matrix::from_fn(tc.tokens, c, |r, j| (0..c).map(|i| x.get(r, i) * m.get(i, j)).sum());

    let mut w = AttentionWeights::<f64>::random(&cfg, tc.seed ^ 0x7a11);
    let mut velocity = AttentionWeights::<f64>::zeros(&cfg);
    let scale = 2.0 / (tc.tokens * c) as f64;
    let mut losses = Vec::with_capacity(tc.steps);
    for _ in 0..tc.steps {
        let (out, cache) = forward_train(&cfg, &w, &x, None)?;
        losses.push(mse(&out, &target));
        let grad_out = Matrix::from_fn(tc.tokens, c, |r, j| scale * (out.get(r, j) - target.get(r, j)));
        let grads = backward(&cfg, &w, &cache, &grad_out)?;
        for ((_, wt), ((_, vt), (_, gt))) in
            w.named_mut().into_iter().zip(velocity.named_mut().into_iter().zip(grads.weights.named()))
        {
            for ((wi, vi), gi) in wt.iter_mut().zip(vt.iter_mut()).zip(gt) {
                *vi = tc.momentum * *vi + gi;
                *wi -= tc.learning_rate * *vi;
            }
        }
    }
    let out = forward(&cfg, &w, &x, None, &mut OpCounter::default())?;
    let final_mse = mse(&out, &target);
    let initial_mse = losses.first().copied().unwrap_or(final_mse);
    Ok(TrainReport { initial_mse, final_mse, losses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_run_decreases_loss() {
        let r = train_toy_regression(&TrainConfig { steps: 50, ..TrainConfig::default() }).unwrap();
        assert!(r.final_mse < r.initial_mse);
        assert_eq!(r.losses.len(), 50);
    }
}
