//! Reference attention over the full dense grid. Every cell becomes a token
//! and scores involving unoccupied cells are set to `-inf` before the softmax,
//! so the `(HW)^2` score matrix is materialized. Shares no code with the sparse
//! path beyond the scalar GELU.

use super::block::{AttentionConfig, AttentionWeights, Linear, OpCounter};
use crate::nn::config::ProjActivation;
use crate::nn::ops::{gelu, LAYER_NORM_EPS};
use crate::nn::{FeatureMap, Scalar};
use crate::pillars::DenseGrid;
use crate::{Error, Result};

fn affine<T: Scalar>(l: &Linear<T>, x: &[T]) -> Vec<T> {
    (0..l.weight.rows)
        .map(|o| {
            let mut acc = T::zero();
            for (k, &xv) in x.iter().enumerate() {
                acc = acc + xv * l.weight.get(o, k);
            }
            acc + l.bias[o]
        })
        .collect()
}

fn normalize<T: Scalar>(x: &[T], gamma: &[T], beta: &[T]) -> Vec<T> {
    let n = T::from_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let r = T::one() / (var + T::from_f64(LAYER_NORM_EPS)).sqrt();
    x.iter().enumerate().map(|(j, &v)| gamma[j] * ((v - mean) * r) + beta[j]).collect()
}

fn activate<T: Scalar>(act: ProjActivation, v: Vec<T>) -> Vec<T> {
    match act {
        ProjActivation::Identity => v,
        ProjActivation::Gelu => v.into_iter().map(gelu).collect(),
    }
}

pub fn dense_masked_oracle<T: Scalar>(
    grid: &DenseGrid<T>,
    w: &AttentionWeights<T>,
    cfg: &AttentionConfig,
) -> Result<(DenseGrid<T>, OpCounter)> {
    cfg.validate()?;
    let (c, h, wd) = grid.features.shape();
    if c != cfg.channels || grid.mask.len() != h * wd {
        return Err(Error::shape("oracle grid does not match the attention config"));
    }
    let n = h * wd;
    let e = cfg.hidden_dim;
    let d = cfg.head_dim();
    let token = |t: usize| -> Vec<T> { (0..c).map(|ch| grid.features.data[ch * n + t]).collect() };

    let x: Vec<Vec<T>> = (0..n).map(|t| activate(cfg.proj_activation, affine(&w.in_proj, &token(t)))).collect();
    let a: Vec<Vec<T>> = match &w.ln_attn {
        Some(ln) => x.iter().map(|r| normalize(r, &ln.gamma, &ln.beta)).collect(),
        None => x.clone(),
    };
    let q: Vec<Vec<T>> = a.iter().map(|r| affine(&w.q, r)).collect();
    let k: Vec<Vec<T>> = a.iter().map(|r| affine(&w.k, r)).collect();
    let v: Vec<Vec<T>> = a.iter().map(|r| affine(&w.v, r)).collect();

    let mut ops = OpCounter::default();
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let mut ctx = vec![vec![T::zero(); e]; n];
    for head in 0..cfg.heads {
        let lo = head * d;
        // Full score matrix for this head.
        let mut scores = vec![vec![T::zero(); n]; n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = T::zero();
                for t in lo..lo + d {
                    acc = acc + q[i][t] * k[j][t];
                }
                scores[i][j] = if grid.mask[i] && grid.mask[j] { acc * scale } else { T::neg_infinity() };
            }
        }
        ops.score_entries += (n * n) as u64;
        for i in 0..n {
            let row = &scores[i];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                continue;
            }
            let exps: Vec<T> = row.iter().map(|&s| (s - max).exp()).collect();
            let sum = exps.iter().fold(T::zero(), |acc, &v| acc + v);
            for j in 0..n {
                let p = exps[j] / sum;
                for t in lo..lo + d {
                    ctx[i][t] = ctx[i][t] + p * v[j][t];
                }
            }
        }
    }

    let mut out = FeatureMap::zeros(c, h, wd);
    for t in 0..n {
        if !grid.mask[t] {
            continue;
        }
        let attn = affine(&w.o, &ctx[t]);
        let y: Vec<T> = x[t].iter().zip(&attn).map(|(&a, &b)| a + b).collect();
        let hidden: Vec<T> = affine(&w.ffn1, &normalize(&y, &w.ln_ffn.gamma, &w.ln_ffn.beta)).into_iter().map(gelu).collect();
        let z: Vec<T> = y.iter().zip(affine(&w.ffn2, &hidden)).map(|(&a, b)| a + b).collect();
        let o = activate(cfg.proj_activation, affine(&w.out_proj, &z));
        for (ch, val) in o.into_iter().enumerate() {
            out.data[ch * n + t] = val;
        }
    }
    Ok((DenseGrid { features: out, mask: grid.mask.clone() }, ops))
}
