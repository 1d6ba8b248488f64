//! The transformer block shared by every attention variant:
//!
//! ```text
//! x = in_proj(u)                      C -> E
//! y = x + Wo * softmax(Q K^T / sqrt(d)) V
//! z = y + W2 * gelu(W1 * LayerNorm(y))
//! out = out_proj(z)                   E -> C
//! ```

use serde::Serialize;

use crate::nn::config::{AttentionSettings, AttentionVariant, ProjActivation};
use crate::nn::ops::{gelu, gelu_grad, layer_norm, linear, LayerNormCache};
use crate::nn::{Matrix, Scalar, WeightStore};
use crate::rng::SplitMix64;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttentionConfig {
    pub channels: usize,
    pub hidden_dim: usize,
    pub heads: usize,
    pub expansion: usize,
    pub variant: AttentionVariant,
    pub prenorm_attention: bool,
    pub proj_activation: ProjActivation,
}

impl AttentionConfig {
    pub fn new(channels: usize, hidden_dim: usize) -> Self {
        Self {
            channels,
            hidden_dim,
            heads: 1,
            expansion: 2,
            variant: AttentionVariant::Pillar,
            prenorm_attention: false,
            proj_activation: ProjActivation::Identity,
        }
    }

    pub fn from_settings(channels: usize, s: &AttentionSettings) -> Self {
        Self {
            channels,
            hidden_dim: s.hidden_dim,
            heads: s.heads,
            expansion: s.ffn_expansion,
            variant: s.variant,
            prenorm_attention: s.prenorm_attention,
            proj_activation: s.proj_activation,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.hidden_dim == 0 || self.heads == 0 || !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "attention needs C > 0 and E ({}) divisible by heads ({})",
                self.hidden_dim, self.heads
            )));
        }
        if self.expansion == 0 {
            return Err(Error::config("ffn expansion must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `out x in`.
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    fn zeros(out: usize, inp: usize) -> Self {
        Self { weight: Matrix::zeros(out, inp), bias: vec![T::zero(); out] }
    }

    fn random(out: usize, inp: usize, rng: &mut SplitMix64) -> Self {
        let b = 1.0 / (inp as f64).sqrt();
        Self {
            weight: Matrix::from_fn(out, inp, |_, _| T::from_f64(rng.uniform(-b, b))),
            bias: (0..out).map(|_| T::from_f64(rng.uniform(-b, b))).collect(),
        }
    }

    fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        linear(x, &self.weight, Some(&self.bias))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> Norm<T> {
    fn unit(e: usize) -> Self {
        Self { gamma: vec![T::one(); e], beta: vec![T::zero(); e] }
    }

    fn zeros(e: usize) -> Self {
        Self { gamma: vec![T::zero(); e], beta: vec![T::zero(); e] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub in_proj: Linear<T>,
    pub ln_attn: Option<Norm<T>>,
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub ln_ffn: Norm<T>,
    pub ffn1: Linear<T>,
    pub ffn2: Linear<T>,
    pub out_proj: Linear<T>,
}

impl<T: Scalar> AttentionWeights<T> {
    fn build(cfg: &AttentionConfig, mut lin: impl FnMut(usize, usize) -> Linear<T>, norm: impl Fn(usize) -> Norm<T>) -> Self {
        let (c, e, f) = (cfg.channels, cfg.hidden_dim, cfg.expansion * cfg.hidden_dim);
        Self {
            in_proj: lin(e, c),
            ln_attn: cfg.prenorm_attention.then(|| norm(e)),
            q: lin(e, e),
            k: lin(e, e),
            v: lin(e, e),
            o: lin(e, e),
            ln_ffn: norm(e),
            ffn1: lin(f, e),
            ffn2: lin(e, f),
            out_proj: lin(c, e),
        }
    }

    /// Uniform `+-1/sqrt(fan_in)` weights and biases, unit layer norms; for tests.
    pub fn random(cfg: &AttentionConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self::build(cfg, |o, i| Linear::random(o, i, &mut rng), Norm::unit)
    }

    pub fn zeros(cfg: &AttentionConfig) -> Self {
        Self::build(cfg, Linear::zeros, Norm::zeros)
    }

    /// Reads `{prefix}.{name}` tensors written by the model initializer.
    pub fn from_store(store: &WeightStore, prefix: &str, cfg: &AttentionConfig) -> Result<Self> {
        let mut w = Self::zeros(cfg);
        for (name, slot) in w.named_mut() {
            let full = format!("{prefix}.{name}");
            let t = store.get(&full)?;
            if t.data.len() != slot.len() {
                return Err(Error::shape(format!(
                    "tensor `{full}` has {} values, expected {}",
                    t.data.len(),
                    slot.len()
                )));
            }
            slot.copy_from_slice(&t.data.to_vec::<T>());
        }
        Ok(w)
    }

    pub fn named(&self) -> Vec<(String, &[T])> {
        let mut out: Vec<(String, &[T])> = Vec::new();
        for (n, l) in self.linears() {
            out.push((format!("{n}.weight"), &l.weight.data));
            out.push((format!("{n}.bias"), &l.bias));
        }
        if let Some(ln) = &self.ln_attn {
            out.push(("ln_attn.weight".into(), &ln.gamma));
            out.push(("ln_attn.bias".into(), &ln.beta));
        }
        out.push(("ln_ffn.weight".into(), &self.ln_ffn.gamma));
        out.push(("ln_ffn.bias".into(), &self.ln_ffn.beta));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut [T])> {
        let mut out: Vec<(String, &mut [T])> = Vec::new();
        let Self { in_proj, ln_attn, q, k, v, o, ln_ffn, ffn1, ffn2, out_proj } = self;
        for (n, l) in [
            ("in_proj", in_proj),
            ("q", q),
            ("k", k),
            ("v", v),
            ("o", o),
            ("ffn1", ffn1),
            ("ffn2", ffn2),
            ("out_proj", out_proj),
        ] {
            out.push((format!("{n}.weight"), &mut l.weight.data));
            out.push((format!("{n}.bias"), &mut l.bias));
        }
        if let Some(ln) = ln_attn {
            out.push(("ln_attn.weight".into(), &mut ln.gamma));
            out.push(("ln_attn.bias".into(), &mut ln.beta));
        }
        out.push(("ln_ffn.weight".into(), &mut ln_ffn.gamma));
        out.push(("ln_ffn.bias".into(), &mut ln_ffn.beta));
        out
    }

    fn linears(&self) -> [(&'static str, &Linear<T>); 8] {
        [
            ("in_proj", &self.in_proj),
            ("q", &self.q),
            ("k", &self.k),
            ("v", &self.v),
            ("o", &self.o),
            ("ffn1", &self.ffn1),
            ("ffn2", &self.ffn2),
            ("out_proj", &self.out_proj),
        ]
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, v)| v.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> AttentionWeights<U> {
        let lin = |l: &Linear<T>| Linear {
            weight: l.weight.cast(),
            bias: l.bias.iter().map(|v| U::from_f64((*v).to_f64())).collect(),
        };
        let norm = |n: &Norm<T>| Norm {
            gamma: n.gamma.iter().map(|v| U::from_f64((*v).to_f64())).collect(),
            beta: n.beta.iter().map(|v| U::from_f64((*v).to_f64())).collect(),
        };
        AttentionWeights {
            in_proj: lin(&self.in_proj),
            ln_attn: self.ln_attn.as_ref().map(norm),
            q: lin(&self.q),
            k: lin(&self.k),
            v: lin(&self.v),
            o: lin(&self.o),
            ln_ffn: norm(&self.ln_ffn),
            ffn1: lin(&self.ffn1),
            ffn2: lin(&self.ffn2),
            out_proj: lin(&self.out_proj),
        }
    }

    fn check(&self, cfg: &AttentionConfig) -> Result<()> {
        let e = cfg.hidden_dim;
        if self.in_proj.weight.shape() != (e, cfg.channels)
            || self.out_proj.weight.shape() != (cfg.channels, e)
            || self.q.weight.shape() != (e, e)
            || self.ffn1.weight.shape() != (cfg.expansion * e, e)
            || self.ln_attn.is_some() != cfg.prenorm_attention
        {
            return Err(Error::shape("attention weights do not match the attention config"));
        }
        Ok(())
    }
}

/// Counts of the work actually done by a forward call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCounter {
    /// Query-key dot products evaluated (summed over heads).
    pub score_entries: u64,
    pub macs: u64,
}

impl OpCounter {
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

fn apply_activation<T: Scalar>(act: ProjActivation, m: &mut Matrix<T>) {
    if act == ProjActivation::Gelu {
        m.data.iter_mut().for_each(|v| *v = gelu(*v));
    }
}

fn check_input<T: Scalar>(cfg: &AttentionConfig, w: &AttentionWeights<T>, x: &Matrix<T>, mask: Option<&[bool]>) -> Result<()> {
    cfg.validate()?;
    w.check(cfg)?;
    if x.cols != cfg.channels {
        return Err(Error::shape(format!("attention tokens have {} channels, expected {}", x.cols, cfg.channels)));
    }
    if mask.is_some_and(|m| m.len() != x.rows) {
        return Err(Error::shape("key mask length differs from token count"));
    }
    Ok(())
}

fn linear_macs(n: usize, l: &Linear<impl Scalar>) -> u64 {
    (n * l.weight.rows * l.weight.cols) as u64
}

fn projection_macs<T: Scalar>(n: usize, w: &AttentionWeights<T>) -> u64 {
    w.linears().iter().map(|(_, l)| linear_macs(n, l)).sum()
}

/// Scaled dot-product attention of every query against the allowed keys,
/// one query row at a time; `probs` receives each head's probability rows
/// when given.
#[allow(clippy::too_many_arguments)]
fn attend<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    heads: usize,
    key_mask: Option<&[bool]>,
    ops: &mut OpCounter,
    mut probs: Option<&mut Vec<Matrix<T>>>,
) -> Matrix<T> {
    let n = q.rows;
    let e = q.cols;
    let d = e / heads;
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let keys: Vec<usize> = match key_mask {
        Some(m) => (0..n).filter(|&j| m[j]).collect(),
        None => (0..n).collect(),
    };
    if let Some(p) = probs.as_deref_mut() {
        *p = (0..heads).map(|_| Matrix::zeros(n, n)).collect();
    }
    let mut ctx = Matrix::zeros(n, e);
    let mut row = vec![T::zero(); keys.len()];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for i in 0..n {
            let qi = &q.row(i)[cols.clone()];
            for (slot, &j) in row.iter_mut().zip(&keys) {
                let kj = &k.row(j)[cols.clone()];
                let mut acc = T::zero();
                for t in 0..d {
                    acc = acc + qi[t] * kj[t];
                }
                *slot = acc * scale;
            }
            crate::nn::ops::softmax_inplace(&mut row);
            let out = &mut ctx.row_mut(i)[cols.clone()];
            for (&pj, &j) in row.iter().zip(&keys) {
                let vj = &v.row(j)[cols.clone()];
                for t in 0..d {
                    out[t] = out[t] + pj * vj[t];
                }
            }
            if let Some(p) = probs.as_deref_mut() {
                for (&pj, &j) in row.iter().zip(&keys) {
                    p[h].set(i, j, pj);
                }
            }
        }
    }
    let m = (n * keys.len()) as u64;
    ops.score_entries += m * heads as u64;
    ops.macs += 2 * m * e as u64;
    ctx
}

/// Activations of one forward pass, kept for [`backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache<T> {
    pub input: Matrix<T>,
    /// In-projection output before the optional activation.
    pub x_pre: Matrix<T>,
    pub x: Matrix<T>,
    pub ln_attn: Option<LayerNormCache<T>>,
    /// Input of the Q/K/V projections (`x` or its layer norm).
    pub a: Matrix<T>,
    pub q: Matrix<T>,
    pub k: Matrix<T>,
    pub v: Matrix<T>,
    /// Per head, `n x n` row-stochastic (masked keys get probability 0).
    pub probs: Vec<Matrix<T>>,
    pub ctx: Matrix<T>,
    pub y: Matrix<T>,
    pub ln_ffn: LayerNormCache<T>,
    pub ln_out: Matrix<T>,
    pub h1: Matrix<T>,
    pub g: Matrix<T>,
    pub z: Matrix<T>,
    pub out_pre: Matrix<T>,
}

fn forward_impl<T: Scalar>(
    cfg: &AttentionConfig,
    w: &AttentionWeights<T>,
    input: &Matrix<T>,
    key_mask: Option<&[bool]>,
    ops: &mut OpCounter,
    keep: bool,
) -> Result<(Matrix<T>, Option<AttentionCache<T>>)> {
    check_input(cfg, w, input, key_mask)?;
    let n = input.rows;
    let x_pre = w.in_proj.apply(input)?;
    let mut x = x_pre.clone();
    apply_activation(cfg.proj_activation, &mut x);
    let (a, ln_attn) = match &w.ln_attn {
        Some(ln) => {
            let (a, c) = layer_norm(&x, &ln.gamma, &ln.beta)?;
            (a, Some(c))
        }
        None => (x.clone(), None),
    };
    let q = w.q.apply(&a)?;
    let k = w.k.apply(&a)?;
    let v = w.v.apply(&a)?;
    let mut probs = Vec::new();
    let ctx = attend(&q, &k, &v, cfg.heads, key_mask, ops, keep.then_some(&mut probs));
    let mut y = w.o.apply(&ctx)?;
    y.add_assign(&x);
    let (ln_out, ln_ffn) = layer_norm(&y, &w.ln_ffn.gamma, &w.ln_ffn.beta)?;
    let h1 = w.ffn1.apply(&ln_out)?;
    let mut g = h1.clone();
    g.data.iter_mut().for_each(|v| *v = gelu(*v));
    let mut z = w.ffn2.apply(&g)?;
    z.add_assign(&y);
    let out_pre = w.out_proj.apply(&z)?;
    let mut out = out_pre.clone();
    apply_activation(cfg.proj_activation, &mut out);
    ops.macs += projection_macs(n, w);

    let cache = keep.then(|| AttentionCache {
        input: input.clone(),
        x_pre,
        x,
        ln_attn,
        a,
        q,
        k,
        v,
        probs,
        ctx,
        y,
        ln_ffn,
        ln_out,
        h1,
        g,
        z,
        out_pre,
    });
    Ok((out, cache))
}

/// Inference forward; memory stays linear in the token count.
pub fn forward<T: Scalar>(
    cfg: &AttentionConfig,
    w: &AttentionWeights<T>,
    tokens: &Matrix<T>,
    key_mask: Option<&[bool]>,
    ops: &mut OpCounter,
) -> Result<Matrix<T>> {
    Ok(forward_impl(cfg, w, tokens, key_mask, ops, false)?.0)
}

/// Forward pass that keeps every intermediate, including the `n x n`
/// probability matrices, for [`backward`].
pub fn forward_train<T: Scalar>(
    cfg: &AttentionConfig,
    w: &AttentionWeights<T>,
    tokens: &Matrix<T>,
    key_mask: Option<&[bool]>,
) -> Result<(Matrix<T>, AttentionCache<T>)> {
    let mut ops = OpCounter::default();
    let (out, cache) = forward_impl(cfg, w, tokens, key_mask, &mut ops, true)?;
    Ok((out, cache.expect("cache requested")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrads<T> {
    pub input: Matrix<T>,
    /// Same layout as the weights; use [`AttentionWeights::named`] to pair them.
    pub weights: AttentionWeights<T>,
}

/// `a^T b` for `a: n x p`, `b: n x q`.
fn matmul_tn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let ar = a.row(r);
        let br = b.row(r);
        for (i, &av) in ar.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let o = out.row_mut(i);
            for (j, &bv) in br.iter().enumerate() {
                o[j] = o[j] + av * bv;
            }
        }
    }
    out
}

/// `a b` for `a: n x p`, `b: p x q`.
fn matmul_nn<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let ar = a.row(i);
        let o = out.row_mut(i);
        for (t, &av) in ar.iter().enumerate() {
            let br = b.row(t);
            for j in 0..o.len() {
                o[j] = o[j] + av * br[j];
            }
        }
    }
    out
}

fn column_sums<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    let mut out = vec![T::zero(); m.cols];
    for r in 0..m.rows {
        for (o, &v) in out.iter_mut().zip(m.row(r)) {
            *o = *o + v;
        }
    }
    out
}

/// Gradients of a linear layer; returns the gradient w.r.t. its input.
fn linear_backward<T: Scalar>(l: &Linear<T>, input: &Matrix<T>, d_out: &Matrix<T>, grad: &mut Linear<T>) -> Matrix<T> {
    grad.weight = matmul_tn(d_out, input);
    grad.bias = column_sums(d_out);
    matmul_nn(d_out, &l.weight)
}

fn layer_norm_backward<T: Scalar>(
    norm: &Norm<T>,
    cache: &LayerNormCache<T>,
    d_out: &Matrix<T>,
    grad: &mut Norm<T>,
) -> Matrix<T> {
    let (n, e) = d_out.shape();
    let mut dx = Matrix::zeros(n, e);
    grad.gamma = vec![T::zero(); e];
    grad.beta = vec![T::zero(); e];
    let inv_e = T::from_f64(1.0 / e as f64);
    for i in 0..n {
        let go = d_out.row(i);
        let xh = cache.normalized.row(i);
        let mut mean_d = T::zero();
        let mut mean_dx = T::zero();
        for j in 0..e {
            grad.gamma[j] = grad.gamma[j] + go[j] * xh[j];
            grad.beta[j] = grad.beta[j] + go[j];
            let dxh = go[j] * norm.gamma[j];
            mean_d = mean_d + dxh;
            mean_dx = mean_dx + dxh * xh[j];
        }
        mean_d = mean_d * inv_e;
        mean_dx = mean_dx * inv_e;
        let r = cache.rstd[i];
        let row = dx.row_mut(i);
        for j in 0..e {
            let dxh = go[j] * norm.gamma[j];
            row[j] = r * (dxh - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

fn activation_backward<T: Scalar>(act: ProjActivation, pre: &Matrix<T>, d: &mut Matrix<T>) {
    if act == ProjActivation::Gelu {
        for (g, &p) in d.data.iter_mut().zip(&pre.data) {
            *g = *g * gelu_grad(p);
        }
    }
}

/// Exact gradients of the block output w.r.t. the input tokens and every
/// weight, given the upstream gradient `grad_out` (`n x C`).
pub fn backward<T: Scalar>(
    cfg: &AttentionConfig,
    w: &AttentionWeights<T>,
    cache: &AttentionCache<T>,
    grad_out: &Matrix<T>,
) -> Result<AttentionGrads<T>> {
    let n = cache.input.rows;
    if grad_out.shape() != (n, cfg.channels) {
        return Err(Error::shape(format!("grad_out {:?}, expected ({n}, {})", grad_out.shape(), cfg.channels)));
    }
    let mut gw = AttentionWeights::zeros(cfg);

    let mut d_out_pre = grad_out.clone();
    activation_backward(cfg.proj_activation, &cache.out_pre, &mut d_out_pre);
    let dz = linear_backward(&w.out_proj, &cache.z, &d_out_pre, &mut gw.out_proj);

    // FFN sub-block with its residual.
    let dg = linear_backward(&w.ffn2, &cache.g, &dz, &mut gw.ffn2);
    let mut dh1 = dg;
    for (d, &h) in dh1.data.iter_mut().zip(&cache.h1.data) {
        *d = *d * gelu_grad(h);
    }
    let d_ln_out = linear_backward(&w.ffn1, &cache.ln_out, &dh1, &mut gw.ffn1);
    let mut dy = layer_norm_backward(&w.ln_ffn, &cache.ln_ffn, &d_ln_out, &mut gw.ln_ffn);
    dy.add_assign(&dz);

    // Attention sub-block with its residual.
    let d_ctx = linear_backward(&w.o, &cache.ctx, &dy, &mut gw.o);
    let e = cfg.hidden_dim;
    let d = cfg.head_dim();
    let scale = T::from_f64(1.0 / (d as f64).sqrt());
    let mut dq = Matrix::zeros(n, e);
    let mut dk = Matrix::zeros(n, e);
    let mut dv = Matrix::zeros(n, e);
    let mut dp_row = vec![T::zero(); n];
    for h in 0..cfg.heads {
        let cols = h * d..(h + 1) * d;
        let p = &cache.probs[h];
        for i in 0..n {
            let dci = &d_ctx.row(i)[cols.clone()];
            let pi = p.row(i);
            // dP_ij = <dctx_i, v_j>; dV_j += P_ij dctx_i.
            let mut dot = T::zero();
            for j in 0..n {
                if pi[j] == T::zero() {
                    dp_row[j] = T::zero();
                    continue;
                }
                let vj = &cache.v.row(j)[cols.clone()];
                let mut acc = T::zero();
                for t in 0..d {
                    acc = acc + dci[t] * vj[t];
                }
                dp_row[j] = acc;
                dot = dot + acc * pi[j];
                let dvj = &mut dv.row_mut(j)[cols.clone()];
                for t in 0..d {
                    dvj[t] = dvj[t] + pi[j] * dci[t];
                }
            }
            // Softmax backward, then the scaled dot product.
            for j in 0..n {
                if pi[j] == T::zero() {
                    continue;
                }
                let ds = pi[j] * (dp_row[j] - dot) * scale;
                let kj = &cache.k.row(j)[cols.clone()];
                let qi = &cache.q.row(i)[cols.clone()];
                let dqi = &mut dq.row_mut(i)[cols.clone()];
                for t in 0..d {
                    dqi[t] = dqi[t] + ds * kj[t];
                }
                let dkj = &mut dk.row_mut(j)[cols.clone()];
                for t in 0..d {
                    dkj[t] = dkj[t] + ds * qi[t];
                }
            }
        }
    }
    let mut da = linear_backward(&w.q, &cache.a, &dq, &mut gw.q);
    da.add_assign(&linear_backward(&w.k, &cache.a, &dk, &mut gw.k));
    da.add_assign(&linear_backward(&w.v, &cache.a, &dv, &mut gw.v));
    let mut dx = match (&w.ln_attn, &cache.ln_attn, gw.ln_attn.as_mut()) {
        (Some(norm), Some(c), Some(g)) => layer_norm_backward(norm, c, &da, g),
        _ => da,
    };
    dx.add_assign(&dy);

    activation_backward(cfg.proj_activation, &cache.x_pre, &mut dx);
    let d_input = linear_backward(&w.in_proj, &cache.input, &dx, &mut gw.in_proj);
    Ok(AttentionGrads { input: d_input, weights: gw })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens(n: usize, c: usize, seed: u64) -> Matrix<f64> {
        let mut rng = SplitMix64::new(seed);
        Matrix::from_fn(n, c, |_, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn single_token_is_value_path() {
        let cfg = AttentionConfig::new(3, 4);
        let w = AttentionWeights::<f64>::random(&cfg, 1);
        let u = tokens(1, 3, 2);
        let (_, cache) = forward_train(&cfg, &w, &u, None).unwrap();
        assert_eq!(cache.probs[0].data, vec![1.0]);
        // y = x + Wo (Wv x + bv) + bo
        let v = linear(&cache.x, &w.v.weight, Some(&w.v.bias)).unwrap();
        let mut want = linear(&v, &w.o.weight, Some(&w.o.bias)).unwrap();
        want.add_assign(&cache.x);
        assert!(want.max_abs_diff(&cache.y) < 1e-14);
    }

    #[test]
    fn empty_input() {
        let cfg = AttentionConfig::new(3, 4);
        let w = AttentionWeights::<f32>::random(&cfg, 1);
        let mut ops = OpCounter::default();
        let out = forward(&cfg, &w, &Matrix::zeros(0, 3), None, &mut ops).unwrap();
        assert_eq!(out.shape(), (0, 3));
        assert_eq!(ops.score_entries, 0);
    }

    #[test]
    fn streaming_and_cached_forward_agree() {
        for heads in [1, 2] {
            let cfg = AttentionConfig { heads, prenorm_attention: heads == 2, ..AttentionConfig::new(5, 8) };
            let w = AttentionWeights::<f32>::random(&cfg, 3);
            let u = tokens(9, 5, 4).cast::<f32>();
            let mut ops = OpCounter::default();
            let a = forward(&cfg, &w, &u, None, &mut ops).unwrap();
            let (b, cache) = forward_train(&cfg, &w, &u, None).unwrap();
            assert_eq!(a, b);
            assert_eq!(ops.score_entries, 81 * heads as u64);
            for p in &cache.probs {
                for i in 0..9 {
                    let s: f32 = p.row(i).iter().sum();
                    assert!((s - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn masked_keys_get_zero_probability() {
        let cfg = AttentionConfig::new(2, 4);
        let w = AttentionWeights::<f64>::random(&cfg, 5);
        let u = tokens(4, 2, 6);
        let mask = [true, false, true, false];
        let (_, cache) = forward_train(&cfg, &w, &u, Some(&mask)).unwrap();
        for i in 0..4 {
            assert_eq!(cache.probs[0].get(i, 1), 0.0);
            assert_eq!(cache.probs[0].get(i, 3), 0.0);
            assert!((cache.probs[0].get(i, 0) + cache.probs[0].get(i, 2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_upstream_gradient() {
        let cfg = AttentionConfig::new(3, 4);
        let w = AttentionWeights::<f64>::random(&cfg, 7);
        let u = tokens(5, 3, 8);
        let (_, cache) = forward_train(&cfg, &w, &u, None).unwrap();
        let g = backward(&cfg, &w, &cache, &Matrix::zeros(5, 3)).unwrap();
        assert!(g.input.data.iter().all(|&v| v == 0.0));
        assert!(g.weights.named().iter().all(|(_, v)| v.iter().all(|&x| x == 0.0)));
    }

    /// With Q = K = 0 the softmax is uniform and constant, so the block
    /// reduces to known linear maps; checked on 2 tokens with E = 2.
    #[test]
    fn constant_scores_reduce_to_linear_maps() {
        let cfg = AttentionConfig::new(2, 2);
        let mut w = AttentionWeights::<f64>::random(&cfg, 9);
        w.q = Linear::zeros(2, 2);
        w.k = Linear::zeros(2, 2);
        // Remove the FFN branch and the output map's influence.
        w.ffn2 = Linear::zeros(2, 4);
        let eye = Matrix::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        w.in_proj = Linear { weight: eye.clone(), bias: vec![0.0; 2] };
        w.out_proj = Linear { weight: eye, bias: vec![0.0; 2] };
        let u = tokens(2, 2, 10);
        let (_, cache) = forward_train(&cfg, &w, &u, None).unwrap();
        assert!(cache.probs[0].data.iter().all(|&p| (p - 0.5).abs() < 1e-15));
        // out_i = u_i + Wo Wv mean(u) + Wo bv + bo, so d out / d u = I + (1/2) Wo Wv for
        // every (i, j) pair of tokens, in addition to I on the diagonal.
        let mut wo_wv = [[0.0; 2]; 2];
        for (r, row) in wo_wv.iter_mut().enumerate() {
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = (0..2).map(|t| w.o.weight.get(r, t) * w.v.weight.get(t, c)).sum::<f64>();
            }
        }
        for tok in 0..2 {
            for ch in 0..2 {
                let mut go = Matrix::zeros(2, 2);
                go.set(tok, ch, 1.0);
                let g = backward(&cfg, &w, &cache, &go).unwrap();
                for j in 0..2 {
                    for c in 0..2 {
                        let want = 0.5 * wo_wv[ch][c] + if j == tok && c == ch { 1.0 } else { 0.0 };
                        assert!((g.input.get(j, c) - want).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
