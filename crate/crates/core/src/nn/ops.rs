//! Forward primitives. Every reduction runs in a fixed loop order, so results
//! are bit-reproducible run to run.

use super::tensor::{FeatureMap, Matrix, Scalar};
use crate::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-3;

/// `x W^T + b` with `x: n x in`, `w: out x in`.
pub fn linear<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: Option<&[T]>) -> Result<Matrix<T>> {
    if x.cols != w.cols {
        return Err(Error::shape(format!("linear: input has {} columns, weight expects {}", x.cols, w.cols)));
    }
    if let Some(b) = b {
        if b.len() != w.rows {
            return Err(Error::shape(format!("linear: bias {} vs {} outputs", b.len(), w.rows)));
        }
    }
    let mut out = Matrix::zeros(x.rows, w.rows);
    for i in 0..x.rows {
        let xi = x.row(i);
        let oi = out.row_mut(i);
        for (o, slot) in oi.iter_mut().enumerate() {
            let wo = w.row(o);
            let mut acc = T::zero();
            for k in 0..xi.len() {
                acc = acc + xi[k] * wo[k];
            }
            *slot = match b {
                Some(b) => acc + b[o],
                None => acc,
            };
        }
    }
    Ok(out)
}

/// Layer-norm intermediates kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache<T> {
    pub normalized: Matrix<T>,
    pub rstd: Vec<T>,
}

/// Per-row normalization to zero mean / unit variance over the columns, then
/// `gamma * x_hat + beta`.
pub fn layer_norm<T: Scalar>(x: &Matrix<T>, gamma: &[T], beta: &[T]) -> Result<(Matrix<T>, LayerNormCache<T>)> {
    let e = x.cols;
    if gamma.len() != e || beta.len() != e {
        return Err(Error::shape(format!("layer_norm: affine size {} vs width {e}", gamma.len())));
    }
    let eps = T::from_f64(LAYER_NORM_EPS);
    let n = T::from_f64(e as f64);
    let mut out = Matrix::zeros(x.rows, e);
    let mut normalized = Matrix::zeros(x.rows, e);
    let mut rstd = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let r = T::one() / (var + eps).sqrt();
        rstd.push(r);
        for j in 0..e {
            let h = (row[j] - mean) * r;
            normalized.set(i, j, h);
            out.set(i, j, gamma[j] * h + beta[j]);
        }
    }
    Ok((out, LayerNormCache { normalized, rstd }))
}

/// Max-subtracted softmax in place. A row that is entirely `-inf` (fully
/// masked) becomes all zeros.
pub fn softmax_inplace<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

pub fn softmax<T: Scalar>(row: &[T]) -> Vec<T> {
    let mut out = row.to_vec();
    softmax_inplace(&mut out);
    out
}

/// Exact (erf-based) GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let v = x.to_f64();
    T::from_f64(0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)))
}

/// d gelu / dx = Phi(x) + x phi(x).
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let v = x.to_f64();
    let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::from_f64(cdf + v * pdf)
}

pub fn relu_inplace<T: Scalar>(data: &mut [T]) {
    for v in data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Inference-mode batch norm: a per-channel affine map from stored statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// `(scale, shift)` with `y = scale * x + shift`.
    pub fn affine(&self, c: usize) -> (T, T) {
        let scale = self.gamma[c] / (self.running_var[c] + T::from_f64(BATCH_NORM_EPS)).sqrt();
        (scale, self.beta[c] - self.running_mean[c] * scale)
    }

    pub fn apply_map(&self, map: &mut FeatureMap<T>) -> Result<()> {
        if map.channels != self.channels() {
            return Err(Error::shape(format!("batch norm over {} channels, map has {}", self.channels(), map.channels)));
        }
        for c in 0..map.channels {
            let (s, b) = self.affine(c);
            for v in map.plane_mut(c) {
                *v = s * *v + b;
            }
        }
        Ok(())
    }

    /// Applies to a row vector whose entries are channels.
    pub fn apply_row(&self, row: &mut [T]) {
        for (c, v) in row.iter_mut().enumerate() {
            let (s, b) = self.affine(c);
            *v = s * *v + b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvParams {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    pub fn output_size(&self, input: usize) -> Option<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.kernel || self.stride == 0 {
            return None;
        }
        Some((padded - self.kernel) / self.stride + 1)
    }
}

/// Cross-correlation. `weight` is `[c_out, c_in, k, k]` flattened.
pub fn conv2d<T: Scalar>(
    input: &FeatureMap<T>,
    weight: &[T],
    c_out: usize,
    bias: Option<&[T]>,
    p: ConvParams,
) -> Result<FeatureMap<T>> {
    let (c_in, h, w) = input.shape();
    let k = p.kernel;
    if weight.len() != c_out * c_in * k * k {
        return Err(Error::shape(format!(
            "conv2d: weight has {} values, expected {c_out}x{c_in}x{k}x{k}",
            weight.len()
        )));
    }
    if bias.is_some_and(|b| b.len() != c_out) {
        return Err(Error::shape("conv2d: bias length"));
    }
    let (ho, wo) = match (p.output_size(h), p.output_size(w)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::shape(format!("conv2d: {h}x{w} input too small for kernel {k}"))),
    };
    let (s, pad) = (p.stride, p.padding as isize);
    let mut out = FeatureMap::zeros(c_out, ho, wo);
    for co in 0..c_out {
        let plane = out.plane_mut(co);
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..c_in {
            let src = input.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((co * c_in + ci) * k + ky) * k + kx];
                    // Output columns whose input column ix = ox*s + kx - pad lies in [0, w).
                    let off = kx as isize - pad;
                    let ox_lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(s) };
                    let ox_hi = if (w as isize) - off <= 0 {
                        0
                    } else {
                        ((w as isize - off - 1) as usize / s + 1).min(wo)
                    };
                    if ox_lo >= ox_hi {
                        continue;
                    }
                    for oy in 0..ho {
                        let iy = (oy * s) as isize + ky as isize - pad;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                        let dst_row = &mut plane[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let base = (ox_lo as isize + off) as usize;
                            let n = ox_hi - ox_lo;
                            for (d, x) in dst_row[ox_lo..ox_hi].iter_mut().zip(&src_row[base..base + n]) {
                                *d = *d + wv * *x;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ((ox * s) as isize + off) as usize;
                                dst_row[ox] = dst_row[ox] + wv * src_row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Transposed convolution, the adjoint of [`conv2d`] with the same weights.
/// `weight` is `[c_in, c_out, k, k]`; output size is
/// `(H - 1) * stride - 2 * padding + k + output_padding`.
pub fn transposed_conv2d<T: Scalar>(
    input: &FeatureMap<T>,
    weight: &[T],
    c_out: usize,
    bias: Option<&[T]>,
    p: ConvParams,
    output_padding: usize,
) -> Result<FeatureMap<T>> {
    let (c_in, h, w) = input.shape();
    let k = p.kernel;
    if weight.len() != c_in * c_out * k * k {
        return Err(Error::shape(format!(
            "transposed_conv2d: weight has {} values, expected {c_in}x{c_out}x{k}x{k}",
            weight.len()
        )));
    }
    if p.stride == 0 {
        return Err(Error::shape("transposed_conv2d: stride must be positive"));
    }
    if bias.is_some_and(|b| b.len() != c_out) {
        return Err(Error::shape("transposed_conv2d: bias length"));
    }
    let full_h = (h.max(1) - 1) * p.stride + k + output_padding;
    let full_w = (w.max(1) - 1) * p.stride + k + output_padding;
    if h == 0 || w == 0 || full_h < 2 * p.padding + 1 || full_w < 2 * p.padding + 1 {
        return Err(Error::shape("transposed_conv2d: empty output"));
    }
    let (ho, wo) = (full_h - 2 * p.padding, full_w - 2 * p.padding);
    let (s, pad) = (p.stride, p.padding as isize);
    let mut out = FeatureMap::zeros(c_out, ho, wo);
    for co in 0..c_out {
        let plane = out.plane_mut(co);
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        for ci in 0..c_in {
            let src = input.plane(ci);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((ci * c_out + co) * k + ky) * k + kx];
                    for iy in 0..h {
                        let oy = (iy * s) as isize + ky as isize - pad;
                        if oy < 0 || oy >= ho as isize {
                            continue;
                        }
                        let dst_row = &mut plane[oy as usize * wo..(oy as usize + 1) * wo];
                        let src_row = &src[iy * w..(iy + 1) * w];
                        for (ix, x) in src_row.iter().enumerate() {
                            let ox = (ix * s) as isize + kx as isize - pad;
                            if ox >= 0 && (ox as usize) < wo {
                                dst_row[ox as usize] = dst_row[ox as usize] + wv * *x;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
