//! Three-stage convolutional encoder, lateral fusion and the SSD head.

use crate::nn::ops::{conv2d, relu_inplace, transposed_conv2d, BatchNorm, ConvParams};
use crate::nn::{FeatureMap, ModelConfig, Scalar, WeightStore};
use crate::radar_io::ObjectClass;
use crate::{Error, Result};

fn bn_from_store<T: Scalar>(store: &WeightStore, prefix: &str, c: usize) -> Result<BatchNorm<T>> {
    Ok(BatchNorm {
        gamma: store.values(&format!("{prefix}.weight"), &[c])?,
        beta: store.values(&format!("{prefix}.bias"), &[c])?,
        running_mean: store.values(&format!("{prefix}.running_mean"), &[c])?,
        running_var: store.values(&format!("{prefix}.running_var"), &[c])?,
    })
}

/// 3x3 convolution (no bias) followed by batch norm and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBnRelu<T> {
    pub weight: Vec<T>,
    pub c_out: usize,
    pub stride: usize,
    pub bn: BatchNorm<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let mut y = conv2d(x, &self.weight, self.c_out, None, ConvParams::new(3, self.stride, 1))?;
        self.bn.apply_map(&mut y)?;
        relu_inplace(&mut y.data);
        Ok(y)
    }
}

/// Transposed convolution with kernel = stride (no bias), batch norm, ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Lateral<T> {
    pub weight: Vec<T>,
    pub c_out: usize,
    pub stride: usize,
    pub bn: BatchNorm<T>,
}

impl<T: Scalar> Lateral<T> {
    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        let mut y = transposed_conv2d(x, &self.weight, self.c_out, None, ConvParams::new(self.stride, self.stride, 0), 0)?;
        self.bn.apply_map(&mut y)?;
        relu_inplace(&mut y.data);
        Ok(y)
    }
}

/// 1x1 convolution with bias, stored as an `out x in` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseConv<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> PointwiseConv<T> {
    pub fn out_channels(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        conv2d(x, &self.weight, self.out_channels(), Some(&self.bias), ConvParams::new(1, 1, 0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneWeights<T> {
    pub stages: [Vec<ConvBnRelu<T>>; 3],
    pub laterals: [Lateral<T>; 3],
    pub cls: PointwiseConv<T>,
    pub reg: PointwiseConv<T>,
    pub dir: PointwiseConv<T>,
}

impl<T: Scalar> BackboneWeights<T> {
    pub fn from_store(store: &WeightStore, cfg: &ModelConfig) -> Result<Self> {
        let mut c_in = cfg.pillar_channels();
        let mut stages: [Vec<ConvBnRelu<T>>; 3] = Default::default();
        for (s, stage) in stages.iter_mut().enumerate() {
            let c_out = cfg.scaling.channels[s];
            for j in 0..=cfg.layer_nums[s] {
                let name = format!("backbone.stage{}.conv{j}.weight", s + 1);
                stage.push(ConvBnRelu {
                    weight: store.values(&name, &[c_out, c_in, 3, 3])?,
                    c_out,
                    stride: if j == 0 { cfg.layer_strides[s] } else { 1 },
                    bn: bn_from_store(store, &format!("backbone.stage{}.bn{j}", s + 1), c_out)?,
                });
                c_in = c_out;
            }
        }
        let up = cfg.upsample_channels;
        let lateral = |s: usize| -> Result<Lateral<T>> {
            let k = cfg.upsample_strides[s];
            Ok(Lateral {
                weight: store.values(&format!("backbone.lateral{}.weight", s + 1), &[cfg.scaling.channels[s], up, k, k])?,
                c_out: up,
                stride: k,
                bn: bn_from_store(store, &format!("backbone.lateral{}.bn", s + 1), up)?,
            })
        };
        let fused = cfg.fused_channels();
        let a = cfg.head.anchors.anchors_per_cell();
        let pointwise = |name: &str, out: usize| -> Result<PointwiseConv<T>> {
            Ok(PointwiseConv {
                weight: store.values(&format!("{name}.weight"), &[out, fused, 1, 1])?,
                bias: store.values(&format!("{name}.bias"), &[out])?,
            })
        };
        Ok(Self {
            stages,
            laterals: [lateral(0)?, lateral(1)?, lateral(2)?],
            cls: pointwise("head.cls", a * ObjectClass::ALL.len())?,
            reg: pointwise("head.box", a * 7)?,
            dir: pointwise("head.dir", a * 2)?,
        })
    }
}

/// Stage outputs `S1, S2, S3`.
pub fn encoder_forward<T: Scalar>(grid: &FeatureMap<T>, w: &BackboneWeights<T>) -> Result<[FeatureMap<T>; 3]> {
    let mut x = grid.clone();
    let mut outs: Vec<FeatureMap<T>> = Vec::with_capacity(3);
    for stage in &w.stages {
        for layer in stage {
            x = layer.forward(&x)?;
        }
        outs.push(x.clone());
    }
    Ok(outs.try_into().expect("three stages"))
}

/// Upsamples every stage to the common resolution and concatenates channels.
pub fn fuse_features<T: Scalar>(stages: &[FeatureMap<T>; 3], w: &BackboneWeights<T>) -> Result<FeatureMap<T>> {
    let ups: Vec<FeatureMap<T>> =
        stages.iter().zip(&w.laterals).map(|(s, l)| l.forward(s)).collect::<Result<_>>()?;
    let (_, h, wd) = ups[0].shape();
    if ups.iter().any(|u| (u.height, u.width) != (h, wd)) {
        return Err(Error::shape("lateral outputs differ in spatial size"));
    }
    FeatureMap::concat(&[&ups[0], &ups[1], &ups[2]])
}

/// Raw head maps. Channel `a * K + k` of `cls` is class `k` of anchor `a`,
/// `a * 7 + j` of `reg` its residual `j`, `a * 2 + b` of `dir` its bin `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutputs<T> {
    pub cls: FeatureMap<T>,
    pub reg: FeatureMap<T>,
    pub dir: FeatureMap<T>,
}

pub fn head_forward<T: Scalar>(fused: &FeatureMap<T>, w: &BackboneWeights<T>) -> Result<HeadOutputs<T>> {
    Ok(HeadOutputs { cls: w.cls.forward(fused)?, reg: w.reg.forward(fused)?, dir: w.dir.forward(fused)? })
}
