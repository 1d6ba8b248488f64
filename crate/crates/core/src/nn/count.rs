//! Parameter and operation counts derived from a [`ModelConfig`] alone.

use indexmap::IndexMap;
use serde::Serialize;

use super::config::{AttentionVariant, ModelConfig};

/// Mean number of points per radar scan; the default occupancy for headline
/// counts (every point assumed to fall in its own pillar).
pub const DEFAULT_TOKENS: usize = 216;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamReport {
    pub total: usize,
    /// Buffers such as batch-norm running statistics; not in `total`.
    pub buffers: usize,
    pub per_component: IndexMap<String, usize>,
}

fn component_of(name: &str) -> String {
    let mut parts = name.split('.');
    let first = parts.next().unwrap_or_default();
    match first {
        "backbone" => {
            let second = parts.next().unwrap_or_default();
            format!("backbone.{second}")
        }
        other => other.to_string(),
    }
}

pub fn count_params(cfg: &ModelConfig) -> ParamReport {
    let mut per_component = IndexMap::new();
    let mut total = 0;
    let mut buffers = 0;
    for spec in cfg.tensor_specs() {
        if spec.role.is_parameter() {
            total += spec.numel();
            *per_component.entry(component_of(&spec.name)).or_insert(0) += spec.numel();
        } else {
            buffers += spec.numel();
        }
    }
    ParamReport { total, buffers, per_component }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCount {
    pub macs: u64,
    /// `2 * macs`.
    pub flops: u64,
}

impl OpCount {
    fn from_macs(macs: u64) -> Self {
        Self { macs, flops: 2 * macs }
    }

    fn add(&mut self, other: OpCount) {
        self.macs += other.macs;
        self.flops += other.flops;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlopReport {
    /// Occupied-pillar count the attention and pillar-encoder terms assume.
    pub tokens: usize,
    pub per_component: IndexMap<String, OpCount>,
    pub total: OpCount,
    /// Batch norm, activations and softmax, counted one op per element; not
    /// part of `total`.
    pub elementwise: u64,
}

impl FlopReport {
    pub fn total_flops(&self) -> u64 {
        self.total.flops
    }

    pub fn total_macs(&self) -> u64 {
        self.total.macs
    }
}

/// Multiply-accumulates of one transformer block over `n` tokens of width `c`.
/// Returns `(macs, elementwise)`.
pub fn attention_block_macs(n: u64, c: u64, e: u64, expansion: u64) -> (u64, u64) {
    let f = expansion * e;
    let proj = n * c * e * 2; // in and out projections
    let qkvo = 4 * n * e * e;
    let scores = n * n * e;
    let mix = n * n * e;
    let ffn = 2 * n * e * f;
    let elementwise = n * n + n * f + 2 * n * e;
    (proj + qkvo + scores + mix + ffn, elementwise)
}

/// Operation count of one forward pass with `tokens` occupied pillars.
pub fn count_flops(cfg: &ModelConfig, tokens: usize) -> FlopReport {
    let mut per_component: IndexMap<String, OpCount> = IndexMap::new();
    let mut elementwise = 0u64;
    let p = tokens as u64;
    let c1 = cfg.pillar_channels() as u64;
    let d3 = cfg.point_dim() as u64;

    per_component.insert("pfn".into(), OpCount::from_macs(p * d3 * c1));
    elementwise += 2 * p * c1;

    let a = &cfg.attention;
    if a.variant != AttentionVariant::None {
        let (n, c) = match a.variant {
            AttentionVariant::Pillar => (p, c1),
            AttentionVariant::PointUnmasked | AttentionVariant::PointMasked => {
                (p * cfg.grid.max_points_per_pillar as u64, d3)
            }
            AttentionVariant::FeatureLate => {
                let (h, w) = cfg.fused_size();
                ((h * w) as u64, cfg.fused_channels() as u64)
            }
            AttentionVariant::None => unreachable!(),
        };
        let (macs, ew) = attention_block_macs(n, c, a.hidden_dim as u64, a.ffn_expansion as u64);
        per_component.insert("attention".into(), OpCount::from_macs(macs));
        elementwise += ew;
    }

    let sizes = cfg.stage_sizes();
    let mut c_in = c1;
    for s in 0..3 {
        let c_out = cfg.scaling.channels[s] as u64;
        let (h, w) = sizes[s];
        let hw = (h * w) as u64;
        let convs = cfg.layer_nums[s] as u64 + 1;
        let macs = 9 * hw * c_out * (c_in + (convs - 1) * c_out);
        per_component.insert(format!("stage{}", s + 1), OpCount::from_macs(macs));
        elementwise += 2 * convs * hw * c_out;
        c_in = c_out;
    }

    let up = cfg.upsample_channels as u64;
    let mut lateral = 0;
    for s in 0..3 {
        let (h, w) = sizes[s];
        let k = cfg.upsample_strides[s] as u64;
        lateral += (h * w) as u64 * k * k * cfg.scaling.channels[s] as u64 * up;
    }
    per_component.insert("laterals".into(), OpCount::from_macs(lateral));
    let (fh, fw) = cfg.fused_size();
    let fused_hw = (fh * fw) as u64;
    elementwise += 2 * 3 * up * fused_hw;

    let anchors = cfg.head.anchors.anchors_per_cell() as u64;
    let head_out = anchors * (3 + 7 + 2);
    per_component.insert("head".into(), OpCount::from_macs(fused_hw * cfg.fused_channels() as u64 * head_out));

    let mut total = OpCount::default();
    for v in per_component.values() {
        total.add(*v);
    }
    FlopReport { tokens, per_component, total, elementwise }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_term_matches_formula() {
        // One 3x3 32->32 conv at 160x160.
        let flops = 2u64 * 9 * 32 * 32 * 160 * 160;
        assert_eq!(flops, 471_859_200);
        let cfg = ModelConfig::preset("uniform-c32").unwrap();
        let r = count_flops(&cfg, DEFAULT_TOKENS);
        // Stage 1 is four such convs.
        assert_eq!(r.per_component["stage1"].flops, 4 * flops);
    }

    #[test]
    fn attention_scores_and_values_term() {
        let with = attention_block_macs(200, 32, 32, 2).0;
        let without_pairs = {
            let n = 200u64;
            2 * n * 32 * 32 + 4 * n * 32 * 32 + 2 * n * 32 * 64
        };
        assert_eq!(2 * (with - without_pairs), 5_120_000);
    }

    #[test]
    fn params_exclude_running_stats() {
        let cfg = ModelConfig::preset("uniform-c32").unwrap();
        let r = count_params(&cfg);
        let all: usize = cfg.tensor_specs().iter().map(|s| s.numel()).sum();
        assert_eq!(r.total + r.buffers, all);
        assert_eq!(r.per_component.values().sum::<usize>(), r.total);
        assert!(r.per_component.contains_key("backbone.stage1"));
    }
}
