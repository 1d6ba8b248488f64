//! Model hyperparameters, named presets, and the tensor inventory derived from
//! them. The inventory is the single source for weight initialization,
//! weight-file validation and parameter counting.

use serde::{Deserialize, Serialize};

use crate::detect::AnchorSpec;
use crate::features::{FeatureSetConfig, NormalizationStats};
use crate::pillars::GridConfig;
use crate::radar_io::ObjectClass;
use crate::rng::fnv1a64;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Uniform,
    Doubling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingConfig {
    pub channels: [usize; 3],
    pub mode: ScalingMode,
}

impl ScalingConfig {
    pub fn uniform(c: usize) -> Self {
        Self { channels: [c, c, c], mode: ScalingMode::Uniform }
    }

    pub fn doubling(c: usize) -> Self {
        Self { channels: [c, 2 * c, 4 * c], mode: ScalingMode::Doubling }
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.channels;
        if a == 0 {
            return Err(Error::config("encoder channels must be positive"));
        }
        let ok = match self.mode {
            ScalingMode::Uniform => a == b && b == c,
            ScalingMode::Doubling => b == 2 * a && c == 4 * a,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("channels {:?} do not follow {:?} scaling", self.channels, self.mode)))
        }
    }
}

/// Where (and whether) self-attention is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    None,
    /// Occupied pillars as tokens, between the pillar encoder and the backbone.
    Pillar,
    /// Every radar point as a token, groups zero-padded, padding attended to.
    PointUnmasked,
    /// As `PointUnmasked` but padding slots are masked out of the softmax.
    PointMasked,
    /// Dense attention over the flattened fused feature map before the head.
    FeatureLate,
}

impl AttentionVariant {
    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::None => "none",
            AttentionVariant::Pillar => "pillar",
            AttentionVariant::PointUnmasked => "point_unmasked",
            AttentionVariant::PointMasked => "point_masked",
            AttentionVariant::FeatureLate => "feature_late",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AttentionVariant::None,
            "pillar" => AttentionVariant::Pillar,
            "point_unmasked" => AttentionVariant::PointUnmasked,
            "point_masked" => AttentionVariant::PointMasked,
            "feature_late" => AttentionVariant::FeatureLate,
            other => return Err(Error::config(format!("unknown attention variant `{other}`"))),
        })
    }

    fn prefix(self) -> &'static str {
        match self {
            AttentionVariant::None | AttentionVariant::Pillar => "attn",
            AttentionVariant::PointUnmasked | AttentionVariant::PointMasked => "point_attn",
            AttentionVariant::FeatureLate => "feat_attn",
        }
    }
}

/// Optional activation after the input and output projections of the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjActivation {
    Identity,
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionSettings {
    pub variant: AttentionVariant,
    pub hidden_dim: usize,
    pub heads: usize,
    pub ffn_expansion: usize,
    /// Layer norm in front of the attention sub-block as well as the FFN.
    pub prenorm_attention: bool,
    pub proj_activation: ProjActivation,
    /// Largest token count the dense feature-attention variant accepts.
    pub token_limit: usize,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        Self {
            variant: AttentionVariant::Pillar,
            hidden_dim: 32,
            heads: 1,
            ffn_expansion: 2,
            prenorm_attention: false,
            proj_activation: ProjActivation::Identity,
            token_limit: 32768,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub anchors: AnchorSpec,
    pub score_threshold: f64,
    pub nms_iou: f64,
    /// Candidates kept (by score) before NMS.
    pub nms_pre_max: usize,
    pub max_detections: usize,
    /// Matching thresholds `(positive, negative)` per class, in class order.
    pub match_iou: [(f64, f64); 3],
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            anchors: AnchorSpec::default(),
            score_threshold: 0.1,
            nms_iou: 0.5,
            nms_pre_max: 1000,
            max_detections: 100,
            match_iou: [(0.6, 0.45), (0.5, 0.35), (0.5, 0.35)],
        }
    }
}

impl HeadConfig {
    pub fn match_thresholds(&self, class: ObjectClass) -> (f64, f64) {
        self.match_iou[class.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub name: String,
    pub grid: GridConfig,
    pub features: FeatureSetConfig,
    pub normalization: Option<NormalizationStats>,
    pub scaling: ScalingConfig,
    /// Stride-1 3x3 convolutions following the strided first conv of each stage.
    pub layer_nums: [usize; 3],
    pub layer_strides: [usize; 3],
    /// Lateral transposed-conv strides (kernel = stride) bringing every stage
    /// to the fused resolution.
    pub upsample_strides: [usize; 3],
    pub upsample_channels: usize,
    pub attention: AttentionSettings,
    pub head: HeadConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::preset("radarpillars-c32").expect("built-in preset")
    }
}

pub const PRESETS: &[&str] = &[
    "radarpillars-c32",
    "radarpillars-e128",
    "e32",
    "e128",
    "uniform-c16",
    "uniform-c32",
    "uniform-c64",
    "uniform-c128",
    "uniform-c256",
    "uniform-c512",
    "baseline-pp",
    "ablation-none",
    "ablation-point-unmasked",
    "ablation-point-masked",
    "ablation-pillar",
    "ablation-feature",
];

impl ModelConfig {
    fn base(name: &str, scaling: ScalingConfig, attention: AttentionSettings) -> Self {
        Self {
            name: name.to_string(),
            grid: GridConfig::default(),
            features: FeatureSetConfig::default(),
            normalization: None,
            scaling,
            layer_nums: [3, 5, 5],
            layer_strides: [2, 2, 2],
            upsample_strides: [1, 2, 4],
            upsample_channels: 128,
            attention,
            head: HeadConfig::default(),
        }
    }

    /// Named configurations. `uniform-c*` and `baseline-pp` are the backbone
    /// scaling study (no attention); `ablation-*` put each attention variant
    /// on the PointPillars-style baseline with E = 128.
    pub fn preset(name: &str) -> Result<Self> {
        let no_attn = AttentionSettings { variant: AttentionVariant::None, ..AttentionSettings::default() };
        let ablation = |variant| AttentionSettings { variant, hidden_dim: 128, ..AttentionSettings::default() };
        let cfg = match name {
            "radarpillars-c32" | "e32" => Self::base(name, ScalingConfig::uniform(32), AttentionSettings::default()),
            "radarpillars-e128" | "e128" => Self::base(
                name,
                ScalingConfig::uniform(32),
                AttentionSettings { hidden_dim: 128, ..AttentionSettings::default() },
            ),
            "baseline-pp" => Self::base(name, ScalingConfig::doubling(64), no_attn),
            "ablation-none" => Self::base(name, ScalingConfig::doubling(64), no_attn),
            "ablation-point-unmasked" => {
                Self::base(name, ScalingConfig::doubling(64), ablation(AttentionVariant::PointUnmasked))
            }
            "ablation-point-masked" => {
                Self::base(name, ScalingConfig::doubling(64), ablation(AttentionVariant::PointMasked))
            }
            "ablation-pillar" => Self::base(name, ScalingConfig::doubling(64), ablation(AttentionVariant::Pillar)),
            "ablation-feature" => {
                Self::base(name, ScalingConfig::doubling(64), ablation(AttentionVariant::FeatureLate))
            }
            other => match other.strip_prefix("uniform-c").and_then(|c| c.parse::<usize>().ok()) {
                Some(c) if c > 0 => Self::base(name, ScalingConfig::uniform(c), no_attn),
                _ => return Err(Error::config(format!("unknown preset `{other}`"))),
            },
        };
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let cfg: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// FNV-1a of the canonical JSON encoding.
    pub fn config_hash(&self) -> u64 {
        fnv1a64(&serde_json::to_string(self).expect("config serializes"))
    }

    pub fn pillar_channels(&self) -> usize {
        self.scaling.channels[0]
    }

    pub fn point_dim(&self) -> usize {
        self.features.num_channels() + 3
    }

    pub fn fused_channels(&self) -> usize {
        3 * self.upsample_channels
    }

    /// Token width of the attention block for the configured variant.
    pub fn attention_channels(&self) -> usize {
        match self.attention.variant {
            AttentionVariant::None | AttentionVariant::Pillar => self.pillar_channels(),
            AttentionVariant::PointUnmasked | AttentionVariant::PointMasked => self.point_dim(),
            AttentionVariant::FeatureLate => self.fused_channels(),
        }
    }

    pub fn attention_prefix(&self) -> &'static str {
        self.attention.variant.prefix()
    }

    /// `(H, W)` of each encoder stage output.
    pub fn stage_sizes(&self) -> [(usize, usize); 3] {
        let mut h = self.grid.n_y;
        let mut w = self.grid.n_x;
        let mut out = [(0, 0); 3];
        for (s, slot) in out.iter_mut().enumerate() {
            let st = self.layer_strides[s];
            h = (h + 2 - 3) / st + 1;
            w = (w + 2 - 3) / st + 1;
            *slot = (h, w);
        }
        out
    }

    /// Spatial size of the fused map the head runs on.
    pub fn fused_size(&self) -> (usize, usize) {
        let (h, w) = self.stage_sizes()[0];
        (h * self.upsample_strides[0], w * self.upsample_strides[0])
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.features.validate()?;
        self.scaling.validate()?;
        let a = &self.attention;
        if a.variant != AttentionVariant::None {
            if a.hidden_dim == 0 || a.heads == 0 || !a.hidden_dim.is_multiple_of(a.heads) {
                return Err(Error::config(format!(
                    "attention hidden dim {} must be a positive multiple of heads {}",
                    a.hidden_dim, a.heads
                )));
            }
            if a.ffn_expansion == 0 {
                return Err(Error::config("ffn expansion must be at least 1"));
            }
        }
        if self.layer_strides.contains(&0) || self.upsample_strides.contains(&0) || self.upsample_channels == 0 {
            return Err(Error::config("strides and upsample channels must be positive"));
        }
        let sizes = self.stage_sizes();
        let target = self.fused_size();
        for (s, &(h, w)) in sizes.iter().enumerate() {
            let up = self.upsample_strides[s];
            if (h * up, w * up) != target {
                return Err(Error::config(format!(
                    "stage {} output {h}x{w} upsampled by {up} does not reach fused size {target:?}",
                    s + 1
                )));
            }
        }
        self.head.anchors.validate()?;
        Ok(())
    }

    /// Every tensor of the model in a fixed order.
    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut specs = Vec::new();
        let c1 = self.pillar_channels();

        specs.push(TensorSpec::weight("pfn.linear.weight", vec![c1, self.point_dim()], self.point_dim()));
        push_bn(&mut specs, "pfn.bn", c1);

        if self.attention.variant != AttentionVariant::None {
            attention_specs(&mut specs, self.attention_prefix(), self.attention_channels(), &self.attention);
        }

        let mut c_in = c1;
        for s in 0..3 {
            let c_out = self.scaling.channels[s];
            for j in 0..=self.layer_nums[s] {
                let name = format!("backbone.stage{}.conv{j}", s + 1);
                specs.push(TensorSpec::weight(format!("{name}.weight"), vec![c_out, c_in, 3, 3], 9 * c_in));
                push_bn(&mut specs, &format!("backbone.stage{}.bn{j}", s + 1), c_out);
                c_in = c_out;
            }
        }
        let up = self.upsample_channels;
        for s in 0..3 {
            let k = self.upsample_strides[s];
            let c = self.scaling.channels[s];
            specs.push(TensorSpec::weight(format!("backbone.lateral{}.weight", s + 1), vec![c, up, k, k], c * k * k));
            push_bn(&mut specs, &format!("backbone.lateral{}.bn", s + 1), up);
        }

        let fused = self.fused_channels();
        let a = self.head.anchors.anchors_per_cell();
        let k = ObjectClass::ALL.len();
        for (name, out) in [("head.cls", a * k), ("head.box", a * 7), ("head.dir", a * 2)] {
            specs.push(TensorSpec::weight(format!("{name}.weight"), vec![out, fused, 1, 1], fused));
            specs.push(TensorSpec::new(format!("{name}.bias"), vec![out], TensorRole::Bias));
        }
        specs
    }
}

fn push_bn(specs: &mut Vec<TensorSpec>, prefix: &str, c: usize) {
    specs.push(TensorSpec::new(format!("{prefix}.weight"), vec![c], TensorRole::NormScale));
    specs.push(TensorSpec::new(format!("{prefix}.bias"), vec![c], TensorRole::NormShift));
    specs.push(TensorSpec::new(format!("{prefix}.running_mean"), vec![c], TensorRole::RunningMean));
    specs.push(TensorSpec::new(format!("{prefix}.running_var"), vec![c], TensorRole::RunningVar));
}

fn push_linear(specs: &mut Vec<TensorSpec>, prefix: &str, out: usize, inp: usize) {
    specs.push(TensorSpec::weight(format!("{prefix}.weight"), vec![out, inp], inp));
    specs.push(TensorSpec::new(format!("{prefix}.bias"), vec![out], TensorRole::Bias));
}

/// Tensors of one attention block with token width `c`.
pub fn attention_specs(specs: &mut Vec<TensorSpec>, prefix: &str, c: usize, a: &AttentionSettings) {
    let e = a.hidden_dim;
    let f = a.ffn_expansion * e;
    push_linear(specs, &format!("{prefix}.in_proj"), e, c);
    if a.prenorm_attention {
        specs.push(TensorSpec::new(format!("{prefix}.ln_attn.weight"), vec![e], TensorRole::NormScale));
        specs.push(TensorSpec::new(format!("{prefix}.ln_attn.bias"), vec![e], TensorRole::NormShift));
    }
    for n in ["q", "k", "v", "o"] {
        push_linear(specs, &format!("{prefix}.{n}"), e, e);
    }
    specs.push(TensorSpec::new(format!("{prefix}.ln_ffn.weight"), vec![e], TensorRole::NormScale));
    specs.push(TensorSpec::new(format!("{prefix}.ln_ffn.bias"), vec![e], TensorRole::NormShift));
    push_linear(specs, &format!("{prefix}.ffn1"), f, e);
    push_linear(specs, &format!("{prefix}.ffn2"), e, f);
    push_linear(specs, &format!("{prefix}.out_proj"), c, e);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    /// Learned weight initialized uniform in `+-1/sqrt(fan_in)`.
    Weight { fan_in: usize },
    Bias,
    NormScale,
    NormShift,
    RunningMean,
    RunningVar,
}

impl TensorRole {
    /// Running statistics are state, not parameters.
    pub fn is_parameter(self) -> bool {
        !matches!(self, TensorRole::RunningMean | TensorRole::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
}

impl TensorSpec {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, role: TensorRole) -> Self {
        Self { name: name.into(), shape, role }
    }

    fn weight(name: impl Into<String>, shape: Vec<usize>, fan_in: usize) -> Self {
        Self::new(name, shape, TensorRole::Weight { fan_in })
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in PRESETS {
            let cfg = ModelConfig::preset(name).unwrap();
            cfg.validate().unwrap();
        }
        assert!(ModelConfig::preset("uniform-cX").is_err());
        assert!(ModelConfig::preset("nope").is_err());
    }

    #[test]
    fn scaling_modes() {
        assert_eq!(ModelConfig::preset("radarpillars-c32").unwrap().scaling.channels, [32, 32, 32]);
        assert_eq!(ModelConfig::preset("baseline-pp").unwrap().scaling.channels, [64, 128, 256]);
        assert!(ScalingConfig { channels: [32, 64, 32], mode: ScalingMode::Uniform }.validate().is_err());
        assert!(ScalingConfig { channels: [32, 64, 64], mode: ScalingMode::Doubling }.validate().is_err());
    }

    #[test]
    fn default_geometry() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.stage_sizes(), [(160, 160), (80, 80), (40, 40)]);
        assert_eq!(cfg.fused_size(), (160, 160));
        assert_eq!(cfg.fused_channels(), 384);
        assert_eq!(cfg.point_dim(), 11);
    }

    #[test]
    fn mismatched_strides_rejected() {
        let mut cfg = ModelConfig::default();
        cfg.upsample_strides = [1, 2, 2];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ModelConfig::default();
        cfg.attention.heads = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn names_are_unique() {
        for name in PRESETS {
            let specs = ModelConfig::preset(name).unwrap().tensor_specs();
            let mut names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), specs.len());
        }
    }

    #[test]
    fn config_json_roundtrip_and_hash() {
        let cfg = ModelConfig::preset("radarpillars-e128").unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.config_hash(), cfg.config_hash());
        assert_ne!(cfg.config_hash(), ModelConfig::default().config_hash());
    }
}
