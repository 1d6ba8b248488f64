//! End-to-end inference: radar frame in, rotated 3D detections out.

use crate::attention::{
    feature_attention_forward, pillar_attention_infer, point_attention_forward, AttentionConfig, AttentionOps,
    AttentionWeights,
};
use crate::detect::{encoder_forward, fuse_features, generate_anchors, head_forward, postprocess, Anchor, BackboneWeights, Detection};
use crate::features::{assemble_features, standardize};
use crate::nn::ops::BatchNorm;
use crate::nn::{AttentionVariant, FeatureMap, Matrix, ModelConfig, Scalar, WeightStore};
use crate::pillars::{assign_pillars, compute_center_offsets, encode_pillars, point_inputs, scatter_to_grid, PfnWeights};
use crate::radar_io::RadarFrame;
use crate::Result;

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub pfn: PfnWeights<T>,
    pub attention: Option<(AttentionConfig, AttentionWeights<T>)>,
    pub backbone: BackboneWeights<T>,
    pub anchors: Vec<Anchor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    pub detections: Vec<Detection>,
    /// Occupied pillars.
    pub num_pillars: usize,
    /// `None` without attention, and for late feature attention on a frame
    /// with no occupied pillars (the dense stages are skipped).
    pub attention: Option<AttentionOps>,
}

impl<T: Scalar> Model<T> {
    /// Validates the config and that `store` holds exactly its tensors.
    pub fn new(cfg: &ModelConfig, store: &WeightStore) -> Result<Self> {
        cfg.validate()?;
        store.check_against(cfg)?;
        let c1 = cfg.pillar_channels();
        let d3 = cfg.point_dim();
        let pfn = PfnWeights {
            linear: Matrix::from_vec(c1, d3, store.values("pfn.linear.weight", &[c1, d3])?)?,
            bn: BatchNorm {
                gamma: store.values("pfn.bn.weight", &[c1])?,
                beta: store.values("pfn.bn.bias", &[c1])?,
                running_mean: store.values("pfn.bn.running_mean", &[c1])?,
                running_var: store.values("pfn.bn.running_var", &[c1])?,
            },
        };
        let attention = match cfg.attention.variant {
            AttentionVariant::None => None,
            _ => {
                let acfg = AttentionConfig::from_settings(cfg.attention_channels(), &cfg.attention);
                let w = AttentionWeights::from_store(store, cfg.attention_prefix(), &acfg)?;
                Some((acfg, w))
            }
        };
        let backbone = BackboneWeights::from_store(store, cfg)?;
        let (h, w) = cfg.fused_size();
        let anchors = generate_anchors(&cfg.head.anchors, &cfg.grid, h, w);
        Ok(Self { cfg: cfg.clone(), pfn, attention, backbone, anchors })
    }

    pub fn infer(&self, frame: &RadarFrame) -> Result<FrameOutput> {
        let cfg = &self.cfg;
        let assignment = assign_pillars(frame, &cfg.grid)?;
        let mut features = assemble_features(frame, &cfg.features, Some(&assignment))?;
        if let Some(stats) = &cfg.normalization {
            features = standardize(&features, stats)?;
        }
        let offsets = compute_center_offsets(frame, &assignment, &cfg.grid);
        let inputs = point_inputs::<T>(&features, &offsets)?;

        let mut ops = None;
        let sparse = match (&self.attention, cfg.attention.variant) {
            (Some((acfg, w)), AttentionVariant::PointMasked | AttentionVariant::PointUnmasked) => {
                let masked = cfg.attention.variant == AttentionVariant::PointMasked;
                let (s, rec) = point_attention_forward(&inputs, &assignment, w, acfg, &self.pfn, masked)?;
                ops = Some(rec);
                s
            }
            (Some((acfg, w)), AttentionVariant::Pillar) => {
                let s = encode_pillars(&inputs, &assignment, &self.pfn)?;
                let (s, rec) = pillar_attention_infer(&s, w, acfg)?;
                ops = Some(rec);
                s
            }
            _ => encode_pillars(&inputs, &assignment, &self.pfn)?,
        };
        // Without occupied pillars the head would only emit its biases.
        if sparse.is_empty() {
            return Ok(FrameOutput { detections: Vec::new(), num_pillars: 0, attention: ops });
        }
        let grid = scatter_to_grid(&sparse)?;

        let stages = encoder_forward(&grid.features, &self.backbone)?;
        let mut fused: FeatureMap<T> = fuse_features(&stages, &self.backbone)?;
        if let (Some((acfg, w)), AttentionVariant::FeatureLate) = (&self.attention, cfg.attention.variant) {
            let (out, rec) = feature_attention_forward(&fused, w, acfg, cfg.attention.token_limit)?;
            fused = out;
            ops = Some(rec);
        }
        let head = head_forward(&fused, &self.backbone)?;
        let detections = postprocess(&head, &self.anchors, &cfg.head)?;
        Ok(FrameOutput { detections, num_pillars: assignment.num_pillars(), attention: ops })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_weights;
    use crate::radar_io::{generate_scene, SceneSpec};

    fn small(preset: &str) -> ModelConfig {
        let mut cfg = ModelConfig::preset(preset).unwrap();
        cfg.grid = cfg.grid.with_cells(32, 32);
        cfg.upsample_channels = 16;
        cfg
    }

    #[test]
    fn empty_frame_gives_no_pillars() {
        let cfg = small("radarpillars-c32");
        let model = Model::<f32>::new(&cfg, &init_weights(&cfg, 1)).unwrap();
        let out = model.infer(&RadarFrame::new("empty", vec![])).unwrap();
        assert_eq!(out.num_pillars, 0);
        assert!(out.detections.is_empty());
        assert_eq!(out.attention.unwrap().p, 0);
    }

    #[test]
    fn every_variant_runs() {
        let (frame, _) = generate_scene(&SceneSpec { seed: 3, ..SceneSpec::default() }).unwrap();
        for variant in ["none", "pillar", "point_unmasked", "point_masked", "feature_late"] {
            let mut cfg = small("radarpillars-c32");
            cfg.attention.variant = AttentionVariant::parse(variant).unwrap();
            let model = Model::<f32>::new(&cfg, &init_weights(&cfg, 2)).unwrap();
            let out = model.infer(&frame).unwrap();
            assert!(out.num_pillars > 0);
            assert!(out.detections.len() <= cfg.head.max_detections);
            assert_eq!(out.attention.is_some(), variant != "none");
        }
    }

    #[test]
    fn mismatched_store_rejected() {
        let cfg = small("radarpillars-c32");
        let other = small("uniform-c16");
        assert!(matches!(Model::<f32>::new(&cfg, &init_weights(&other, 1)), Err(crate::Error::Shape(_))));
    }
}
