//! Minimal deterministic NN substrate: dense matrices and feature maps, the
//! forward primitives the detector needs, the weight container and its file
//! format, seeded initialization, and parameter/FLOP accounting.

pub mod config;
pub mod count;
pub mod init;
pub mod ops;
pub mod store;
pub mod tensor;

pub use config::{
    AttentionSettings, AttentionVariant, HeadConfig, ModelConfig, ProjActivation, ScalingConfig, ScalingMode,
    TensorRole, TensorSpec, PRESETS,
};
pub use count::{count_flops, count_params, FlopReport, OpCount, ParamReport, DEFAULT_TOKENS};
pub use init::init_weights;
pub use store::{DType, Tensor, TensorData, WeightStore};
pub use tensor::{FeatureMap, Matrix, Scalar};
