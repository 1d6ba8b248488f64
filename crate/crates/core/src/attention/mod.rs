//! Self-attention over sparse pillar tokens and the ablation variants that
//! place the same transformer block elsewhere in the network.

mod block;
mod gradcheck;
mod oracle;
mod variants;

pub use block::{
    backward, forward, forward_train, AttentionCache, AttentionConfig, AttentionGrads, AttentionWeights, Linear, Norm,
    OpCounter,
};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use oracle::dense_masked_oracle;
pub use variants::{
    feature_attention_forward, group_point_tokens, pillar_attention_backward, pillar_attention_forward,
    pillar_attention_infer, point_attention_forward, AttentionOps,
};
