//! Tiny causal-attention language model used as the policy.
//!
//! Pre-residual blocks without normalization: `x += attn(x); x += ffn(x)`,
//! GELU (tanh form) in the feed-forward layer, learned positional embeddings.
//! All math is f64 and every gradient is written by hand in [`forward`].

mod checkpoint;
mod forward;
mod params;
mod sampling;

pub use checkpoint::{
    load_checkpoint, manifest_path, save_checkpoint, write_manifest, CheckpointManifest, TensorEntry,
};
pub use forward::{
    aggregate_option_attention, attention_profile, backward, completion_rows, exact_kl, forward,
    forward_logits, forward_range,
    kl_rows, log_softmax_rows, per_token_log_probs, AttentionProfile, ForwardCache, SegmentMasses,
};
pub use params::{GradientBuffer, PolicyConfig, PolicyParams};
pub use sampling::{choose_next, continue_completion, sample_completion, DecodeState, Decoding};
