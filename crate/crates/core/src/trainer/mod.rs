//! Two-phase training: supervised fine-tuning on teacher traces, then
//! group-relative policy optimization against the composite reward.

mod grpo;
mod optim;
mod run;
mod sft;

pub use grpo::{
    clipped_term, grpo_step, rollout_group, surrogate_objective, GrpoContext, RatioMode,
    RolloutGroup, SurrogateReport, TokenDiagnostic, TrainingCurvePoint,
};
pub use optim::{clip_global_norm, global_norm, Optimizer, OptimizerKind};
pub use run::{read_curves, train, train_from_sft, RunPaths, TrainOutcome, CURVES_HEADER};
pub use sft::{build_sft_dataset, sft_loss, sft_step, sft_target_text, SFTExample, SftDataset};

use serde::{Deserialize, Serialize};

use crate::error::{CoeError, Result};
use crate::policy::PolicyConfig;
use crate::reward::{RewardWeights, SimilarityMode};
use crate::vocab::Vocab;
use crate::world::{render_prompt_padded, Prompt, Task, WorldConfig};

/// Policy architecture; the vocabulary size comes from the world.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArchConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub context: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        let p = PolicyConfig::standard(0);
        ArchConfig {
            d_model: p.d_model,
            n_heads: p.n_heads,
            n_layers: p.n_layers,
            d_ff: p.d_ff,
            context: p.context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub world: WorldConfig,
    pub train_tasks: usize,
    pub eval_tasks: usize,
    pub arch: ArchConfig,
    pub group_size: usize,
    pub clip_epsilon: f64,
    pub kl_coeff: f64,
    /// GRPO learning rate.
    pub learning_rate: f64,
    pub sft_learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub steps: usize,
    pub sft_epochs: usize,
    pub sft_batch: usize,
    /// Prompts per GRPO step, each with `group_size` completions.
    pub batch_prompts: usize,
    pub temperature: f64,
    pub max_new: usize,
    pub seed: u64,
    pub rewards: RewardWeights,
    pub similarity_mode: SimilarityMode,
    pub ratio_mode: RatioMode,
    /// Share of SFT targets that also restate observed events as tagged
    /// events (with a random chain length). 0 gives tag-free targets only.
    pub sft_chain_fraction: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            world: WorldConfig::easy(17),
            train_tasks: 30000,
            eval_tasks: 500,
            arch: ArchConfig::default(),
            group_size: 4,
            clip_epsilon: 0.2,
            kl_coeff: 0.04,
            learning_rate: 1e-3,
            sft_learning_rate: 5e-3,
            optimizer: OptimizerKind::Adam,
            grad_clip: 1.0,
            steps: 150,
            sft_epochs: 2,
            sft_batch: 16,
            batch_prompts: 4,
            temperature: 1.0,
            max_new: 64,
            seed: 17,
            rewards: RewardWeights::default(),
            similarity_mode: SimilarityMode::VideoLevel,
            ratio_mode: RatioMode::Token,
            sft_chain_fraction: 0.25,
            checkpoint_every: 25,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoeError::InvalidConfig(m));
        self.world.validate()?;
        self.rewards.validate()?;
        if self.group_size < 2 {
            return bad(format!("group_size must be at least 2, got {}", self.group_size));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip_epsilon must lie in (0, 1), got {}", self.clip_epsilon));
        }
        if !(self.kl_coeff >= 0.0) {
            return bad(format!("kl_coeff must be non-negative, got {}", self.kl_coeff));
        }
        if !(self.learning_rate > 0.0) || !(self.sft_learning_rate >= 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..=1.0).contains(&self.sft_chain_fraction) {
            return bad("sft_chain_fraction must lie in [0, 1]".into());
        }
        if self.train_tasks == 0 || self.batch_prompts == 0 || self.sft_batch == 0 || self.max_new == 0 {
            return bad("train_tasks, batch_prompts, sft_batch and max_new must be positive".into());
        }
        let arch = self.arch;
        if arch.d_model == 0 || arch.n_heads == 0 || !arch.d_model.is_multiple_of(arch.n_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                arch.d_model, arch.n_heads
            ));
        }
        Ok(())
    }

    /// Seed of the held-out task set; differs from the training seed.
    pub fn eval_seed(&self) -> u64 {
        self.world.seed.wrapping_add(0x9e37_79b9)
    }
}

/// Turns tasks into padded prompts and knows the policy shape for a world.
#[derive(Debug, Clone)]
pub struct TaskEncoder {
    pub world: WorldConfig,
    pub vocab: Vocab,
    /// Visual segments are left-padded to this many tokens.
    pub visual_len: usize,
}

impl TaskEncoder {
    pub fn new(world: &WorldConfig) -> Self {
        TaskEncoder {
            world: world.clone(),
            vocab: Vocab::new(world),
            visual_len: world.max_video_frames() * (world.symbols_per_event + 1),
        }
    }

    pub fn prompt(&self, task: &Task) -> Result<Prompt> {
        render_prompt_padded(task, &self.vocab, self.visual_len)
    }

    pub fn policy_config(&self, arch: &ArchConfig) -> PolicyConfig {
        PolicyConfig {
            vocab_size: self.vocab.len(),
            d_model: arch.d_model,
            n_heads: arch.n_heads,
            n_layers: arch.n_layers,
            context: arch.context,
            d_ff: arch.d_ff,
        }
    }
}
