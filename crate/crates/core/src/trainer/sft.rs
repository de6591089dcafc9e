use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::optim::{clip_global_norm, Optimizer};
use super::TaskEncoder;
use crate::error::{CoeError, Result};
use crate::event::{EventChain, ParsedCompletion};
use crate::policy::{backward, completion_rows, log_softmax_rows, GradientBuffer, PolicyParams};
use crate::vocab::TokenId;
use crate::world::{GroundTruthTimeline, Sample, Task, TaskMode};

#[derive(Debug, Clone, PartialEq)]
pub struct SFTExample {
    pub task_id: usize,
    pub prompt: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub has_chain: bool,
}

#[derive(Debug, Clone, Default)]
pub struct SftDataset {
    pub examples: Vec<SFTExample>,
    /// Examples whose prompt plus target did not fit the context.
    pub dropped: usize,
}

/// Teacher trace for a task: restate the last observed event, name its
/// successor (followed by its option label on MCQ tasks), answer. With `chain_len = Some(k)` the last `k` observed
/// events are also emitted as tagged events before the reasoning.
pub fn sft_target_text(task: &Task, truth: &GroundTruthTimeline, chain_len: Option<usize>) -> String {
    let observed = &truth.events.events;
    let chain = match chain_len {
        Some(k) => EventChain {
            events: observed[observed.len().saturating_sub(k)..].to_vec(),
        },
        None => EventChain::default(),
    };
    let last = observed.last().map(|e| e.description.as_str()).unwrap_or("");
    let future = &truth.future_event.description;
    let (answer, reasoning_text) = match task.mode {
        TaskMode::Mcq => {
            let label = task.correct_label.clone();
            let text = format!("{last} next {future} {}", label.as_deref().unwrap_or(""));
            (label, text.trim_end().to_string())
        }
        TaskMode::OpenSet => (Some(future.clone()), format!("{last} next {future}")),
    };
    ParsedCompletion {
        chain,
        reasoning_text,
        answer,
        tag_valid: false,
        raw_text: String::new(),
        diagnostics: Vec::new(),
    }
    .to_canonical()
}

/// Builds up to `count` examples from `samples`. A `chain_fraction` share of
/// targets carries tagged events, with a chain length drawn uniformly from
/// `1..=observed_events`.
pub fn build_sft_dataset(
    samples: &[Sample],
    count: usize,
    encoder: &TaskEncoder,
    chain_fraction: f64,
    context: usize,
    seed: u64,
) -> Result<SftDataset> {
    if samples.is_empty() {
        return Err(CoeError::InvalidConfig("SFT needs a non-empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SftDataset::default();
    for (task, truth) in samples.iter().take(count) {
        let chain_len = if rng.random::<f64>() < chain_fraction {
            Some(rng.random_range(1..=truth.events.len().max(1)))
        } else {
            None
        };
        let prompt = encoder.prompt(task)?.ids;
        let target = encoder
            .vocab
            .encode(&sft_target_text(task, truth, chain_len))?;
        if prompt.len() + target.len() > context {
            out.dropped += 1;
            continue;
        }
        out.examples.push(SFTExample {
            task_id: task.id,
            prompt,
            target,
            has_chain: chain_len.is_some(),
        });
    }
    if out.dropped > 0 {
        log::warn!("dropped {} SFT examples that overflow the context", out.dropped);
    }
    Ok(out)
}

/// Mean over examples of the per-token cross-entropy on target tokens.
/// When `grads` is given, the loss gradient is accumulated into it.
pub fn sft_loss(
    params: &PolicyParams,
    batch: &[SFTExample],
    mut grads: Option<&mut GradientBuffer>,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(CoeError::InvalidConfig("empty SFT batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        let cache = completion_rows(params, &ex.prompt, &ex.target)?;
        let logp = log_softmax_rows(&cache.logits);
        let n = ex.target.len() as f64;
        let weight = 1.0 / (n * batch.len() as f64);
        let mut ce = 0.0;
        for (i, &t) in ex.target.iter().enumerate() {
            ce -= logp[[i, t as usize]];
        }
        total += ce / n;
        if let Some(g) = grads.as_deref_mut() {
            let mut d: Array2<f64> = logp.mapv(f64::exp);
            for (i, &t) in ex.target.iter().enumerate() {
                d[[i, t as usize]] -= 1.0;
            }
            d.mapv_inplace(|x| x * weight);
            backward(params, &cache, &d, g)?;
        }
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(CoeError::NonFiniteLoss(format!(
            "SFT loss {loss} on batch starting at task {}",
            batch[0].task_id
        )));
    }
    Ok(loss)
}

/// One optimizer step on the batch; returns the pre-update loss.
pub fn sft_step(
    params: &mut PolicyParams,
    optimizer: &mut Optimizer,
    batch: &[SFTExample],
    lr: f64,
    grad_clip: f64,
) -> Result<f64> {
    let mut grads = params.zeros_like();
    let loss = sft_loss(params, batch, Some(&mut grads))?;
    if !grads.is_finite() {
        return Err(CoeError::NonFiniteLoss("non-finite SFT gradient".into()));
    }
    clip_global_norm(&mut grads, grad_clip);
    optimizer.step(params, &grads, lr);
    Ok(loss)
}
