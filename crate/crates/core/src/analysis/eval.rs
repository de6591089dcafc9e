//! Held-out evaluation: MCQ accuracy with greedy completions, and the
//! open-set judge comparison between several policies.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::judge::{judge_compare, win_rate, JudgeVerdict};
use crate::error::{CoeError, Result};
use crate::event::{parse_completion, ParsedCompletion};
use crate::policy::{choose_next, DecodeState, Decoding, PolicyParams};
use crate::reward::{similarity_reward, RewardWeights, SimilarityMode, SimilarityModel};
use crate::trainer::TaskEncoder;
use crate::vocab::TokenId;
use crate::world::{Sample, TaskMode};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// JSON schema of the metrics files written by `eval`.
pub const METRICS_SCHEMA: &str = r#"{
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "coe eval metrics",
  "type": "object",
  "required": ["schema_version", "mode", "tasks"],
  "properties": {
    "schema_version": { "const": 1 },
    "mode": { "enum": ["mcq", "judge"] },
    "tasks": { "type": "integer", "minimum": 0 },
    "accuracy": { "type": "number", "minimum": 0, "maximum": 1 },
    "tag_valid_rate": { "type": "number", "minimum": 0, "maximum": 1 },
    "mean_chain_length": { "type": "number", "minimum": 0 },
    "mean_r_s": { "type": "number", "minimum": -1, "maximum": 1 },
    "candidates": { "type": "array", "items": { "type": "string" } },
    "win_rates": {
      "type": "object",
      "additionalProperties": { "type": "number", "minimum": 0, "maximum": 1 }
    }
  },
  "allOf": [
    {
      "if": { "properties": { "mode": { "const": "mcq" } } },
      "then": { "required": ["accuracy", "tag_valid_rate", "mean_chain_length", "mean_r_s"] }
    },
    {
      "if": { "properties": { "mode": { "const": "judge" } } },
      "then": { "required": ["candidates", "win_rates"] }
    }
  ]
}"#;

/// One held-out task as seen by the evaluator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_id: usize,
    pub completion: String,
    /// Label picked among the options after `<answer>`.
    pub predicted_label: Option<String>,
    pub correct_label: Option<String>,
    pub correct: bool,
    pub tag_valid: bool,
    pub chain_length: usize,
    pub r_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McqMetrics {
    pub schema_version: u32,
    pub mode: String,
    pub tasks: usize,
    pub accuracy: f64,
    pub tag_valid_rate: f64,
    pub mean_chain_length: f64,
    pub mean_r_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeMetrics {
    pub schema_version: u32,
    pub mode: String,
    pub tasks: usize,
    pub candidates: Vec<String>,
    pub win_rates: std::collections::BTreeMap<String, f64>,
}

/// Greedy completion plus the option label the policy ranks highest right
/// after `<answer>`. If the policy never opens an answer block, `<answer>`
/// is appended to its completion and the label is read from there.
pub fn greedy_answer(
    params: &PolicyParams,
    prompt: &[TokenId],
    labels: &[TokenId],
    encoder: &TaskEncoder,
    max_new: usize,
) -> Result<(Vec<TokenId>, Option<TokenId>)> {
    let vocab = &encoder.vocab;
    // keep one slot free for a forced `<answer>`
    let budget = max_new.min(params.config.context.saturating_sub(prompt.len() + 1));
    let mut state = DecodeState::prefill(params, prompt)?;
    // greedy decoding never touches the rng
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pick = |logits: &ndarray::Array1<f64>| {
        labels
            .iter()
            .copied()
            .max_by(|a, b| logits[*a as usize].total_cmp(&logits[*b as usize]).then(b.cmp(a)))
    };
    let mut completion = Vec::new();
    let mut label = None;
    let mut last_pushed = None;
    while completion.len() < budget {
        let tok = choose_next(&state, Decoding::Greedy, &mut rng);
        completion.push(tok);
        if tok == vocab.answer_close() || completion.len() == budget {
            break;
        }
        state.push(params, tok)?;
        last_pushed = Some(tok);
        if tok == vocab.answer_open() && label.is_none() {
            label = pick(&state.next_logits);
        }
    }
    if label.is_none() {
        if last_pushed != Some(vocab.answer_open()) {
            state.push(params, vocab.answer_open())?;
        }
        label = pick(&state.next_logits);
    }
    Ok((completion, label))
}

/// MCQ accuracy and completion statistics over `samples`.
pub fn evaluate_mcq(
    params: &PolicyParams,
    encoder: &TaskEncoder,
    samples: &[Sample],
    max_new: usize,
    similarity: &dyn SimilarityModel,
    mode: SimilarityMode,
) -> Result<(McqMetrics, Vec<EvalRecord>)> {
    let vocab = &encoder.vocab;
    let mut records = Vec::with_capacity(samples.len());
    for (task, _) in samples {
        if task.mode != TaskMode::Mcq {
            continue;
        }
        let prompt = encoder.prompt(task)?.ids;
        let labels: Vec<TokenId> = task
            .options
            .iter()
            .map(|o| vocab.id(&o.label))
            .collect::<Result<_>>()?;
        let (completion, label) = greedy_answer(params, &prompt, &labels, encoder, max_new)?;
        let text = vocab.decode(&completion);
        let parsed = parse_completion(&text);
        let (r_s, _) = similarity_reward(&parsed.chain, &task.video, mode, similarity)?;
        let predicted_label = label.map(|l| vocab.piece(l).to_string());
        records.push(EvalRecord {
            task_id: task.id,
            correct: predicted_label.is_some() && predicted_label == task.correct_label,
            completion: text,
            predicted_label,
            correct_label: task.correct_label.clone(),
            tag_valid: parsed.tag_valid,
            chain_length: parsed.chain.len(),
            r_s,
        });
    }
    let n = records.len().max(1) as f64;
    let metrics = McqMetrics {
        schema_version: METRICS_SCHEMA_VERSION,
        mode: "mcq".into(),
        tasks: records.len(),
        accuracy: records.iter().filter(|r| r.correct).count() as f64 / n,
        tag_valid_rate: records.iter().filter(|r| r.tag_valid).count() as f64 / n,
        mean_chain_length: records.iter().map(|r| r.chain_length as f64).sum::<f64>() / n,
        mean_r_s: records.iter().map(|r| r.r_s).sum::<f64>() / n,
    };
    Ok((metrics, records))
}

/// Greedy open-set completion of `sample` by one policy.
pub fn open_set_completion(
    params: &PolicyParams,
    encoder: &TaskEncoder,
    sample: &Sample,
    max_new: usize,
) -> Result<ParsedCompletion> {
    let task = sample.0.as_open_set();
    let prompt = encoder.prompt(&task)?.ids;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let budget = max_new.min(params.config.context.saturating_sub(prompt.len()));
    let completion = crate::policy::sample_completion(
        params,
        &prompt,
        Decoding::Greedy,
        budget,
        Some(encoder.vocab.answer_close()),
        &mut rng,
    )?;
    Ok(parse_completion(&encoder.vocab.decode(&completion)))
}

/// Every candidate answers every task open-set; the oracle judge picks a
/// winner per task.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_judge(
    candidates: &[(String, PolicyParams)],
    encoder: &TaskEncoder,
    samples: &[Sample],
    max_new: usize,
    similarity: &dyn SimilarityModel,
    mode: SimilarityMode,
    weights: &RewardWeights,
) -> Result<(JudgeMetrics, Vec<JudgeVerdict>)> {
    if candidates.len() < 2 {
        return Err(CoeError::FewerThanTwoCandidates(candidates.len()));
    }
    let ids: Vec<String> = candidates.iter().map(|(id, _)| id.clone()).collect();
    let mut verdicts = Vec::with_capacity(samples.len());
    for sample in samples {
        let parsed: Vec<ParsedCompletion> = candidates
            .iter()
            .map(|(_, p)| open_set_completion(p, encoder, sample, max_new))
            .collect::<Result<_>>()?;
        verdicts.push(judge_compare(
            &sample.0, &parsed, &ids, &sample.1, similarity, mode, weights,
        )?);
    }
    let rates = win_rate(&verdicts, &ids)?;
    Ok((
        JudgeMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            mode: "judge".into(),
            tasks: verdicts.len(),
            candidates: ids,
            win_rates: rates,
        },
        verdicts,
    ))
}
