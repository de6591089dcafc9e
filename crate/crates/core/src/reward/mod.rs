//! Composite reward: answer accuracy, event-chain format/length and
//! chain-vs-video similarity, plus group-normalized advantages.

mod remote;
mod similarity;

pub use remote::RemoteEmbeddingClient;
pub use similarity::{
    cosine, similarity_reward, EmbeddingVector, OracleSimilarity, SimilarityMode, SimilarityModel,
};

use serde::{Deserialize, Serialize};

use crate::error::{CoeError, Result};
use crate::event::{chain_length, tag_validity_indicator, ParsedCompletion};
use crate::world::{GroundTruthTimeline, Task, TaskMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    /// Weight of the tag-validity indicator inside the chain reward.
    pub lambda: f64,
    /// Target number of events.
    pub target_length: usize,
    /// Offset of the length term; `None` means `1 - target_length`, which
    /// caps the chain reward at 1.
    pub bias: Option<f64>,
    /// Weight of the accuracy reward.
    pub alpha: f64,
    /// Weight of the chain reward. Not the KL coefficient.
    pub beta: f64,
    /// Added to the group standard deviation.
    pub delta: f64,
    pub clamp_re: bool,
    /// Cosine an open-set answer needs to count as correct.
    pub open_set_threshold: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda: 0.5,
            target_length: 3,
            bias: None,
            alpha: 0.6,
            beta: 0.2,
            delta: 1e-6,
            clamp_re: false,
            open_set_threshold: 0.9,
        }
    }
}

impl RewardWeights {
    pub fn effective_bias(&self) -> f64 {
        self.bias.unwrap_or(1.0 - self.target_length as f64)
    }

    /// Weight left for the similarity reward.
    pub fn similarity_weight(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoeError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.target_length == 0 {
            return bad("target_length must be positive".into());
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta > 1.0 + 1e-12 {
            return bad(format!(
                "need alpha, beta >= 0 and alpha + beta <= 1, got {} and {}",
                self.alpha, self.beta
            ));
        }
        if !(self.delta > 0.0) {
            return bad(format!("delta must be positive, got {}", self.delta));
        }
        if !(0.0..=1.0).contains(&self.open_set_threshold) {
            return bad(format!("open_set_threshold {} outside [0, 1]", self.open_set_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_a: f64,
    pub r_e: f64,
    pub r_s: f64,
    pub total: f64,
    /// Per-event similarities, in chain order.
    pub similarities: Vec<f64>,
}

/// `λ·I + (1-λ)·(L - |len - L| + b)`, optionally clamped to `[0, 1]`.
pub fn coe_reward(parsed: &ParsedCompletion, w: &RewardWeights) -> f64 {
    coe_reward_parts(
        tag_validity_indicator(parsed),
        chain_length(parsed),
        w,
    )
}

/// [`coe_reward`] from its two inputs.
pub fn coe_reward_parts(indicator: u8, len: usize, w: &RewardWeights) -> f64 {
    let l = w.target_length as f64;
    let length_term = l - (len as f64 - l).abs() + w.effective_bias();
    let r = w.lambda * indicator as f64 + (1.0 - w.lambda) * length_term;
    if w.clamp_re {
        r.clamp(0.0, 1.0)
    } else {
        r
    }
}

/// MCQ: exact label match. Open-set: oracle cosine against the true
/// successor's description at or above the threshold. No answer scores 0.
pub fn accuracy_reward(
    parsed: &ParsedCompletion,
    truth: &GroundTruthTimeline,
    task: &Task,
    model: &dyn SimilarityModel,
    w: &RewardWeights,
) -> Result<f64> {
    let Some(answer) = parsed.answer.as_deref().map(str::trim) else {
        return Ok(0.0);
    };
    match task.mode {
        TaskMode::Mcq => Ok(match &task.correct_label {
            Some(label) if label == answer => 1.0,
            _ => 0.0,
        }),
        TaskMode::OpenSet => {
            let a = model.embed_text(answer)?;
            let b = model.embed_text(&truth.future_event.description)?;
            Ok(if cosine(&a, &b) >= w.open_set_threshold {
                1.0
            } else {
                0.0
            })
        }
    }
}

/// `α·r_a + β·r_e + (1-α-β)·r_s`.
pub fn total_reward(r_a: f64, r_e: f64, r_s: f64, w: &RewardWeights) -> f64 {
    w.alpha * r_a + w.beta * r_e + w.similarity_weight() * r_s
}

/// Every reward component for one completion.
pub fn score_completion(
    parsed: &ParsedCompletion,
    task: &Task,
    truth: &GroundTruthTimeline,
    model: &dyn SimilarityModel,
    mode: SimilarityMode,
    w: &RewardWeights,
) -> Result<RewardBreakdown> {
    let r_a = accuracy_reward(parsed, truth, task, model, w)?;
    let r_e = coe_reward(parsed, w);
    let (r_s, similarities) = similarity_reward(&parsed.chain, &task.video, mode, model)?;
    Ok(RewardBreakdown {
        r_a,
        r_e,
        r_s,
        total: total_reward(r_a, r_e, r_s, w),
        similarities,
    })
}

/// `(r - mean) / (std + δ)` with the population standard deviation.
pub fn group_advantages(rewards: &[f64], delta: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(CoeError::GroupTooSmall(rewards.len()));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + delta;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::parse_completion;
    use crate::world::{generate_dataset, WorldConfig};

    fn w(lambda: f64, l: usize) -> RewardWeights {
        RewardWeights {
            lambda,
            target_length: l,
            ..Default::default()
        }
    }

    #[test]
    fn chain_reward_examples() {
        let w = w(0.5, 3);
        assert_eq!(w.effective_bias(), -2.0);
        assert_eq!(coe_reward_parts(1, 3, &w), 1.0);
        assert_eq!(coe_reward_parts(1, 5, &w), 0.0);
        assert_eq!(coe_reward_parts(0, 3, &w), 0.5);
    }

    #[test]
    fn chain_reward_is_a_tent_peaking_at_target() {
        for lambda in [0.0, 0.25, 0.5, 0.75] {
            for l in 1..=5 {
                let w = w(lambda, l);
                for i in [0, 1] {
                    let peak = coe_reward_parts(i, l, &w);
                    for len in 0..12 {
                        let r = coe_reward_parts(i, len, &w);
                        if len != l && lambda < 1.0 {
                            assert!(r < peak);
                        }
                        let step = (len as f64 - l as f64).abs() * (1.0 - lambda);
                        assert!((peak - r - step).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn clamp_keeps_chain_reward_in_unit_interval() {
        let mut w = w(0.5, 3);
        assert!(coe_reward_parts(0, 10, &w) < 0.0);
        w.clamp_re = true;
        assert_eq!(coe_reward_parts(0, 10, &w), 0.0);
        assert_eq!(coe_reward_parts(1, 3, &w), 1.0);
    }

    #[test]
    fn total_reward_examples() {
        let d = RewardWeights::default();
        assert!((total_reward(1.0, 1.0, 0.5, &d) - 0.9).abs() < 1e-12);
        let only_acc = RewardWeights {
            alpha: 1.0,
            beta: 0.0,
            ..Default::default()
        };
        assert_eq!(total_reward(0.3, 7.0, -1.0, &only_acc), 0.3);
        assert_eq!(total_reward(0.0, 0.0, 0.0, &d), 0.0);
    }

    #[test]
    fn advantage_examples() {
        let a = group_advantages(&[1.0, 0.5, 0.5, 0.0], 1e-6).unwrap();
        let expected = [std::f64::consts::SQRT_2, 0.0, 0.0, -std::f64::consts::SQRT_2];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-4);
        }
        assert_eq!(group_advantages(&[0.7; 4], 1e-6).unwrap(), vec![0.0; 4]);
        assert!(matches!(
            group_advantages(&[1.0], 1e-6),
            Err(CoeError::GroupTooSmall(1))
        ));
    }

    #[test]
    fn accuracy_mcq_and_open_set() {
        let c = WorldConfig::easy(5);
        let data = generate_dataset(&c, 1).unwrap();
        let (task, truth) = &data[0];
        let o = OracleSimilarity::new(&c);
        let d = RewardWeights::default();
        let label = task.correct_label.clone().unwrap();
        let right = parse_completion(&format!("<think>x</think><answer>{label}</answer>"));
        let none = parse_completion("<think>x</think>");
        assert_eq!(accuracy_reward(&right, truth, task, &o, &d).unwrap(), 1.0);
        assert_eq!(accuracy_reward(&none, truth, task, &o, &d).unwrap(), 0.0);
        let wrong_label = task.options.iter().find(|x| x.label != label).unwrap();
        let wrong = parse_completion(&format!("<answer>{}</answer>", wrong_label.label));
        assert_eq!(accuracy_reward(&wrong, truth, task, &o, &d).unwrap(), 0.0);

        let open = task.as_open_set();
        let desc = &truth.future_event.description;
        let exact = parse_completion(&format!("<answer>{desc}</answer>"));
        assert_eq!(accuracy_reward(&exact, truth, &open, &o, &d).unwrap(), 1.0);
        // two of three symbols: cosine 2/sqrt(6) ≈ 0.816, below 0.9
        let words: Vec<&str> = desc.split_whitespace().collect();
        let partial = parse_completion(&format!("<answer>{} {}</answer>", words[0], words[1]));
        assert_eq!(accuracy_reward(&partial, truth, &open, &o, &d).unwrap(), 0.0);
    }

    #[test]
    fn open_set_threshold_boundaries() {
        // counts (1,1,1,1,1,1,1,1,1,0) vs (1,...,1): cosine sqrt(0.9) ≈ 0.949
        let mut c = WorldConfig::easy(5);
        c.symbols_per_event = 10;
        c.event_vocab_size = 8;
        c.successor_table = (0..8)
            .map(|i| (0..8).map(|j| if j == (i + 1) % 8 { 1.0 } else { 0.0 }).collect())
            .collect();
        let data = generate_dataset(&c, 1).unwrap();
        let (task, truth) = &data[0];
        let open = task.as_open_set();
        let o = OracleSimilarity::new(&c);
        let d = RewardWeights::default();
        let words: Vec<&str> = truth.future_event.description.split_whitespace().collect();
        let nine = parse_completion(&format!("<answer>{}</answer>", words[..9].join(" ")));
        assert_eq!(accuracy_reward(&nine, truth, &open, &o, &d).unwrap(), 1.0);
        // seven of ten: sqrt(0.7) ≈ 0.837
        let seven = parse_completion(&format!("<answer>{}</answer>", words[..7].join(" ")));
        assert_eq!(accuracy_reward(&seven, truth, &open, &o, &d).unwrap(), 0.0);
    }

    #[test]
    fn invalid_weights_are_rejected() {
        let d = RewardWeights {
            alpha: 0.9,
            ..Default::default()
        };
        assert!(d.validate().is_err());
        let d = RewardWeights {
            delta: 0.0,
            ..Default::default()
        };
        assert!(d.validate().is_err());
        assert!(RewardWeights::default().validate().is_ok());
    }
}
