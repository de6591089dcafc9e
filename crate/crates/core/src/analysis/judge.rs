//! Rule-based judge over open-set candidate completions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoeError, Result};
use crate::event::ParsedCompletion;
use crate::reward::{accuracy_reward, similarity_reward, RewardWeights, SimilarityMode, SimilarityModel};
use crate::world::{GroundTruthTimeline, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReasonCode {
    BetterAnswer,
    BetterGrounding,
    TieBreak,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub task_id: usize,
    pub candidate_ids: Vec<String>,
    pub winner: String,
    pub winner_index: usize,
    pub reason: ReasonCode,
    pub answer_scores: Vec<f64>,
    pub grounding_scores: Vec<f64>,
}

/// Scores every candidate by (open-set answer correctness, chain grounding)
/// and picks the lexicographic maximum; exact ties go to the lowest index.
#[allow(clippy::too_many_arguments)]
pub fn judge_compare(
    task: &Task,
    candidates: &[ParsedCompletion],
    ids: &[String],
    truth: &GroundTruthTimeline,
    similarity: &dyn SimilarityModel,
    mode: SimilarityMode,
    weights: &RewardWeights,
) -> Result<JudgeVerdict> {
    if candidates.len() < 2 {
        return Err(CoeError::FewerThanTwoCandidates(candidates.len()));
    }
    if ids.len() != candidates.len() {
        return Err(CoeError::LengthMismatch(ids.len(), candidates.len()));
    }
    let open = task.as_open_set();
    let mut answer_scores = Vec::with_capacity(candidates.len());
    let mut grounding_scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        answer_scores.push(accuracy_reward(c, truth, &open, similarity, weights)?);
        let (g, _) = similarity_reward(&c.chain, &task.video, mode, similarity)?;
        grounding_scores.push(g);
    }

    let best_answer = answer_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let by_answer: Vec<usize> = (0..candidates.len())
        .filter(|&i| answer_scores[i] == best_answer)
        .collect();
    let best_grounding = by_answer
        .iter()
        .map(|&i| grounding_scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let by_grounding: Vec<usize> = by_answer
        .iter()
        .copied()
        .filter(|&i| grounding_scores[i] == best_grounding)
        .collect();
    let winner_index = by_grounding[0];
    let reason = if by_answer.len() == 1 {
        ReasonCode::BetterAnswer
    } else if by_grounding.len() == 1 {
        ReasonCode::BetterGrounding
    } else {
        ReasonCode::TieBreak
    };
    Ok(JudgeVerdict {
        task_id: task.id,
        candidate_ids: ids.to_vec(),
        winner: ids[winner_index].clone(),
        winner_index,
        reason,
        answer_scores,
        grounding_scores,
    })
}

/// Share of verdicts won by each of `ids`.
pub fn win_rate(verdicts: &[JudgeVerdict], ids: &[String]) -> Result<BTreeMap<String, f64>> {
    if verdicts.is_empty() {
        return Err(CoeError::EmptyVerdicts);
    }
    let mut wins: BTreeMap<String, f64> = ids.iter().map(|id| (id.clone(), 0.0)).collect();
    for v in verdicts {
        match wins.get_mut(&v.winner) {
            Some(w) => *w += 1.0,
            None => {
                return Err(CoeError::InvariantViolation(format!(
                    "verdict winner {} is not a known candidate",
                    v.winner
                )))
            }
        }
    }
    let n = verdicts.len() as f64;
    wins.values_mut().for_each(|w| *w /= n);
    Ok(wins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{parse_completion, EventChain};
    use crate::reward::OracleSimilarity;
    use crate::world::{generate_dataset, WorldConfig};

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    fn completion(chain: &EventChain, answer: &str) -> ParsedCompletion {
        let mut text = String::from("<think>");
        for e in chain.iter() {
            text.push_str(&crate::event::serialize_event(e).unwrap());
        }
        text.push_str(&format!("</think><answer>{answer}</answer>"));
        parse_completion(&text)
    }

    #[test]
    fn judge_orders_answer_then_grounding() {
        let mut c = WorldConfig::easy(2);
        c.noise_rate = 0.0;
        let o = OracleSimilarity::new(&c);
        let w = RewardWeights::default();
        for (task, truth) in generate_dataset(&c, 20).unwrap() {
            let right = truth.future_event.description.clone();
            let wrong = c.type_description((truth.future_type + 1) % c.event_vocab_size);
            let grounded = completion(&truth.events, &right);
            let shifted = completion(&truth.events.shifted(1.0), &right);
            let wrong_answer = completion(&truth.events, &wrong);

            let v = judge_compare(&task, &[shifted.clone(), grounded.clone()], &ids(2), &truth, &o, SimilarityMode::VideoLevel, &w).unwrap();
            assert_eq!(v.winner_index, 1);
            assert_eq!(v.reason, ReasonCode::BetterGrounding);

            let v = judge_compare(&task, &[wrong_answer.clone(), shifted.clone()], &ids(2), &truth, &o, SimilarityMode::VideoLevel, &w).unwrap();
            assert_eq!(v.winner_index, 1);
            assert_eq!(v.reason, ReasonCode::BetterAnswer);

            let v = judge_compare(&task, &[grounded.clone(), grounded.clone(), grounded], &ids(3), &truth, &o, SimilarityMode::VideoLevel, &w).unwrap();
            assert_eq!(v.winner_index, 0);
            assert_eq!(v.reason, ReasonCode::TieBreak);
        }
    }

    #[test]
    fn judge_needs_two_candidates() {
        let c = WorldConfig::easy(2);
        let data = generate_dataset(&c, 1).unwrap();
        let (task, truth) = &data[0];
        let o = OracleSimilarity::new(&c);
        let one = [parse_completion("<answer>x</answer>")];
        assert!(matches!(
            judge_compare(task, &one, &ids(1), truth, &o, SimilarityMode::VideoLevel, &RewardWeights::default()),
            Err(CoeError::FewerThanTwoCandidates(1))
        ));
    }

    fn verdict(winner: usize, n: usize) -> JudgeVerdict {
        JudgeVerdict {
            task_id: 0,
            candidate_ids: ids(n),
            winner: format!("m{winner}"),
            winner_index: winner,
            reason: ReasonCode::TieBreak,
            answer_scores: vec![0.0; n],
            grounding_scores: vec![0.0; n],
        }
    }

    #[test]
    fn win_rate_counts() {
        let v: Vec<_> = [0, 0, 1, 2].iter().map(|&w| verdict(w, 3)).collect();
        let r = win_rate(&v, &ids(3)).unwrap();
        assert_eq!(r["m0"], 0.5);
        assert_eq!(r["m1"], 0.25);
        assert_eq!(r["m2"], 0.25);
        let all: Vec<_> = (0..5).map(|_| verdict(1, 2)).collect();
        let r = win_rate(&all, &ids(2)).unwrap();
        assert_eq!((r["m0"], r["m1"]), (0.0, 1.0));
        assert!(matches!(win_rate(&[], &ids(2)), Err(CoeError::EmptyVerdicts)));
    }
}
