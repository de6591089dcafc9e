//! Visual-attention comparison between a base and a candidate policy.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoeError, Result};
use crate::policy::{attention_profile, PolicyParams, SegmentMasses};
use crate::trainer::TaskEncoder;
use crate::world::Sample;

/// Share of samples where the candidate attends more to the visual segment
/// (strictly), and the mean mass increase in percentage points.
pub fn attention_wr_ir(base: &[f64], cand: &[f64]) -> Result<(f64, f64)> {
    if base.len() != cand.len() {
        return Err(CoeError::LengthMismatch(base.len(), cand.len()));
    }
    if base.is_empty() {
        return Err(CoeError::InvariantViolation("no attention samples".into()));
    }
    let n = base.len() as f64;
    let wins = base.iter().zip(cand).filter(|(b, c)| c > b).count() as f64;
    let diff: f64 = base.iter().zip(cand).map(|(b, c)| c - b).sum();
    Ok((wins / n, 100.0 * diff / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleAttention {
    pub task_id: usize,
    pub base: SegmentMasses,
    pub candidate: SegmentMasses,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionComparison {
    pub samples: Vec<SampleAttention>,
    pub win_rate: f64,
    /// Percentage points.
    pub improvement: f64,
}

impl AttentionComparison {
    pub fn from_samples(samples: Vec<SampleAttention>) -> Result<Self> {
        let base: Vec<f64> = samples.iter().map(|s| s.base.visual).collect();
        let cand: Vec<f64> = samples.iter().map(|s| s.candidate.visual).collect();
        let (win_rate, improvement) = attention_wr_ir(&base, &cand)?;
        Ok(AttentionComparison {
            samples,
            win_rate,
            improvement,
        })
    }
}

impl fmt::Display for AttentionComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WR {:.2} / IR {:+.2}%", self.win_rate, self.improvement)
    }
}

/// Option-query attention masses of both policies on every sample prompt.
pub fn compare_attention(
    base: &PolicyParams,
    candidate: &PolicyParams,
    encoder: &TaskEncoder,
    samples: &[Sample],
) -> Result<AttentionComparison> {
    let rows = samples
        .iter()
        .map(|(task, _)| {
            let prompt = encoder.prompt(task)?;
            Ok(SampleAttention {
                task_id: task.id,
                base: attention_profile(base, &prompt)?,
                candidate: attention_profile(candidate, &prompt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    AttentionComparison::from_samples(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::aggregate_option_attention;
    use crate::world::{generate_dataset, SegmentMap, WorldConfig};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    #[test]
    fn wr_ir_hand_example() {
        let (wr, ir) = attention_wr_ir(&[0.10, 0.20], &[0.15, 0.18]).unwrap();
        assert_eq!(wr, 0.5);
        assert_abs_diff_eq!(ir, 1.5, epsilon = 1e-12);
        assert_eq!(attention_wr_ir(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), (0.0, 0.0));
        assert!(matches!(attention_wr_ir(&[0.1], &[0.1, 0.2]), Err(CoeError::LengthMismatch(1, 2))));
        assert!(attention_wr_ir(&[], &[]).is_err());
    }

    #[test]
    fn masses_from_hand_built_maps() {
        // 5 tokens: visual 0..2, question 2..3, options 3..5
        let seg = SegmentMap {
            visual: 0..2,
            question: 2..3,
            options: 3..5,
        };
        let mut m = Array2::<f64>::zeros((5, 5));
        m.row_mut(3).assign(&ndarray::arr1(&[0.5, 0.1, 0.2, 0.2, 0.0]));
        m.row_mut(4).assign(&ndarray::arr1(&[0.3, 0.3, 0.0, 0.2, 0.2]));
        let base = aggregate_option_attention(&[m.clone()], &seg).unwrap();
        assert_abs_diff_eq!(base.visual, (0.6 + 0.6) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(base.question, 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(base.options, 0.3, epsilon = 1e-15);

        let mut c = Array2::<f64>::zeros((5, 5));
        c.row_mut(3).assign(&ndarray::arr1(&[0.4, 0.4, 0.1, 0.1, 0.0]));
        c.row_mut(4).assign(&ndarray::arr1(&[0.4, 0.4, 0.0, 0.1, 0.1]));
        let cand = aggregate_option_attention(&[c], &seg).unwrap();
        let cmp = AttentionComparison::from_samples(vec![
            SampleAttention { task_id: 0, base, candidate: cand },
            SampleAttention { task_id: 1, base: cand, candidate: base },
        ])
        .unwrap();
        assert_eq!(cmp.win_rate, 0.5);
        assert_abs_diff_eq!(cmp.improvement, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identical_policies_do_not_improve() {
        let world = WorldConfig::easy(5);
        let enc = TaskEncoder::new(&world);
        let params = PolicyParams::init(enc.policy_config(&Default::default()), 3).unwrap();
        let data = generate_dataset(&world, 5).unwrap();
        let cmp = compare_attention(&params, &params, &enc, &data).unwrap();
        assert_eq!((cmp.win_rate, cmp.improvement), (0.0, 0.0));
        for s in &cmp.samples {
            assert!((0.0..=1.0).contains(&s.base.visual));
            assert_abs_diff_eq!(s.base.total(), 1.0, epsilon = 1e-9);
        }
        assert_eq!(cmp.to_string(), "WR 0.00 / IR +0.00%");
    }

    #[test]
    fn report_format() {
        let cmp = AttentionComparison {
            samples: vec![],
            win_rate: 0.93,
            improvement: 15.11,
        };
        assert_eq!(cmp.to_string(), "WR 0.93 / IR +15.11%");
    }
}
