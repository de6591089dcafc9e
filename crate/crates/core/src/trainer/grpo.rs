use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::optim::{clip_global_norm, Optimizer};
use super::{TaskEncoder, TrainConfig};
use crate::error::{CoeError, Result};
use crate::event::parse_completion;
use crate::policy::{
    backward, completion_rows, kl_rows, log_softmax_rows, per_token_log_probs, sample_completion,
    Decoding, GradientBuffer, PolicyParams,
};
use crate::reward::{group_advantages, score_completion, RewardBreakdown, SimilarityModel};
use crate::vocab::TokenId;
use crate::world::Sample;

/// How importance ratios are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RatioMode {
    /// One ratio per token, token terms averaged within a completion.
    #[default]
    Token,
    /// One ratio per completion from the summed log-probabilities.
    Sequence,
}

impl std::str::FromStr for RatioMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "token" => Ok(RatioMode::Token),
            "sequence" => Ok(RatioMode::Sequence),
            other => Err(format!("unknown ratio mode {other:?}")),
        }
    }
}

/// G completions of one prompt with everything the objective needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt: Vec<TokenId>,
    pub completions: Vec<Vec<TokenId>>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
    /// Realized-token log-probabilities under the sampling-time policy.
    pub old_log_probs: Vec<Vec<f64>>,
    /// Realized-token log-probabilities under the reference policy.
    pub ref_log_probs: Vec<Vec<f64>>,
}

impl RolloutGroup {
    pub fn size(&self) -> usize {
        self.completions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.size();
        if g < 2 {
            return Err(CoeError::GroupTooSmall(g));
        }
        for len in [
            self.rewards.len(),
            self.advantages.len(),
            self.old_log_probs.len(),
            self.ref_log_probs.len(),
        ] {
            if len != g {
                return Err(CoeError::LengthMismatch(len, g));
            }
        }
        for (c, old) in self.completions.iter().zip(&self.old_log_probs) {
            if c.is_empty() {
                return Err(CoeError::InvariantViolation("empty completion in group".into()));
            }
            if c.len() != old.len() {
                return Err(CoeError::LengthMismatch(old.len(), c.len()));
            }
        }
        Ok(())
    }
}

/// `min(ρ·A, clip(ρ, 1-ε, 1+ε)·A)`.
pub fn clipped_term(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let unclipped = ratio * advantage;
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage;
    unclipped.min(clipped)
}

/// True when the minimum is attained by the unclipped branch, i.e. the term
/// still depends on the ratio.
fn unclipped_active(ratio: f64, advantage: f64, epsilon: f64) -> bool {
    ratio * advantage <= ratio.clamp(1.0 - epsilon, 1.0 + epsilon) * advantage
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenDiagnostic {
    pub ratio: f64,
    /// The clipped branch was selected and the term is constant in θ.
    pub clipped: bool,
    /// Exact next-token KL to the reference at this position.
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    /// Group mean of (policy term − kl_coeff · KL).
    pub objective: f64,
    pub policy_term: f64,
    pub kl: f64,
    pub clip_fraction: f64,
    pub per_token: Vec<Vec<TokenDiagnostic>>,
}

/// Clipped surrogate with an exact KL penalty, averaged over the group.
///
/// With `grads`, adds `scale · ∇θ objective` to it. Old-policy log-probs are
/// treated as constants.
#[allow(clippy::too_many_arguments)]
pub fn surrogate_objective(
    params: &PolicyParams,
    ref_params: &PolicyParams,
    group: &RolloutGroup,
    epsilon: f64,
    kl_coeff: f64,
    mode: RatioMode,
    mut grads: Option<&mut GradientBuffer>,
    scale: f64,
) -> Result<SurrogateReport> {
    group.validate()?;
    let g = group.size() as f64;
    let mut policy_sum = 0.0;
    let mut kl_sum = 0.0;
    let mut clipped_tokens = 0usize;
    let mut total_tokens = 0usize;
    let mut per_token = Vec::with_capacity(group.size());

    for i in 0..group.size() {
        let completion = &group.completions[i];
        let adv = group.advantages[i];
        let n = completion.len();
        let cache = completion_rows(params, &group.prompt, completion)?;
        let logp = log_softmax_rows(&cache.logits);
        let logq = log_softmax_rows(&completion_rows(ref_params, &group.prompt, completion)?.logits);
        let kls = kl_rows(&logp, &logq);

        let log_ratio: Vec<f64> = completion
            .iter()
            .enumerate()
            .map(|(t, &tok)| logp[[t, tok as usize]] - group.old_log_probs[i][t])
            .collect();
        // d(objective_i)/d(log π(token_t)), before the softmax chain rule
        let mut dlogp_token = vec![0.0; n];
        let mut diags = Vec::with_capacity(n);
        let policy_i = match mode {
            RatioMode::Token => {
                let mut acc = 0.0;
                for t in 0..n {
                    let ratio = log_ratio[t].exp();
                    if !ratio.is_finite() {
                        return Err(CoeError::NonFiniteLoss(format!(
                            "ratio {ratio} at completion {i}, token {t}"
                        )));
                    }
                    acc += clipped_term(ratio, adv, epsilon);
                    let active = unclipped_active(ratio, adv, epsilon);
                    if active {
                        dlogp_token[t] = adv * ratio / n as f64;
                    } else {
                        clipped_tokens += 1;
                    }
                    diags.push(TokenDiagnostic {
                        ratio,
                        clipped: !active,
                        kl: kls[t],
                    });
                }
                acc / n as f64
            }
            RatioMode::Sequence => {
                let ratio = log_ratio.iter().sum::<f64>().exp();
                if !ratio.is_finite() {
                    return Err(CoeError::NonFiniteLoss(format!(
                        "sequence ratio {ratio} at completion {i}"
                    )));
                }
                let active = unclipped_active(ratio, adv, epsilon);
                for t in 0..n {
                    if active {
                        dlogp_token[t] = adv * ratio;
                    } else {
                        clipped_tokens += 1;
                    }
                    diags.push(TokenDiagnostic {
                        ratio,
                        clipped: !active,
                        kl: kls[t],
                    });
                }
                clipped_term(ratio, adv, epsilon)
            }
        };
        total_tokens += n;
        let kl_i = kls.iter().sum::<f64>() / n as f64;
        policy_sum += policy_i;
        kl_sum += kl_i;
        per_token.push(diags);

        if let Some(gb) = grads.as_deref_mut() {
            let w = scale / g;
            let p = logp.mapv(f64::exp);
            let mut d = Array2::<f64>::zeros(logp.dim());
            for t in 0..n {
                let tok = completion[t] as usize;
                let a = dlogp_token[t];
                let kl_w = -kl_coeff / n as f64;
                for k in 0..d.ncols() {
                    let pk = p[[t, k]];
                    // d log p_tok / d z_k = 1[k = tok] − p_k
                    let mut v = -a * pk;
                    if k == tok {
                        v += a;
                    }
                    // d KL(p‖q) / d z_k = p_k (log p_k − log q_k − KL)
                    if pk > 0.0 {
                        v += kl_w * pk * (logp[[t, k]] - logq[[t, k]] - kls[t]);
                    }
                    d[[t, k]] = w * v;
                }
            }
            backward(params, &cache, &d, gb)?;
        }
    }

    let policy_term = policy_sum / g;
    let kl = kl_sum / g;
    let objective = policy_term - kl_coeff * kl;
    if !objective.is_finite() {
        return Err(CoeError::NonFiniteLoss(format!("surrogate objective {objective}")));
    }
    Ok(SurrogateReport {
        objective,
        policy_term,
        kl,
        clip_fraction: clipped_tokens as f64 / total_tokens.max(1) as f64,
        per_token,
    })
}

/// Fixed pieces shared by every GRPO step of a run.
pub struct GrpoContext<'a> {
    pub encoder: &'a TaskEncoder,
    pub similarity: &'a dyn SimilarityModel,
    pub config: &'a TrainConfig,
}

/// Samples, scores and normalizes one group for `sample`.
pub fn rollout_group<R: Rng>(
    ctx: &GrpoContext<'_>,
    params: &PolicyParams,
    ref_params: &PolicyParams,
    sample: &Sample,
    rng: &mut R,
) -> Result<RolloutGroup> {
    let (task, truth) = sample;
    let cfg = ctx.config;
    let vocab = &ctx.encoder.vocab;
    let prompt = ctx.encoder.prompt(task)?.ids;
    let stop = Some(vocab.answer_close());
    let decoding = Decoding::Sample {
        temperature: cfg.temperature,
    };
    let mut completions = Vec::with_capacity(cfg.group_size);
    let mut rewards = Vec::with_capacity(cfg.group_size);
    for _ in 0..cfg.group_size {
        let completion = sample_completion(params, &prompt, decoding, cfg.max_new, stop, rng)?;
        let parsed = parse_completion(&vocab.decode(&completion));
        rewards.push(score_completion(
            &parsed,
            task,
            truth,
            ctx.similarity,
            cfg.similarity_mode,
            &cfg.rewards,
        )?);
        completions.push(completion);
    }
    let totals: Vec<f64> = rewards.iter().map(|r| r.total).collect();
    let advantages = group_advantages(&totals, cfg.rewards.delta)?;
    let mut old_log_probs = Vec::with_capacity(cfg.group_size);
    let mut ref_log_probs = Vec::with_capacity(cfg.group_size);
    for c in &completions {
        old_log_probs.push(per_token_log_probs(params, &prompt, c)?);
        ref_log_probs.push(per_token_log_probs(ref_params, &prompt, c)?);
    }
    Ok(RolloutGroup {
        prompt,
        completions,
        rewards,
        advantages,
        old_log_probs,
        ref_log_probs,
    })
}

/// One row of `curves.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingCurvePoint {
    pub step: usize,
    pub r_a: f64,
    pub r_e: f64,
    pub r_s: f64,
    pub total: f64,
    pub kl: f64,
    pub objective: f64,
    /// Wall-clock milliseconds spent on the step.
    pub ms: u64,
}

/// Rolls out every prompt of `batch`, then takes one ascent step on the mean
/// objective. On any error `params` and `optimizer` are left untouched.
pub fn grpo_step<R: Rng>(
    ctx: &GrpoContext<'_>,
    params: &mut PolicyParams,
    ref_params: &PolicyParams,
    optimizer: &mut Optimizer,
    batch: &[Sample],
    step: usize,
    rng: &mut R,
) -> Result<(TrainingCurvePoint, Vec<RolloutGroup>)> {
    let started = std::time::Instant::now();
    if batch.is_empty() {
        return Err(CoeError::InvalidConfig("empty GRPO batch".into()));
    }
    let cfg = ctx.config;
    let mut groups = Vec::with_capacity(batch.len());
    for sample in batch {
        groups.push(rollout_group(ctx, params, ref_params, sample, rng)?);
    }

    let mut grads = params.zeros_like();
    let scale = 1.0 / groups.len() as f64;
    let (mut objective, mut kl) = (0.0, 0.0);
    for group in &groups {
        let report = surrogate_objective(
            params,
            ref_params,
            group,
            cfg.clip_epsilon,
            cfg.kl_coeff,
            cfg.ratio_mode,
            Some(&mut grads),
            scale,
        )?;
        objective += report.objective * scale;
        kl += report.kl * scale;
    }
    if !grads.is_finite() {
        return Err(CoeError::NonFiniteLoss(format!("non-finite GRPO gradient at step {step}")));
    }
    // ascend: the optimizer descends along the negated gradient
    for t in grads.tensors_mut() {
        t.iter_mut().for_each(|x| *x = -*x);
    }
    clip_global_norm(&mut grads, cfg.grad_clip);
    optimizer.step(params, &grads, cfg.learning_rate);

    let all: Vec<&RewardBreakdown> = groups.iter().flat_map(|g| g.rewards.iter()).collect();
    let mean = |f: fn(&RewardBreakdown) -> f64| all.iter().map(|r| f(r)).sum::<f64>() / all.len() as f64;
    let point = TrainingCurvePoint {
        step,
        r_a: mean(|r| r.r_a),
        r_e: mean(|r| r.r_e),
        r_s: mean(|r| r.r_s),
        total: mean(|r| r.total),
        kl,
        objective,
        ms: started.elapsed().as_millis() as u64,
    };
    Ok((point, groups))
}
