//! Helpers shared by the integration tests.
#![allow(dead_code)]

use coe_core::event::{serialize_event, Event, Rule};
use coe_core::policy::{per_token_log_probs, GradientBuffer, PolicyConfig, PolicyParams};
use coe_core::reward::RewardBreakdown;
use coe_core::trainer::{RolloutGroup, SFTExample};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const WORDS: [&str; 8] = ["gaba", "geba", "kiba", "roba", "next", "fube", "saba", "doba"];

#[derive(Debug, Clone)]
pub struct Valid {
    pub events: Vec<Event>,
    pub reasoning: String,
    pub answer: String,
}

impl Valid {
    pub fn event_strings(&self) -> Vec<String> {
        self.events.iter().map(|e| serialize_event(e).unwrap()).collect()
    }

    pub fn render_with(&self, events: &[String], answer: Option<&str>) -> String {
        let mut out = String::from("<think>");
        for e in events {
            out.push_str(e);
        }
        out.push_str(&self.reasoning);
        out.push_str("</think>");
        if let Some(a) = answer {
            out.push_str(&format!("<answer>{a}</answer>"));
        }
        out
    }

    pub fn render(&self) -> String {
        self.render_with(&self.event_strings(), Some(&self.answer))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Defect {
    UnclosedEvent,
    StrayClose,
    ReversedTime,
    GarbledTime,
    MissingTimeField,
    NoEvents,
    OutOfOrder,
    NoAnswer,
    DuplicateAnswer,
}

impl Defect {
    pub fn rule(self) -> Rule {
        match self {
            Defect::UnclosedEvent | Defect::StrayClose => Rule::UnclosedTag,
            Defect::ReversedTime | Defect::GarbledTime => Rule::BadTimestamp,
            Defect::MissingTimeField => Rule::MalformedEvent,
            Defect::NoEvents => Rule::NoEvents,
            Defect::OutOfOrder => Rule::OutOfOrder,
            Defect::NoAnswer => Rule::MissingAnswer,
            Defect::DuplicateAnswer => Rule::DuplicateAnswer,
        }
    }
}

pub const ALL_DEFECTS: [Defect; 9] = [
    Defect::UnclosedEvent,
    Defect::StrayClose,
    Defect::ReversedTime,
    Defect::GarbledTime,
    Defect::MissingTimeField,
    Defect::NoEvents,
    Defect::OutOfOrder,
    Defect::NoAnswer,
    Defect::DuplicateAnswer,
];

fn random_phrase(rng: &mut ChaCha8Rng, max: usize) -> String {
    let n = rng.random_range(1..=max);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// A random completion that satisfies every tag rule.
pub fn random_valid(rng: &mut ChaCha8Rng) -> Valid {
    let n = rng.random_range(1..6);
    let mut raw: Vec<(u32, u32, String)> = (0..n)
        .map(|_| (rng.random_range(0..100), rng.random_range(0..30), random_phrase(rng, 3)))
        .collect();
    raw.sort_by_key(|(start, _, _)| *start);
    let events = raw
        .into_iter()
        .map(|(s, d, desc)| Event::new(s as f64 / 10.0, (s + d) as f64 / 10.0, desc).unwrap())
        .collect();
    let reasoning = if rng.random_bool(0.5) { random_phrase(rng, 6) } else { String::new() };
    Valid {
        events,
        reasoning,
        answer: random_phrase(rng, 3),
    }
}

/// Injects `defect` into event `at` (modulo the chain length).
pub fn mutate(v: &Valid, defect: Defect, at: usize) -> String {
    let mut events = v.event_strings();
    let i = at % events.len();
    let e = &v.events[i];
    match defect {
        Defect::UnclosedEvent => {
            events[i] = events[i].trim_end_matches("</event>").to_string();
        }
        Defect::StrayClose => events.insert(i, "</event>".into()),
        Defect::ReversedTime => {
            events[i] = format!(
                "<event>Time:{:.1}-{:.1},Des:{}</event>",
                e.t_end + 1.0,
                e.t_start,
                e.description
            );
        }
        Defect::GarbledTime => {
            events[i] = format!("<event>Time:{:.1}-x,Des:{}</event>", e.t_start, e.description);
        }
        Defect::MissingTimeField => {
            events[i] = format!("<event>{}</event>", e.description);
        }
        Defect::NoEvents => events.clear(),
        Defect::OutOfOrder => {
            let late = format!(
                "<event>Time:{:.1}-{:.1},Des:late</event>",
                e.t_start + 20.0,
                e.t_start + 21.0
            );
            events.insert(i, late);
        }
        Defect::NoAnswer => return v.render_with(&events, None),
        Defect::DuplicateAnswer => {
            return format!("{}<answer>{}</answer>", v.render(), v.answer);
        }
    }
    v.render_with(&events, Some(&v.answer))
}

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

pub fn tiny_config() -> PolicyConfig {
    PolicyConfig {
        vocab_size: 16,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        context: 32,
        d_ff: 16,
    }
}

/// Init with every tensor perturbed, so norm gains and biases are not at
/// their special starting values.
pub fn perturbed(seed: u64) -> PolicyParams {
    let mut p = PolicyParams::init(tiny_config(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for t in p.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.random_range(-0.2..0.2);
        }
    }
    p
}

pub fn tokens(rng: &mut ChaCha8Rng, n: usize) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(0..16)).collect()
}

/// Norm-wise relative error between `analytic` and central differences of
/// `f`, per tensor name.
pub fn fd_errors(
    params: &PolicyParams,
    analytic: &GradientBuffer,
    f: impl Fn(&PolicyParams) -> f64,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    let names = params.names();
    let grads = analytic.tensors();
    let mut probe = params.clone();
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].len();
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = probe.tensors()[ti][k];
            probe.tensors_mut()[ti][k] = orig + STEP;
            let up = f(&probe);
            probe.tensors_mut()[ti][k] = orig - STEP;
            let down = f(&probe);
            probe.tensors_mut()[ti][k] = orig;
            *slot = (up - down) / (2.0 * STEP);
        }
        let diff: f64 = grads[ti].iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = grads[ti].iter().map(|a| a * a).sum::<f64>().sqrt()
            + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = if scale < 1e-9 { diff } else { diff / scale };
        out.push((name.clone(), rel));
    }
    out
}

pub fn sft_batch(seed: u64) -> Vec<SFTExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..2)
        .map(|i| SFTExample {
            task_id: i,
            prompt: tokens(&mut rng, 9),
            target: tokens(&mut rng, 5),
            has_chain: false,
        })
        .collect()
}

pub fn group(params: &PolicyParams, rng: &mut ChaCha8Rng) -> RolloutGroup {
    let prompt = tokens(rng, 7);
    let completions = vec![tokens(rng, 4), tokens(rng, 6)];
    // old log-probs near the current ones keep every ratio inside the clip
    // range, where the surrogate is smooth
    let old_log_probs = completions
        .iter()
        .map(|c| {
            per_token_log_probs(params, &prompt, c)
                .unwrap()
                .into_iter()
                .map(|l| l + rng.random_range(-0.05..0.05))
                .collect()
        })
        .collect();
    let reference = perturbed(9);
    let ref_log_probs = completions
        .iter()
        .map(|c| per_token_log_probs(&reference, &prompt, c).unwrap())
        .collect();
    let reward = |total: f64| RewardBreakdown {
        r_a: total,
        r_e: 0.0,
        r_s: 0.0,
        total,
        similarities: vec![],
    };
    RolloutGroup {
        prompt,
        completions,
        rewards: vec![reward(1.0), reward(0.0)],
        advantages: vec![1.0, -1.0],
        old_log_probs,
        ref_log_probs,
    }
}
