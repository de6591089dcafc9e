use serde::{Deserialize, Serialize};

use crate::policy::{GradientBuffer, PolicyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Plain gradient step.
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?}")),
        }
    }
}

/// Optimizer state. Steps *descend* along `grad`; callers maximizing an
/// objective pass its negated gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub t: u64,
    pub m: PolicyParams,
    pub v: PolicyParams,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, like: &PolicyParams) -> Self {
        Optimizer {
            kind,
            t: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    /// Applies one update. A zero learning rate leaves `params` untouched.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &GradientBuffer, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => params.add_scaled(grad, -lr),
            OptimizerKind::Adam => {
                self.t += 1;
                let c1 = 1.0 - BETA1.powi(self.t as i32);
                let c2 = 1.0 - BETA2.powi(self.t as i32);
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(self.m.tensors_mut())
                    .zip(self.v.tensors_mut());
                for (((p, g), m), v) in tensors {
                    for i in 0..p.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                        let step = lr * (m[i] / c1) / ((v[i] / c2).sqrt() + EPS);
                        p[i] -= step;
                    }
                }
            }
        }
    }
}

/// Euclidean norm over every tensor.
pub fn global_norm(grad: &GradientBuffer) -> f64 {
    grad.tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grad` so its norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grad: &mut GradientBuffer, max_norm: f64) -> f64 {
    let norm = global_norm(grad);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for t in grad.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
