//! Autoregressive decoding with a key/value cache.

use ndarray::{Array1, Array2};
use rand::Rng;

use super::forward::{forward, gelu, norm_row};
use super::params::PolicyParams;
use crate::error::{CoeError, Result};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Sample { temperature: f64 },
}

impl Decoding {
    /// `temperature == 0` decodes greedily.
    pub fn from_temperature(temperature: f64) -> Result<Self> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(CoeError::InvalidConfig(format!(
                "temperature must be non-negative, got {temperature}"
            )));
        }
        Ok(if temperature == 0.0 {
            Decoding::Greedy
        } else {
            Decoding::Sample { temperature }
        })
    }
}

/// Cached keys and values of every layer for the tokens seen so far.
#[derive(Debug, Clone)]
pub struct DecodeState {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
    /// Logits predicting the next token.
    pub next_logits: Array1<f64>,
}

impl DecodeState {
    /// Runs the prompt once and keeps its keys and values.
    pub fn prefill(params: &PolicyParams, prompt: &[TokenId]) -> Result<Self> {
        if prompt.is_empty() {
            return Err(CoeError::InvariantViolation("prompt must not be empty".into()));
        }
        let cache = forward(params, prompt, prompt.len() - 1)?;
        let keys = cache
            .layers
            .iter()
            .map(|l| l.k.as_slice().unwrap().to_vec())
            .collect();
        let values = cache
            .layers
            .iter()
            .map(|l| l.v.as_slice().unwrap().to_vec())
            .collect();
        Ok(DecodeState {
            keys,
            values,
            len: prompt.len(),
            next_logits: cache.logits.row(0).to_owned(),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends `token` and updates `next_logits`.
    pub fn push(&mut self, params: &PolicyParams, token: TokenId) -> Result<()> {
        let c = &params.config;
        if self.len >= c.context {
            return Err(CoeError::ContextOverflow {
                len: self.len + 1,
                context: c.context,
            });
        }
        let d = c.d_model;
        let hd = c.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let pos = self.len;
        let mut x: Array1<f64> = &params.tok_emb.row(token as usize) + &params.pos_emb.row(pos);
        for (l, b) in params.blocks.iter().enumerate() {
            let y = norm_row(&x.view(), &b.ln1_g, &b.ln1_b);
            let q = y.dot(&b.wq) + &b.bq;
            let k = y.dot(&b.wk) + &b.bk;
            let v = y.dot(&b.wv) + &b.bv;
            self.keys[l].extend(k.iter());
            self.values[l].extend(v.iter());
            let n = pos + 1;
            let keys = Array2::from_shape_vec((n, d), std::mem::take(&mut self.keys[l])).unwrap();
            let values =
                Array2::from_shape_vec((n, d), std::mem::take(&mut self.values[l])).unwrap();
            let mut o = Array1::<f64>::zeros(d);
            for h in 0..c.n_heads {
                let r = h * hd..(h + 1) * hd;
                let qh = q.slice(ndarray::s![r.clone()]);
                let mut scores: Vec<f64> = keys
                    .rows()
                    .into_iter()
                    .map(|kr| kr.slice(ndarray::s![r.clone()]).dot(&qh) * scale)
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let mut oh = o.slice_mut(ndarray::s![r.clone()]);
                for (s, vr) in scores.iter().zip(values.rows()) {
                    oh.scaled_add(s / sum, &vr.slice(ndarray::s![r.clone()]));
                }
            }
            self.keys[l] = keys.into_raw_vec_and_offset().0;
            self.values[l] = values.into_raw_vec_and_offset().0;
            let a = o.dot(&b.wo) + &b.bo;
            let x_mid = &x + &a;
            let y = norm_row(&x_mid.view(), &b.ln2_g, &b.ln2_b);
            let f = (y.dot(&b.w1) + &b.b1).mapv(gelu);
            x = &x_mid + &(f.dot(&b.w2) + &b.b2);
        }
        let y = norm_row(&x.view(), &params.lnf_g, &params.lnf_b);
        self.next_logits = y.dot(&params.w_out) + &params.b_out;
        self.len += 1;
        Ok(())
    }
}

fn argmax(v: &Array1<f64>) -> TokenId {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best as TokenId
}

fn sample_categorical<R: Rng>(logits: &Array1<f64>, temperature: f64, rng: &mut R) -> TokenId {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i as TokenId;
        }
    }
    (weights.len() - 1) as TokenId
}

/// Picks the next token from the state's logits.
pub fn choose_next<R: Rng>(state: &DecodeState, decoding: Decoding, rng: &mut R) -> TokenId {
    match decoding {
        Decoding::Greedy => argmax(&state.next_logits),
        Decoding::Sample { temperature } => sample_categorical(&state.next_logits, temperature, rng),
    }
}

/// Continues `state` for up to `max_new` tokens, stopping after `stop`.
pub fn continue_completion<R: Rng>(
    params: &PolicyParams,
    mut state: DecodeState,
    decoding: Decoding,
    max_new: usize,
    stop: Option<TokenId>,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    if state.len() + max_new > params.config.context {
        return Err(CoeError::ContextOverflow {
            len: state.len() + max_new,
            context: params.config.context,
        });
    }
    let mut out = Vec::with_capacity(max_new);
    for i in 0..max_new {
        let tok = choose_next(&state, decoding, rng);
        out.push(tok);
        if Some(tok) == stop {
            break;
        }
        if i + 1 < max_new {
            state.push(params, tok)?;
        }
    }
    Ok(out)
}

/// Samples a completion of `prompt`; identical inputs and RNG state give identical output.
pub fn sample_completion<R: Rng>(
    params: &PolicyParams,
    prompt: &[TokenId],
    decoding: Decoding,
    max_new: usize,
    stop: Option<TokenId>,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    let state = DecodeState::prefill(params, prompt)?;
    continue_completion(params, state, decoding, max_new, stop, rng)
}
