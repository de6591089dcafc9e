//! Full-sequence forward pass, reverse-mode backward pass, log-probabilities,
//! exact KL and attention read-out.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};

use super::params::{GradientBuffer, PolicyParams};
use crate::error::{CoeError, Result};
use crate::vocab::TokenId;
use crate::world::{Prompt, SegmentMap};

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

const NORM_EPS: f64 = 1e-5;

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// Normalized rows and their inverse standard deviations.
pub(crate) struct NormCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

/// Row-wise layer norm with gain and bias.
pub(crate) fn layer_norm(x: &ArrayView2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, NormCache) {
    let mut xhat = x.to_owned();
    let mut inv_std = Array1::<f64>::zeros(x.nrows());
    for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.mean().unwrap_or(0.0);
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        *s = 1.0 / (var + NORM_EPS).sqrt();
        row *= *s;
    }
    let mut y = &xhat * gain;
    add_bias(&mut y, bias);
    (y, NormCache { xhat, inv_std })
}

/// Layer norm of a single row, for incremental decoding.
pub(crate) fn norm_row(x: &ndarray::ArrayView1<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> Array1<f64> {
    let mean = x.mean().unwrap_or(0.0);
    let centered = x.mapv(|v| v - mean);
    let var = centered.iter().map(|v| v * v).sum::<f64>() / centered.len() as f64;
    centered / (var + NORM_EPS).sqrt() * gain + bias
}

fn layer_norm_backward(
    dy: &ArrayView2<f64>,
    cache: &NormCache,
    gain: &Array1<f64>,
    dgain: &mut Array1<f64>,
    dbias: &mut Array1<f64>,
) -> Array2<f64> {
    *dgain += &(dy * &cache.xhat).sum_axis(Axis(0));
    *dbias += &dy.sum_axis(Axis(0));
    let mut dx = dy * gain;
    let n = gain.len() as f64;
    for ((mut row, xhat), &s) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
        let mean = row.sum() / n;
        let proj = row.dot(&xhat) / n;
        Zip::from(&mut row).and(&xhat).for_each(|g, &h| *g = s * (*g - mean - h * proj));
    }
    dx
}

pub(crate) struct LayerCache {
    pub norm1: NormCache,
    /// Normalized attention input.
    pub y1: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Attention probabilities per head, `T × T`, zero above the diagonal.
    pub attn: Vec<Array2<f64>>,
    pub o: Array2<f64>,
    pub norm2: NormCache,
    pub y2: Array2<f64>,
    pub f_pre: Array2<f64>,
    pub f_act: Array2<f64>,
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    pub tokens: Vec<TokenId>,
    /// Logits were computed for positions `from..to`.
    pub from: usize,
    pub to: usize,
    pub(crate) layers: Vec<LayerCache>,
    /// Final-norm output for positions `from..to`.
    pub(crate) y_final: Array2<f64>,
    pub(crate) norm_final: NormCache,
    /// One row per position in `from..to`.
    pub logits: Array2<f64>,
}

impl ForwardCache {
    pub fn attention(&self) -> AttentionProfile {
        AttentionProfile {
            maps: self.layers.iter().map(|l| l.attn.clone()).collect(),
        }
    }
}

fn add_bias(a: &mut Array2<f64>, b: &Array1<f64>) {
    for mut row in a.rows_mut() {
        row += b;
    }
}

fn linear(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let mut y = x.dot(w);
    add_bias(&mut y, b);
    y
}

fn softmax_row_inplace(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

/// Runs the model on `tokens`, computing logits for positions `from..T`.
pub fn forward(params: &PolicyParams, tokens: &[TokenId], from: usize) -> Result<ForwardCache> {
    forward_range(params, tokens, from, tokens.len())
}

/// Runs the model on `tokens`, computing logits for positions `from..to`.
pub fn forward_range(
    params: &PolicyParams,
    tokens: &[TokenId],
    from: usize,
    to: usize,
) -> Result<ForwardCache> {
    let c = &params.config;
    let t_len = tokens.len();
    if t_len > c.context {
        return Err(CoeError::ContextOverflow {
            len: t_len,
            context: c.context,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(CoeError::UnknownToken(format!("id {bad}")));
    }
    let d = c.d_model;
    let hd = c.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();

    let mut x = Array2::<f64>::zeros((t_len, d));
    for (i, &tok) in tokens.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&params.tok_emb.row(tok as usize));
        row += &params.pos_emb.row(i);
    }

    let mut layers = Vec::with_capacity(params.blocks.len());
    for b in &params.blocks {
        let (y1, norm1) = layer_norm(&x.view(), &b.ln1_g, &b.ln1_b);
        let yv = y1.view();
        let q = linear(&yv, &b.wq, &b.bq);
        let k = linear(&yv, &b.wk, &b.bk);
        let v = linear(&yv, &b.wv, &b.bv);
        let mut o = Array2::<f64>::zeros((t_len, d));
        let mut attn = Vec::with_capacity(c.n_heads);
        for h in 0..c.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t());
            for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
                let row = row.as_slice_mut().unwrap();
                row[..=i].iter_mut().for_each(|x| *x *= scale);
                softmax_row_inplace(&mut row[..=i]);
                row[i + 1..].fill(0.0);
            }
            o.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            attn.push(scores);
        }
        let a = linear(&o.view(), &b.wo, &b.bo);
        let x_mid = x + &a;
        let (y2, norm2) = layer_norm(&x_mid.view(), &b.ln2_g, &b.ln2_b);
        let f_pre = linear(&y2.view(), &b.w1, &b.b1);
        let f_act = f_pre.mapv(gelu);
        let m = linear(&f_act.view(), &b.w2, &b.b2);
        let x_out = &x_mid + &m;
        layers.push(LayerCache {
            norm1,
            y1,
            q,
            k,
            v,
            attn,
            o,
            norm2,
            y2,
            f_pre,
            f_act,
        });
        x = x_out;
    }

    let to = to.min(t_len);
    let from = from.min(to);
    let (y_final, norm_final) = layer_norm(&x.slice(s![from..to, ..]), &params.lnf_g, &params.lnf_b);
    let logits = linear(&y_final.view(), &params.w_out, &params.b_out);
    Ok(ForwardCache {
        tokens: tokens.to_vec(),
        from,
        to,
        layers,
        y_final,
        norm_final,
        logits,
    })
}

/// Accumulates into `grads` the gradient of a scalar whose derivative with
/// respect to `cache.logits` is `dlogits`.
pub fn backward(
    params: &PolicyParams,
    cache: &ForwardCache,
    dlogits: &Array2<f64>,
    grads: &mut GradientBuffer,
) -> Result<()> {
    if dlogits.dim() != cache.logits.dim() {
        return Err(CoeError::LengthMismatch(dlogits.nrows(), cache.logits.nrows()));
    }
    if dlogits.iter().any(|x| !x.is_finite()) {
        return Err(CoeError::NonFiniteLoss("non-finite logit gradient".into()));
    }
    let c = &params.config;
    let t_len = cache.tokens.len();
    let d = c.d_model;
    let hd = c.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let (from, to) = (cache.from, cache.to);

    grads.w_out += &cache.y_final.t().dot(dlogits);
    grads.b_out += &dlogits.sum_axis(Axis(0));
    let dy = dlogits.dot(&params.w_out.t());
    let dx_used = layer_norm_backward(
        &dy.view(),
        &cache.norm_final,
        &params.lnf_g,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
    );
    let mut dx = Array2::<f64>::zeros((t_len, d));
    dx.slice_mut(s![from..to, ..]).assign(&dx_used);

    for (l, (b, lc)) in params.blocks.iter().zip(&cache.layers).enumerate().rev() {
        let g = &mut grads.blocks[l];

        // feed-forward
        g.w2 += &lc.f_act.t().dot(&dx);
        g.b2 += &dx.sum_axis(Axis(0));
        let mut df = dx.dot(&b.w2.t());
        Zip::from(&mut df).and(&lc.f_pre).for_each(|g, &x| *g *= gelu_grad(x));
        g.w1 += &lc.y2.t().dot(&df);
        g.b1 += &df.sum_axis(Axis(0));
        let dy2 = df.dot(&b.w1.t());
        let dx_mid = &dx + &layer_norm_backward(&dy2.view(), &lc.norm2, &b.ln2_g, &mut g.ln2_g, &mut g.ln2_b);

        // attention output projection
        g.wo += &lc.o.t().dot(&dx_mid);
        g.bo += &dx_mid.sum_axis(Axis(0));
        let d_o = dx_mid.dot(&b.wo.t());

        let mut dq = Array2::<f64>::zeros((t_len, d));
        let mut dk = Array2::<f64>::zeros((t_len, d));
        let mut dv = Array2::<f64>::zeros((t_len, d));
        for h in 0..c.n_heads {
            let cols = s![.., h * hd..(h + 1) * hd];
            let a = &lc.attn[h];
            let do_h = d_o.slice(cols);
            let mut ds = do_h.dot(&lc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&do_h));
            for (i, (mut ds_row, a_row)) in ds.rows_mut().into_iter().zip(a.rows()).enumerate() {
                let ds_row = ds_row.as_slice_mut().unwrap();
                let a_row = a_row.as_slice().unwrap();
                let dot: f64 = ds_row[..=i].iter().zip(&a_row[..=i]).map(|(x, y)| x * y).sum();
                for j in 0..=i {
                    ds_row[j] = a_row[j] * (ds_row[j] - dot) * scale;
                }
                ds_row[i + 1..].fill(0.0);
            }
            dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
        }
        g.wq += &lc.y1.t().dot(&dq);
        g.bq += &dq.sum_axis(Axis(0));
        g.wk += &lc.y1.t().dot(&dk);
        g.bk += &dk.sum_axis(Axis(0));
        g.wv += &lc.y1.t().dot(&dv);
        g.bv += &dv.sum_axis(Axis(0));
        let dy1 = dq.dot(&b.wq.t()) + dk.dot(&b.wk.t()) + dv.dot(&b.wv.t());
        dx = dx_mid + layer_norm_backward(&dy1.view(), &lc.norm1, &b.ln1_g, &mut g.ln1_g, &mut g.ln1_b);
    }

    for (i, &tok) in cache.tokens.iter().enumerate() {
        let row = dx.row(i);
        let mut e = grads.tok_emb.row_mut(tok as usize);
        e += &row;
        let mut p = grads.pos_emb.row_mut(i);
        p += &row;
    }
    Ok(())
}

/// Logits at every position plus the attention maps.
pub fn forward_logits(
    params: &PolicyParams,
    tokens: &[TokenId],
) -> Result<(Array2<f64>, AttentionProfile)> {
    let cache = forward(params, tokens, 0)?;
    let profile = cache.attention();
    Ok((cache.logits, profile))
}

pub fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    out
}

/// Per-row `KL(p || q)` from log-probabilities.
pub fn kl_rows(logp: &Array2<f64>, logq: &Array2<f64>) -> Vec<f64> {
    logp.rows()
        .into_iter()
        .zip(logq.rows())
        .map(|(lp, lq)| {
            lp.iter()
                .zip(lq.iter())
                .map(|(a, b)| {
                    let p = a.exp();
                    if p == 0.0 {
                        0.0
                    } else {
                        p * (a - b)
                    }
                })
                .sum::<f64>()
                .max(0.0)
        })
        .collect()
}

/// Forward pass whose logit rows are the next-token predictions for each
/// completion token.
pub fn completion_rows(
    params: &PolicyParams,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<ForwardCache> {
    if prompt.is_empty() {
        return Err(CoeError::InvariantViolation("prompt must not be empty".into()));
    }
    let mut seq = prompt.to_vec();
    seq.extend_from_slice(completion);
    let from = prompt.len() - 1;
    forward_range(params, &seq, from, from + completion.len())
}

/// `log π(completion_t | prompt, completion_<t)` for every completion token.
pub fn per_token_log_probs(
    params: &PolicyParams,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<Vec<f64>> {
    let cache = completion_rows(params, prompt, completion)?;
    let logp = log_softmax_rows(&cache.logits);
    Ok(completion
        .iter()
        .enumerate()
        .map(|(i, &t)| logp[[i, t as usize]])
        .collect())
}

/// Mean over completion positions of the exact next-token `KL(π_a || π_b)`.
pub fn exact_kl(
    params_a: &PolicyParams,
    params_b: &PolicyParams,
    prompt: &[TokenId],
    completion: &[TokenId],
) -> Result<f64> {
    if completion.is_empty() {
        return Ok(0.0);
    }
    let a = log_softmax_rows(&completion_rows(params_a, prompt, completion)?.logits);
    let b = log_softmax_rows(&completion_rows(params_b, prompt, completion)?.logits);
    let kl = kl_rows(&a, &b);
    Ok(kl.iter().sum::<f64>() / kl.len() as f64)
}

/// Attention probabilities indexed `[layer][head]`, each `T × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionProfile {
    pub maps: Vec<Vec<Array2<f64>>>,
}

/// Attention mass landing on each prompt segment.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SegmentMasses {
    pub visual: f64,
    pub question: f64,
    pub options: f64,
}

impl SegmentMasses {
    pub fn total(&self) -> f64 {
        self.visual + self.question + self.options
    }
}

impl AttentionProfile {
    pub fn option_masses(&self, segments: &SegmentMap) -> Result<SegmentMasses> {
        let flat: Vec<Array2<f64>> = self.maps.iter().flatten().cloned().collect();
        aggregate_option_attention(&flat, segments)
    }
}

/// Mean over maps and option-segment query rows of the attention mass on
/// the visual, question and option segments. Keys past the prompt are ignored.
pub fn aggregate_option_attention(
    maps: &[Array2<f64>],
    segments: &SegmentMap,
) -> Result<SegmentMasses> {
    if segments.options.is_empty() {
        return Err(CoeError::EmptyOptionSegment);
    }
    if maps.is_empty() {
        return Err(CoeError::InvariantViolation("no attention maps".into()));
    }
    let mut acc = [0.0; 3];
    let mut rows = 0usize;
    for m in maps {
        for q in segments.options.clone() {
            let row = m.row(q);
            for (slot, range) in segments.ranges().iter().enumerate() {
                acc[slot] += row.slice(s![range.clone()]).sum();
            }
            rows += 1;
        }
    }
    let n = rows as f64;
    Ok(SegmentMasses {
        visual: acc[0] / n,
        question: acc[1] / n,
        options: acc[2] / n,
    })
}

/// Option-token attention split over segments, averaged over layers and heads.
pub fn attention_profile(params: &PolicyParams, prompt: &Prompt) -> Result<SegmentMasses> {
    if prompt.segments.options.is_empty() {
        return Err(CoeError::EmptyOptionSegment);
    }
    let cache = forward(params, &prompt.ids, prompt.ids.len())?;
    cache.attention().option_masses(&prompt.segments)
}
