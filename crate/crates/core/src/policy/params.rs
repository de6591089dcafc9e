use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoeError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub context: usize,
    pub d_ff: usize,
}

impl PolicyConfig {
    /// Two attention layers of width 32 with two heads, context 256.
    pub fn standard(vocab_size: usize) -> Self {
        PolicyConfig {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            context: 256,
            d_ff: 128,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.context == 0 {
            return Err(CoeError::InvalidConfig("policy dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(CoeError::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub bq: Array1<f64>,
    pub wk: Array2<f64>,
    pub bk: Array1<f64>,
    pub wv: Array2<f64>,
    pub bv: Array1<f64>,
    pub wo: Array2<f64>,
    pub bo: Array1<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Policy weights. Also used, zero-initialized, as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub config: PolicyConfig,
    pub tok_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

/// One tensor per parameter tensor, same shapes.
pub type GradientBuffer = PolicyParams;

const BLOCK_TENSORS: [&str; 16] = [
    "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "ln2_g", "ln2_b", "w1", "b1",
    "w2", "b2",
];

impl Block {
    fn zeros(c: &PolicyConfig) -> Self {
        let d = c.d_model;
        let f = c.d_ff;
        Block {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            bq: Array1::zeros(d),
            wk: Array2::zeros((d, d)),
            bk: Array1::zeros(d),
            wv: Array2::zeros((d, d)),
            bv: Array1::zeros(d),
            wo: Array2::zeros((d, d)),
            bo: Array1::zeros(d),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        }
    }

    fn slices(&self) -> [&[f64]; 16] {
        [
            slice1(&self.ln1_g),
            slice1(&self.ln1_b),
            slice2(&self.wq),
            slice1(&self.bq),
            slice2(&self.wk),
            slice1(&self.bk),
            slice2(&self.wv),
            slice1(&self.bv),
            slice2(&self.wo),
            slice1(&self.bo),
            slice1(&self.ln2_g),
            slice1(&self.ln2_b),
            slice2(&self.w1),
            slice1(&self.b1),
            slice2(&self.w2),
            slice1(&self.b2),
        ]
    }

    fn shapes(&self) -> [Vec<usize>; 16] {
        [
            self.ln1_g.shape().to_vec(),
            self.ln1_b.shape().to_vec(),
            self.wq.shape().to_vec(),
            self.bq.shape().to_vec(),
            self.wk.shape().to_vec(),
            self.bk.shape().to_vec(),
            self.wv.shape().to_vec(),
            self.bv.shape().to_vec(),
            self.wo.shape().to_vec(),
            self.bo.shape().to_vec(),
            self.ln2_g.shape().to_vec(),
            self.ln2_b.shape().to_vec(),
            self.w1.shape().to_vec(),
            self.b1.shape().to_vec(),
            self.w2.shape().to_vec(),
            self.b2.shape().to_vec(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 16] {
        let Block {
            ln1_g,
            ln1_b,
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            ln2_g,
            ln2_b,
            w1,
            b1,
            w2,
            b2,
        } = self;
        [
            ln1_g.as_slice_mut().unwrap(),
            ln1_b.as_slice_mut().unwrap(),
            wq.as_slice_mut().unwrap(),
            bq.as_slice_mut().unwrap(),
            wk.as_slice_mut().unwrap(),
            bk.as_slice_mut().unwrap(),
            wv.as_slice_mut().unwrap(),
            bv.as_slice_mut().unwrap(),
            wo.as_slice_mut().unwrap(),
            bo.as_slice_mut().unwrap(),
            ln2_g.as_slice_mut().unwrap(),
            ln2_b.as_slice_mut().unwrap(),
            w1.as_slice_mut().unwrap(),
            b1.as_slice_mut().unwrap(),
            w2.as_slice_mut().unwrap(),
            b2.as_slice_mut().unwrap(),
        ]
    }
}

fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

impl PolicyParams {
    pub fn zeros(config: PolicyConfig) -> Self {
        let (v, d, c) = (config.vocab_size, config.d_model, config.context);
        PolicyParams {
            config,
            tok_emb: Array2::zeros((v, d)),
            pos_emb: Array2::zeros((c, d)),
            blocks: (0..config.n_layers).map(|_| Block::zeros(&config)).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            w_out: Array2::zeros((d, v)),
            b_out: Array1::zeros(v),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    /// Gaussian init: embeddings with std 0.1, projections scaled by fan-in,
    /// residual output projections and the unembedding shrunk further.
    /// Norm gains start at one.
    pub fn init(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(config);
        let d = config.d_model as f64;
        let f = config.d_ff as f64;
        let mut fill = |a: &mut Array2<f64>, std: f64| {
            let normal = Normal::new(0.0, std).unwrap();
            a.iter_mut().for_each(|x| *x = normal.sample(&mut rng));
        };
        fill(&mut p.tok_emb, 0.1);
        fill(&mut p.pos_emb, 0.1);
        let depth = (2.0 * config.n_layers as f64).sqrt();
        for b in &mut p.blocks {
            fill(&mut b.wq, 1.0 / d.sqrt());
            fill(&mut b.wk, 1.0 / d.sqrt());
            fill(&mut b.wv, 1.0 / d.sqrt());
            fill(&mut b.wo, 1.0 / (d.sqrt() * depth));
            fill(&mut b.w1, 1.0 / d.sqrt());
            fill(&mut b.w2, 1.0 / (f.sqrt() * depth));
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
        }
        p.lnf_g.fill(1.0);
        fill(&mut p.w_out, 0.02);
        Ok(p)
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["tok_emb".to_string(), "pos_emb".to_string()];
        for l in 0..self.blocks.len() {
            names.extend(BLOCK_TENSORS.iter().map(|t| format!("blocks.{l}.{t}")));
        }
        names.push("lnf_g".into());
        names.push("lnf_b".into());
        names.push("w_out".into());
        names.push("b_out".into());
        names
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = vec![self.tok_emb.shape().to_vec(), self.pos_emb.shape().to_vec()];
        for b in &self.blocks {
            shapes.extend(b.shapes());
        }
        shapes.push(self.lnf_g.shape().to_vec());
        shapes.push(self.lnf_b.shape().to_vec());
        shapes.push(self.w_out.shape().to_vec());
        shapes.push(self.b_out.shape().to_vec());
        shapes
    }

    /// Flat views of every tensor, in [`PolicyParams::names`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![slice2(&self.tok_emb), slice2(&self.pos_emb)];
        for b in &self.blocks {
            out.extend(b.slices());
        }
        out.push(slice1(&self.lnf_g));
        out.push(slice1(&self.lnf_b));
        out.push(slice2(&self.w_out));
        out.push(slice1(&self.b_out));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let PolicyParams {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            ..
        } = self;
        let mut out = vec![tok_emb.as_slice_mut().unwrap(), pos_emb.as_slice_mut().unwrap()];
        for b in blocks.iter_mut() {
            out.extend(b.slices_mut());
        }
        out.push(lnf_g.as_slice_mut().unwrap());
        out.push(lnf_b.as_slice_mut().unwrap());
        out.push(w_out.as_slice_mut().unwrap());
        out.push(b_out.as_slice_mut().unwrap());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(0.0);
        }
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &PolicyParams, scale: f64) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// SHA-256 over the little-endian bytes of every tensor.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for t in self.tensors() {
            for x in t {
                h.update(x.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_shapes_tensors_align() {
        let p = PolicyParams::init(PolicyConfig::standard(40), 1).unwrap();
        let names = p.names();
        let shapes = p.shapes();
        let tensors = p.tensors();
        assert_eq!(names.len(), shapes.len());
        assert_eq!(names.len(), tensors.len());
        for (s, t) in shapes.iter().zip(&tensors) {
            assert_eq!(s.iter().product::<usize>(), t.len());
        }
        assert!(p.is_finite());
    }

    #[test]
    fn init_is_seeded() {
        let c = PolicyConfig::standard(20);
        assert_eq!(PolicyParams::init(c, 3).unwrap(), PolicyParams::init(c, 3).unwrap());
        assert_ne!(
            PolicyParams::init(c, 3).unwrap().checksum(),
            PolicyParams::init(c, 4).unwrap().checksum()
        );
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = PolicyConfig::standard(10);
        c.n_heads = 3;
        assert!(PolicyParams::init(c, 0).is_err());
    }
}
