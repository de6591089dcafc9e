//! Clip/description embeddings and the chain-vs-video similarity reward.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::event::EventChain;
use crate::world::{crop, Lexicon, SymbolicClip, SymbolicVideo, WorldConfig};

/// A fixed-dimension real vector; zero only for empty inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.0.iter_mut().for_each(|x| *x /= n);
        }
        self
    }
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 || a.dim() != b.dim() {
        return 0.0;
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Something that embeds clips and descriptions into a shared space.
pub trait SimilarityModel: Send + Sync {
    fn embed_clip(&self, clip: &SymbolicClip<'_>) -> Result<EmbeddingVector>;
    fn embed_text(&self, description: &str) -> Result<EmbeddingVector>;
}

/// Exact embedding of the symbolic world: L2-normalized symbol counts.
/// Description words map through the world lexicon; unknown words are ignored.
#[derive(Debug, Clone)]
pub struct OracleSimilarity {
    lexicon: Lexicon,
}

impl OracleSimilarity {
    pub fn new(config: &WorldConfig) -> Self {
        OracleSimilarity {
            lexicon: Lexicon::new(config),
        }
    }

    pub fn dim(&self) -> usize {
        self.lexicon.len()
    }

    /// Raw symbol counts of a clip, before normalization.
    pub fn clip_counts(&self, clip: &SymbolicClip<'_>) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for f in clip.frames {
            for &s in &f.symbols {
                if s < v.len() {
                    v[s] += 1.0;
                }
            }
        }
        v
    }

    pub fn text_counts(&self, description: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        for w in description.split_whitespace() {
            if let Some(s) = self.lexicon.symbol(w) {
                v[s] += 1.0;
            }
        }
        v
    }
}

impl SimilarityModel for OracleSimilarity {
    fn embed_clip(&self, clip: &SymbolicClip<'_>) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector(self.clip_counts(clip)).normalized())
    }

    fn embed_text(&self, description: &str) -> Result<EmbeddingVector> {
        Ok(EmbeddingVector(self.text_counts(description)).normalized())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMode {
    /// One embedding for the whole cropped clip.
    #[default]
    VideoLevel,
    /// One embedding per frame; the per-frame cosines are averaged.
    FrameAveraged,
}

impl std::str::FromStr for SimilarityMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "video-level" | "video" => Ok(SimilarityMode::VideoLevel),
            "frame-averaged" | "frame" => Ok(SimilarityMode::FrameAveraged),
            other => Err(format!("unknown similarity mode {other:?}")),
        }
    }
}

impl std::fmt::Display for SimilarityMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SimilarityMode::VideoLevel => "video-level",
            SimilarityMode::FrameAveraged => "frame-averaged",
        })
    }
}

/// Mean over events of the cosine between each event's cropped clip and its
/// description. Returns the mean and the per-event similarities in chain
/// order; an empty chain scores 0.
pub fn similarity_reward(
    chain: &EventChain,
    video: &SymbolicVideo,
    mode: SimilarityMode,
    model: &dyn SimilarityModel,
) -> Result<(f64, Vec<f64>)> {
    let mut sims = Vec::with_capacity(chain.len());
    for e in chain.iter() {
        let clip = crop(video, e.t_start, e.t_end)?;
        let text = model.embed_text(&e.description)?;
        let s = match mode {
            SimilarityMode::VideoLevel => cosine(&model.embed_clip(&clip)?, &text),
            SimilarityMode::FrameAveraged => {
                if clip.is_empty() {
                    0.0
                } else {
                    let mut total = 0.0;
                    for i in 0..clip.len() {
                        let one = SymbolicClip {
                            frames: &clip.frames[i..=i],
                        };
                        total += cosine(&model.embed_clip(&one)?, &text);
                    }
                    total / clip.len() as f64
                }
            }
        };
        sims.push(s);
    }
    let r_s = if sims.is_empty() {
        0.0
    } else {
        sims.iter().sum::<f64>() / sims.len() as f64
    };
    Ok((r_s, sims))
}
