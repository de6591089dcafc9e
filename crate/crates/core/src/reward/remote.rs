use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::similarity::{EmbeddingVector, SimilarityModel};
use crate::error::{CoeError, Result};
use crate::world::SymbolicClip;

/// Embeds through an HTTP service: `POST {base}/embed` with
/// `{"kind": "clip" | "text", "payload": ...}`, answered by `{"vector": [...]}`.
///
/// Clip payloads are the frame list (`[{"t": .., "symbols": [..]}, ..]`),
/// text payloads the description string. Every failure, after retries, is a
/// [`CoeError::RewardUnavailable`].
#[derive(Debug, Clone)]
pub struct RemoteEmbeddingClient {
    endpoint: String,
    retries: u32,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

impl RemoteEmbeddingClient {
    pub fn new(base_url: &str, timeout: Duration, retries: u32) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| CoeError::RewardUnavailable(format!("cannot build http client: {e}")))?;
        Ok(RemoteEmbeddingClient {
            endpoint: format!("{}/embed", base_url.trim_end_matches('/')),
            retries,
            client,
        })
    }

    fn request(&self, body: serde_json::Value) -> Result<EmbeddingVector> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.try_once(&body) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("embedding request attempt {} failed: {e}", attempt + 1);
                    last = e;
                }
            }
        }
        Err(CoeError::RewardUnavailable(format!(
            "{} after {} attempts: {last}",
            self.endpoint,
            self.retries + 1
        )))
    }

    fn try_once(&self, body: &serde_json::Value) -> std::result::Result<EmbeddingVector, String> {
        let resp = self
            .client
            .post(&self.endpoint)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        if !resp.status().is_success() {
            return Err(format!("status {}", resp.status()));
        }
        let parsed: EmbedResponse = resp.json().map_err(|e| e.to_string())?;
        if parsed.vector.iter().any(|x| !x.is_finite()) {
            return Err("non-finite embedding".into());
        }
        Ok(EmbeddingVector(parsed.vector))
    }
}

impl SimilarityModel for RemoteEmbeddingClient {
    fn embed_clip(&self, clip: &SymbolicClip<'_>) -> Result<EmbeddingVector> {
        self.request(json!({ "kind": "clip", "payload": clip.frames }))
    }

    fn embed_text(&self, description: &str) -> Result<EmbeddingVector> {
        self.request(json!({ "kind": "text", "payload": description }))
    }
}
