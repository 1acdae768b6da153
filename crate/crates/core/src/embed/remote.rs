//! Hosted embedding API client.
//!
//! Speaks the common `POST {"model": .., "input": [..]}` /
//! `{"data": [{"index": i, "embedding": [..]}]}` JSON shape. The bearer token
//! comes from an environment variable (default `PROBEKIT_API_KEY`).

use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EmbedError;

pub const API_KEY_ENV: &str = "PROBEKIT_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
    pub api_key_env: String,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/embeddings".into(),
            batch_size: 64,
            max_in_flight: 4,
            max_retries: 5,
            backoff_ms: 500,
            timeout_s: 60,
            api_key_env: API_KEY_ENV.into(),
        }
    }
}

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct Response {
    data: Vec<Item>,
}

#[derive(Deserialize)]
struct Item {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

enum Attempt {
    Transient(Option<u16>, String),
    Fatal(Option<u16>, String),
}

pub(crate) struct RemoteClient<'a> {
    cfg: &'a RemoteConfig,
    model_id: &'a str,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl<'a> RemoteClient<'a> {
    pub(crate) fn new(cfg: &'a RemoteConfig, model_id: &'a str) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            cfg,
            model_id,
            agent,
            api_key: std::env::var(&cfg.api_key_env).ok(),
        }
    }

    /// Embeds `texts` in batches, at most `max_in_flight` requests at once.
    /// Output order matches input order.
    pub(crate) fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let batches: Vec<&[String]> = texts.chunks(self.cfg.batch_size.max(1)).collect();
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(texts.len());
        for wave in batches.chunks(self.cfg.max_in_flight.max(1)) {
            let results: Vec<Result<Vec<Vec<f64>>, EmbedError>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|batch| s.spawn(move || self.embed_with_retry(batch)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }

    fn embed_with_retry(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        let mut attempt = 0u32;
        loop {
            match self.post(batch) {
                Ok(v) => return Ok(v),
                Err(Attempt::Fatal(status, message)) => {
                    return Err(EmbedError::ProviderError {
                        status,
                        attempts: attempt + 1,
                        message,
                    })
                }
                Err(Attempt::Transient(status, message)) => {
                    if attempt >= self.cfg.max_retries {
                        return Err(EmbedError::ProviderError {
                            status,
                            attempts: attempt + 1,
                            message: format!("retries exhausted: {message}"),
                        });
                    }
                    let base = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    let jitter = rand::rng().random_range(0..=self.cfg.backoff_ms.max(1));
                    log::warn!(
                        "embedding request failed ({message}); retry {}/{} in {} ms",
                        attempt + 1,
                        self.cfg.max_retries,
                        base + jitter
                    );
                    std::thread::sleep(Duration::from_millis(base + jitter));
                    attempt += 1;
                }
            }
        }
    }

    fn post(&self, batch: &[String]) -> Result<Vec<Vec<f64>>, Attempt> {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&Request {
                model: self.model_id,
                input: batch,
            })
            .map_err(|e| Attempt::Transient(None, e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Attempt::Transient(Some(status), format!("http status {status}")));
        }
        if !(200..300).contains(&status) {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Attempt::Fatal(
                Some(status),
                format!("http status {status}: {}", body.chars().take(200).collect::<String>()),
            ));
        }
        let parsed: Response = resp
            .body_mut()
            .read_json()
            .map_err(|e| Attempt::Fatal(Some(status), format!("bad response body: {e}")))?;
        if parsed.data.len() != batch.len() {
            return Err(Attempt::Fatal(
                Some(status),
                format!("expected {} embeddings, got {}", batch.len(), parsed.data.len()),
            ));
        }
        let mut items = parsed.data;
        if items.iter().all(|it| it.index.is_some()) {
            items.sort_by_key(|it| it.index);
        }
        Ok(items.into_iter().map(|it| it.embedding).collect())
    }
}
