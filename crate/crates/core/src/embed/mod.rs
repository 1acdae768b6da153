//! Embedding providers and the persistent embedding cache.
//!
//! [`embed_batch`] is the single entry point: it serves what it can from the
//! cache, asks the provider for the rest, writes the new vectors back and
//! returns one row per input text in input order.

mod cache;
pub mod registry;
mod remote;
pub mod synthetic;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{cache_key, import_embeddings, CacheEntry, CacheHandle};
pub use remote::{RemoteConfig, API_KEY_ENV};
pub use synthetic::{synthetic_embed, SyntheticConfig, SyntheticEmbedder};

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("provider error (status {status:?}, {attempts} attempt(s)): {message}")]
    ProviderError {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("no cached embedding for {text:?} (model {model_id})")]
    CacheMiss { model_id: String, text: String },
    #[error("expected embeddings of width {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in embedding of {text:?}")]
    NonFinite { text: String },
    #[error("embedding file line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("conflicting vectors for key {0}")]
    DuplicateKey(String),
    #[error("invalid provider spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    RemoteApi,
    FileImport,
    Synthetic,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::RemoteApi => "remote_api",
            ProviderKind::FileImport => "file_import",
            ProviderKind::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    pub model_id: String,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remote: Option<RemoteConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

impl ProviderSpec {
    pub fn synthetic(model_id: impl Into<String>, cfg: SyntheticConfig) -> Self {
        Self {
            kind: ProviderKind::Synthetic,
            model_id: model_id.into(),
            dim: cfg.dim,
            remote: None,
            synthetic: Some(cfg),
        }
    }

    /// Remote provider; `dim` defaults to the registry width for known models.
    pub fn remote(model_id: impl Into<String>, dim: Option<usize>, cfg: RemoteConfig) -> Result<Self, EmbedError> {
        let model_id = model_id.into();
        let dim = resolve_dim(&model_id, dim)?;
        Ok(Self {
            kind: ProviderKind::RemoteApi,
            model_id,
            dim,
            remote: Some(cfg),
            synthetic: None,
        })
    }

    pub fn file_import(model_id: impl Into<String>, dim: Option<usize>) -> Result<Self, EmbedError> {
        let model_id = model_id.into();
        let dim = resolve_dim(&model_id, dim)?;
        Ok(Self {
            kind: ProviderKind::FileImport,
            model_id,
            dim,
            remote: None,
            synthetic: None,
        })
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dim == 0 {
            return Err(EmbedError::InvalidSpec("dim must be positive".into()));
        }
        if let Some(known) = registry::lookup(&self.model_id) {
            if known.dim != self.dim {
                return Err(EmbedError::InvalidSpec(format!(
                    "{} has width {}, spec says {}",
                    self.model_id, known.dim, self.dim
                )));
            }
        }
        match self.kind {
            ProviderKind::Synthetic => {
                let cfg = self.synthetic.as_ref().ok_or_else(|| {
                    EmbedError::InvalidSpec("synthetic provider needs a synthetic config".into())
                })?;
                cfg.validate()?;
                if cfg.dim != self.dim {
                    return Err(EmbedError::InvalidSpec(format!(
                        "synthetic config dim {} differs from provider dim {}",
                        cfg.dim, self.dim
                    )));
                }
            }
            ProviderKind::RemoteApi if self.remote.is_none() => {
                return Err(EmbedError::InvalidSpec("remote provider needs an endpoint config".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// Model family for reporting: registry family, `synthetic`, or `other`.
    pub fn family(&self) -> String {
        model_family(&self.model_id, self.kind)
    }
}

pub fn model_family(model_id: &str, kind: ProviderKind) -> String {
    match registry::lookup(model_id) {
        Some(k) => k.family.to_string(),
        None if kind == ProviderKind::Synthetic => "synthetic".to_string(),
        None => "other".to_string(),
    }
}

fn resolve_dim(model_id: &str, dim: Option<usize>) -> Result<usize, EmbedError> {
    match (dim, registry::lookup(model_id)) {
        (Some(d), _) => Ok(d),
        (None, Some(k)) => Ok(k.dim),
        (None, None) => Err(EmbedError::InvalidSpec(format!(
            "unknown model {model_id:?}; give its dim explicitly"
        ))),
    }
}

/// Activation rows for a list of prompt texts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    /// n x dim, row i belongs to input text i.
    pub rows: DMatrix<f64>,
    /// Cache key of each row.
    pub row_keys: Vec<String>,
    pub model_id: String,
}

impl EmbeddingMatrix {
    pub fn nrows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.rows.row(i).iter().copied().collect()
    }
}

pub fn embed_batch(
    p: &ProviderSpec,
    texts: &[String],
    cache: &CacheHandle,
) -> Result<EmbeddingMatrix, EmbedError> {
    p.validate()?;
    let keys: Vec<String> = texts.iter().map(|t| cache_key(&p.model_id, t)).collect();

    // distinct misses, first occurrence order
    let mut seen = std::collections::HashSet::new();
    let mut missing: Vec<(String, String)> = Vec::new();
    for (k, t) in keys.iter().zip(texts) {
        if !cache.contains(k) && seen.insert(k.clone()) {
            missing.push((k.clone(), t.clone()));
        }
    }

    if !missing.is_empty() {
        let miss_texts: Vec<String> = missing.iter().map(|(_, t)| t.clone()).collect();
        let fetched: Vec<Vec<f64>> = match p.kind {
            ProviderKind::FileImport => {
                return Err(EmbedError::CacheMiss {
                    model_id: p.model_id.clone(),
                    text: miss_texts[0].clone(),
                })
            }
            ProviderKind::Synthetic => {
                let e = SyntheticEmbedder::new(p.synthetic.clone().expect("validated"))?;
                miss_texts.iter().map(|t| e.embed(t)).collect()
            }
            ProviderKind::RemoteApi => {
                let cfg = p.remote.as_ref().expect("validated");
                remote::RemoteClient::new(cfg, &p.model_id).embed(&miss_texts)?
            }
        };
        for ((key, text), vector) in missing.into_iter().zip(fetched) {
            check_vector(p.dim, &text, &vector)?;
            cache.insert(
                key,
                CacheEntry {
                    model_id: p.model_id.clone(),
                    vector,
                },
            )?;
        }
        cache.persist()?;
    }

    let mut rows = DMatrix::<f64>::zeros(texts.len(), p.dim);
    for (i, (k, t)) in keys.iter().zip(texts).enumerate() {
        let entry = cache.get(k).ok_or_else(|| EmbedError::CacheMiss {
            model_id: p.model_id.clone(),
            text: t.clone(),
        })?;
        check_vector(p.dim, t, &entry.vector)?;
        for (j, v) in entry.vector.iter().enumerate() {
            rows[(i, j)] = *v;
        }
    }
    Ok(EmbeddingMatrix {
        rows,
        row_keys: keys,
        model_id: p.model_id.clone(),
    })
}

fn check_vector(dim: usize, text: &str, v: &[f64]) -> Result<(), EmbedError> {
    if v.len() != dim {
        return Err(EmbedError::DimensionMismatch {
            expected: dim,
            got: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite {
            text: text.to_string(),
        });
    }
    Ok(())
}
