//! Bit-exact text serialization of fitted reducers and probes.
//!
//! An artifact is a JSON document; every floating-point payload is stored as
//! base64 of little-endian `f64` bytes so that a round trip reproduces the
//! exact bits (NaN payloads included).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{decode_f64s, encode_f64s};
use crate::probe::ProbeModel;
use crate::reduce::{FitTarget, PcaModel, Reducer, Standardizer};

pub const FORMAT: &str = "probekit-artifact/1";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("malformed artifact: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReducerRecord {
    dim: usize,
    means: String,
    stds: String,
    epsilon: String,
    components: String,
    explained_variances: String,
    total_variance: String,
    k_requested: usize,
    k_effective: usize,
    fitted_on: FitTarget,
    fit_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProbeRecord {
    k: usize,
    weights: String,
    intercept: String,
    lambda: String,
    converged: bool,
    final_grad_norm: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Document {
    format: String,
    reducer: ReducerRecord,
    probe: ProbeRecord,
}

/// A fitted reducer together with the probe trained on its features.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub reducer: Reducer,
    pub probe: ProbeModel,
}

fn scalar(v: f64) -> String {
    encode_f64s(&[v])
}

fn floats(field: &str, s: &str, len: usize) -> Result<Vec<f64>, ArtifactError> {
    let v = decode_f64s(s).ok_or_else(|| ArtifactError::Malformed(format!("{field}: bad payload")))?;
    if v.len() != len {
        return Err(ArtifactError::Malformed(format!(
            "{field}: expected {len} values, got {}",
            v.len()
        )));
    }
    Ok(v)
}

impl Artifact {
    pub fn to_text(&self) -> String {
        let r = &self.reducer;
        let c = &r.pca.components;
        // row-major
        let comp: Vec<f64> = (0..c.nrows()).flat_map(|i| c.row(i).iter().copied().collect::<Vec<_>>()).collect();
        let doc = Document {
            format: FORMAT.to_string(),
            reducer: ReducerRecord {
                dim: r.dim(),
                means: encode_f64s(&r.standardizer.means),
                stds: encode_f64s(&r.standardizer.stds),
                epsilon: scalar(r.standardizer.epsilon),
                components: encode_f64s(&comp),
                explained_variances: encode_f64s(&r.pca.explained_variances),
                total_variance: scalar(r.pca.total_variance),
                k_requested: r.pca.k_requested,
                k_effective: r.pca.k_effective,
                fitted_on: r.fitted_on,
                fit_digest: r.fit_digest.clone(),
            },
            probe: ProbeRecord {
                k: self.probe.weights.len(),
                weights: encode_f64s(&self.probe.weights),
                intercept: scalar(self.probe.intercept),
                lambda: scalar(self.probe.lambda),
                converged: self.probe.converged,
                final_grad_norm: scalar(self.probe.final_grad_norm),
            },
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("artifact serializes");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ArtifactError> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(ArtifactError::Malformed(format!("unknown format {:?}", doc.format)));
        }
        let r = doc.reducer;
        let d = r.dim;
        let k = r.k_effective;
        let comp = floats("components", &r.components, k * d)?;
        let one = |f: &str, s: &str| floats(f, s, 1).map(|v| v[0]);
        let reducer = Reducer {
            standardizer: Standardizer {
                means: floats("means", &r.means, d)?,
                stds: floats("stds", &r.stds, d)?,
                epsilon: one("epsilon", &r.epsilon)?,
            },
            pca: PcaModel {
                components: DMatrix::from_row_slice(k, d, &comp),
                explained_variances: floats("explained_variances", &r.explained_variances, k)?,
                total_variance: one("total_variance", &r.total_variance)?,
                k_requested: r.k_requested,
                k_effective: k,
            },
            fitted_on: r.fitted_on,
            fit_digest: r.fit_digest,
        };
        let p = doc.probe;
        if p.k != k {
            return Err(ArtifactError::Malformed(format!(
                "probe width {} does not match reducer k {k}",
                p.k
            )));
        }
        let probe = ProbeModel {
            weights: floats("weights", &p.weights, p.k)?,
            intercept: one("intercept", &p.intercept)?,
            lambda: one("lambda", &p.lambda)?,
            converged: p.converged,
            final_grad_norm: one("final_grad_norm", &p.final_grad_norm)?,
        };
        Ok(Artifact { reducer, probe })
    }

    pub fn write(&self, path: &Path) -> Result<(), ArtifactError> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_text())?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, ArtifactError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
