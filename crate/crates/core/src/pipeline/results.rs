//! Persisted sweep results: one JSON record per cell, one cell per line.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentResult, ExperimentSpec, LabelPolicy, Mode, PipelineError};
use crate::data::Split;
use crate::embed::ProviderKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub provider_kind: ProviderKind,
    pub model_id: String,
    pub family: String,
    pub dim: usize,
    pub template_id: String,
    pub template: String,
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    pub train_split: Split,
    pub eval_split: Split,
    pub labels: LabelPolicy,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_effective: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_eval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_stage: Option<String>,
    /// Only present when timing was requested; it breaks byte-for-byte
    /// reproducibility of result files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
}

impl ResultRecord {
    fn skeleton(spec: &ExperimentSpec) -> Self {
        Self {
            provider_kind: spec.provider.kind,
            model_id: spec.provider.model_id.clone(),
            family: spec.provider.family(),
            dim: spec.provider.dim,
            template_id: spec.template.id.clone(),
            template: spec.template.pattern.clone(),
            mode: spec.mode,
            k: spec.k,
            seed: spec.seed,
            train_split: Split::Train,
            eval_split: spec.eval_split,
            labels: spec.labels,
            lambda: spec.probe.lambda,
            train_accuracy: None,
            eval_accuracy: None,
            train_loss: None,
            k_effective: None,
            n_train: None,
            n_eval: None,
            error: None,
            error_stage: None,
            wall_time_s: None,
            config_digest: None,
        }
    }

    pub fn from_result(r: &ExperimentResult, with_timing: bool) -> Self {
        Self {
            train_accuracy: Some(r.train_accuracy),
            eval_accuracy: Some(r.eval_accuracy),
            train_loss: Some(r.train_loss),
            k_effective: Some(r.k_effective),
            n_train: Some(r.n_train),
            n_eval: Some(r.n_eval),
            wall_time_s: with_timing.then_some(r.wall_time_s),
            ..Self::skeleton(&r.spec)
        }
    }

    pub fn from_error(spec: &ExperimentSpec, err: &PipelineError) -> Self {
        Self {
            error: Some(err.to_string()),
            error_stage: err.stage().map(|s| s.to_string()),
            ..Self::skeleton(spec)
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// Grid coordinates, used to order and match records.
    pub fn coordinates(&self) -> (String, String, Mode, usize) {
        (self.model_id.clone(), self.template_id.clone(), self.mode, self.k)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub records: Vec<ResultRecord>,
}

impl ResultTable {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ok_records(&self) -> impl Iterator<Item = &ResultRecord> {
        self.records.iter().filter(|r| !r.is_error())
    }

    pub fn error_count(&self) -> usize {
        self.records.iter().filter(|r| r.is_error()).count()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self, std::io::Error> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let r: ResultRecord = serde_json::from_str(&line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1))
            })?;
            records.push(r);
        }
        Ok(Self { records })
    }

    /// Writes to `path` through a temporary sibling and a rename.
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        self.write_jsonl(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(tmp, path)
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
