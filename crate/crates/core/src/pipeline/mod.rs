//! End-to-end experiments: label, embed, reduce, probe, evaluate.
//!
//! Everything is fit on the train split only. The eval split's activations
//! live in their own table and are only touched after the reducer and probe
//! are fixed.

mod features;
mod results;
mod sweep;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use features::{
    build_features, fit_reducer_for_mode, reducer_fit_matrix, AccessLog, EmbeddingLookup,
    EmbeddingTable,
};
pub use results::{ResultRecord, ResultTable};
pub use sweep::{cell_seed, run_sweep, SweepGrid, SweepOptions, DEFAULT_KS};

use crate::artifact::Artifact;
use crate::data::{self, DataError, Dataset, RawPair, Scenario, Split};
use crate::digest::digest_u64;
use crate::embed::{embed_batch, synthetic, CacheHandle, EmbedError, ProviderSpec};
use crate::probe::{self, LogRegOptions, ProbeError};
use crate::prompt::{apply_template, PromptError, PromptTemplate};
use crate::reduce::{FitTarget, ReduceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Single,
    Paired,
}

impl Mode {
    pub fn fit_target(self) -> FitTarget {
        match self {
            Mode::Single => FitTarget::Singles,
            Mode::Paired => FitTarget::Differences,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Paired => "paired",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, PipelineError> {
        match s {
            "single" => Ok(Mode::Single),
            "paired" => Ok(Mode::Paired),
            other => Err(PipelineError::InvalidSpec(format!(
                "unknown mode {other:?} (expected single or paired)"
            ))),
        }
    }
}

/// How pair labels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// Seeded coin per pair decides the presentation order.
    #[default]
    Balanced,
    /// Null control: labels are independent coins, unrelated to the text.
    CoinFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Label,
    Embed,
    Reduce,
    Features,
    Probe,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Label => "label",
            Stage::Embed => "embed",
            Stage::Reduce => "reduce",
            Stage::Features => "features",
            Stage::Probe => "probe",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no embedding for scenario {0:?}")]
    MissingEmbedding(String),
    #[error("reducer fitted on {fitted_on:?} cannot build {mode} features")]
    ModeMismatch { mode: Mode, fitted_on: FitTarget },
    #[error("sweep grid has no {0}")]
    EmptyGrid(&'static str),
    #[error("split {0} is not loaded")]
    MissingSplit(Split),
    #[error("invalid experiment: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Reduce(#[from] ReduceError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("{stage} stage: {source}")]
    AtStage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::AtStage { stage, .. } => Some(*stage),
            _ => None,
        }
    }

    /// True for failures of the embedding provider or the filesystem, as
    /// opposed to bad input.
    pub fn is_provider_or_io(&self) -> bool {
        match self {
            PipelineError::AtStage { source, .. } => source.is_provider_or_io(),
            PipelineError::Embed(
                EmbedError::ProviderError { .. } | EmbedError::Io(_) | EmbedError::CacheMiss { .. },
            ) => true,
            PipelineError::Data(DataError::Io(_) | DataError::FileNotFound(_)) => true,
            _ => false,
        }
    }
}

trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: Into<PipelineError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::AtStage {
            stage,
            source: Box::new(e.into()),
        })
    }
}

/// One point of the experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub provider: ProviderSpec,
    pub template: PromptTemplate,
    pub mode: Mode,
    pub k: usize,
    pub seed: u64,
    /// `test` or `test_hard`; training always uses `train`.
    pub eval_split: Split,
    #[serde(default)]
    pub labels: LabelPolicy,
    #[serde(default)]
    pub probe: LogRegOptions,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::InvalidSpec("k must be at least 1".into()));
        }
        if self.eval_split == Split::Train {
            return Err(PipelineError::InvalidSpec(
                "evaluation split must be test or test_hard".into(),
            ));
        }
        self.template.validate()?;
        Ok(())
    }
}

/// Raw pairs per split, unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentData {
    pub train: Vec<RawPair>,
    pub test: Vec<RawPair>,
    pub test_hard: Option<Vec<RawPair>>,
}

impl ExperimentData {
    /// Loads `util_train.csv`, `util_test.csv` and, when asked for,
    /// `util_test_hard.csv` from `dir`.
    pub fn load_dir(dir: &Path, with_test_hard: bool) -> Result<Self, DataError> {
        let load = |s: Split| data::load_util_csv(&dir.join(s.file_name()), s);
        Ok(Self {
            train: load(Split::Train)?,
            test: load(Split::Test)?,
            test_hard: if with_test_hard {
                Some(load(Split::TestHard)?)
            } else {
                None
            },
        })
    }

    /// Planted-utility pairs for the synthetic provider.
    pub fn synthetic(n_train: usize, n_eval: usize, seed: u64) -> Self {
        Self {
            train: synthetic::synthetic_pairs(n_train, Split::Train, seed),
            test: synthetic::synthetic_pairs(n_eval, Split::Test, seed),
            test_hard: Some(synthetic::synthetic_pairs(n_eval, Split::TestHard, seed)),
        }
    }

    pub fn split(&self, split: Split) -> Result<&[RawPair], PipelineError> {
        match split {
            Split::Train => Ok(&self.train),
            Split::Test => Ok(&self.test),
            Split::TestHard => self
                .test_hard
                .as_deref()
                .ok_or(PipelineError::MissingSplit(Split::TestHard)),
        }
    }
}

/// Seed used to label `split`, derived from the experiment seed.
pub fn split_seed(seed: u64, split: Split) -> u64 {
    seed ^ digest_u64(&[b"split", split.as_str().as_bytes()])
}

/// Labels the train and eval splits according to `policy`.
pub fn label_splits(
    data: &ExperimentData,
    eval_split: Split,
    seed: u64,
    policy: LabelPolicy,
) -> Result<(Dataset, Dataset), PipelineError> {
    let train_seed = split_seed(seed, Split::Train);
    let eval_seed = split_seed(seed, eval_split);
    let mut train = data::make_labeled_pairs(&data.train, Split::Train, train_seed)?;
    let mut eval = data::make_labeled_pairs(data.split(eval_split)?, eval_split, eval_seed)?;
    if policy == LabelPolicy::CoinFlip {
        train = train.with_coin_flip_labels(train_seed);
        eval = eval.with_coin_flip_labels(eval_seed);
    }
    Ok((train, eval))
}

/// Distinct scenarios of `pairs`, in first-seen order.
pub fn scenarios_of(pairs: &[RawPair]) -> Vec<Scenario> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for p in pairs {
        for s in [&p.better, &p.worse] {
            if seen.insert(s.text()) {
                out.push(s.clone());
            }
        }
    }
    out
}

/// Embeds every scenario through `template` and indexes the rows by
/// scenario text.
pub fn embed_scenarios(
    provider: &ProviderSpec,
    template: &PromptTemplate,
    scenarios: &[Scenario],
    cache: &CacheHandle,
) -> Result<EmbeddingTable, PipelineError> {
    let texts = scenarios
        .iter()
        .map(|s| apply_template(template, s))
        .collect::<Result<Vec<_>, _>>()?;
    let m = embed_batch(provider, &texts, cache)?;
    Ok(EmbeddingTable::from_matrix(scenarios, &m))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub spec: ExperimentSpec,
    pub train_accuracy: f64,
    pub eval_accuracy: f64,
    /// Penalized train log-loss at the fitted probe.
    pub train_loss: f64,
    pub k_effective: usize,
    pub n_train: usize,
    pub n_eval: usize,
    pub wall_time_s: f64,
}

/// Result plus the fitted reducer/probe that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub result: ExperimentResult,
    pub artifact: Artifact,
}

/// Shared part of every cell with the same provider, template, mode and
/// seed: labeled splits and activation tables.
pub(crate) struct Prepared {
    pub train: Dataset,
    pub eval: Dataset,
    pub train_table: EmbeddingTable,
    pub eval_table: EmbeddingTable,
}

pub(crate) fn prepare(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    cache: &CacheHandle,
) -> Result<Prepared, PipelineError> {
    let (train, eval) = label_splits(data, spec.eval_split, spec.seed, spec.labels).at(Stage::Label)?;
    let train_table =
        embed_scenarios(&spec.provider, &spec.template, &scenarios_of(&data.train), cache).at(Stage::Embed)?;
    let eval_raw = data.split(spec.eval_split).at(Stage::Label)?;
    let eval_table =
        embed_scenarios(&spec.provider, &spec.template, &scenarios_of(eval_raw), cache).at(Stage::Embed)?;
    Ok(Prepared {
        train,
        eval,
        train_table,
        eval_table,
    })
}

/// Runs `spec` once for each `k` in `ks`, sharing one reducer fit at the
/// largest k. Results come back in `ks` order; the reducer of each output is
/// truncated to that cell's k.
pub(crate) fn run_ks(
    spec: &ExperimentSpec,
    ks: &[usize],
    prepared: &Prepared,
) -> Result<Vec<Result<ExperimentOutput, PipelineError>>, PipelineError> {
    let start = Instant::now();
    let k_max = ks.iter().copied().max().unwrap_or(1).max(1);
    let Prepared {
        train,
        eval,
        train_table,
        eval_table,
    } = prepared;
    let reducer = fit_reducer_for_mode(spec.mode, train, train_table, k_max).at(Stage::Reduce)?;
    let train_fs = build_features(spec.mode, &reducer, train, train_table).at(Stage::Features)?;
    let eval_fs = build_features(spec.mode, &reducer, eval, eval_table).at(Stage::Features)?;
    let shared = start.elapsed().as_secs_f64();

    Ok(ks
        .iter()
        .map(|&k| {
            let t0 = Instant::now();
            let cell = ExperimentSpec { k, ..spec.clone() };
            cell.validate()?;
            let kk = k.min(reducer.k_effective());
            let tr = train_fs.prefix(kk);
            let ev = eval_fs.prefix(kk);
            // Presentation order is a coin flip of our own, so both orders of
            // every train pair are valid observations. Fitting on both keeps
            // label-count noise out of the intercept.
            let model = probe::fit_logreg(&tr.mirrored(), &spec.probe).at(Stage::Probe)?;
            let (train_loss, _) = probe::loss_and_grad(&model, &tr).at(Stage::Probe)?;
            let train_pred = probe::predict(&model, &tr.phi).at(Stage::Probe)?.1;
            let eval_pred = probe::predict(&model, &ev.phi).at(Stage::Probe)?.1;
            let result = ExperimentResult {
                train_accuracy: probe::accuracy(&train_pred, &tr.labels).at(Stage::Probe)?,
                eval_accuracy: probe::accuracy(&eval_pred, &ev.labels).at(Stage::Probe)?,
                train_loss,
                k_effective: kk,
                n_train: train.len(),
                n_eval: eval.len(),
                wall_time_s: shared + t0.elapsed().as_secs_f64(),
                spec: cell,
            };
            Ok(ExperimentOutput {
                result,
                artifact: Artifact {
                    reducer: reducer.truncated(k),
                    probe: model,
                },
            })
        })
        .collect())
}

/// Embed, fit the reducer on train, build features, fit the probe and score
/// both splits. Deterministic for a fixed spec and cache contents.
pub fn run_experiment(
    spec: &ExperimentSpec,
    data: &ExperimentData,
    cache: &CacheHandle,
) -> Result<ExperimentOutput, PipelineError> {
    spec.validate()?;
    let start = Instant::now();
    let prepared = prepare(spec, data, cache)?;
    let mut out = run_ks(spec, &[spec.k], &prepared)?
        .pop()
        .expect("one k requested")?;
    out.result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}
