//! Linear probing of text embeddings for pairwise pleasantness judgments.
//!
//! Pairs of scenarios are formatted through prompt templates, embedded by a
//! provider, reduced with standardization + PCA and classified by a logistic
//! probe. Two feature constructions are supported:
//!
//! * [`Mode::Single`]: `phi(S, T) = P(H(f(S))) - P(H(f(T)))`, with the reducer
//!   fit on individual activations.
//! * [`Mode::Paired`]: `phi(S, T) = P(H(f(S)) - H(f(T)))`, with the reducer fit
//!   on activation differences.
//!
//! The [`pipeline`] module composes these into single experiments and sweeps,
//! and [`report`] turns result tables into plot-ready summaries.

pub mod artifact;
pub mod data;
pub mod digest;
pub mod embed;
pub mod pipeline;
pub mod probe;
pub mod prompt;
pub mod reduce;
pub mod report;

pub use data::{Dataset, LabeledPair, RawPair, Scenario, Split};
pub use embed::{CacheHandle, EmbeddingMatrix, ProviderKind, ProviderSpec, SyntheticConfig};
pub use pipeline::{
    ExperimentData, ExperimentResult, ExperimentSpec, LabelPolicy, Mode, ResultRecord,
    ResultTable, SweepGrid,
};
pub use probe::{FeatureSet, LogRegOptions, ProbeModel};
pub use prompt::PromptTemplate;
pub use reduce::{FitTarget, PcaModel, Reducer, Standardizer};
pub use report::{FigKind, FigTable, SummaryRow};
