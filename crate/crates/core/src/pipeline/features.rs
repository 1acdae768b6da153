//! Reducer fitting and feature construction for the two modes.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;

use super::{Mode, PipelineError};
use crate::data::{Dataset, Scenario};
use crate::embed::EmbeddingMatrix;
use crate::probe::FeatureSet;
use crate::reduce::{project, Reducer};

/// Activation lookup keyed by scenario text. A table holds activations of
/// one template, so the key does not need the prompt text.
pub trait EmbeddingLookup {
    fn dim(&self) -> usize;
    fn get(&self, scenario: &str) -> Option<&[f64]>;
}

#[derive(Debug, Clone, Default)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    /// Pairs each scenario with the matching row of `m`.
    pub fn from_matrix(scenarios: &[Scenario], m: &EmbeddingMatrix) -> Self {
        assert_eq!(scenarios.len(), m.nrows(), "one row per scenario");
        let mut t = Self::new(m.dim());
        for (i, s) in scenarios.iter().enumerate() {
            t.insert(s.text(), &m.row(i));
        }
        t
    }

    pub fn insert(&mut self, scenario: &str, v: &[f64]) {
        assert_eq!(v.len(), self.dim, "row width");
        if let Some(&i) = self.index.get(scenario) {
            self.data[i * self.dim..(i + 1) * self.dim].copy_from_slice(v);
        } else {
            self.index.insert(scenario.to_string(), self.index.len());
            self.data.extend_from_slice(v);
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

impl EmbeddingLookup for EmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn get(&self, scenario: &str) -> Option<&[f64]> {
        self.index
            .get(scenario)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }
}

/// Wraps a lookup and records every key requested, for auditing which
/// activations a step actually read.
pub struct AccessLog<'a, L: EmbeddingLookup> {
    inner: &'a L,
    seen: Mutex<Vec<String>>,
}

impl<'a, L: EmbeddingLookup> AccessLog<'a, L> {
    pub fn new(inner: &'a L) -> Self {
        Self {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn accessed(&self) -> Vec<String> {
        self.seen.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl<L: EmbeddingLookup> EmbeddingLookup for AccessLog<'_, L> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn get(&self, scenario: &str) -> Option<&[f64]> {
        self.seen
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(scenario.to_string());
        self.inner.get(scenario)
    }
}

fn fetch<'l, L: EmbeddingLookup>(h: &'l L, s: &Scenario) -> Result<&'l [f64], PipelineError> {
    h.get(s.text())
        .ok_or_else(|| PipelineError::MissingEmbedding(s.text().to_string()))
}

/// First- and second-scenario activation matrices, one row per pair.
fn pair_matrices<L: EmbeddingLookup>(
    pairs: &Dataset,
    h: &L,
) -> Result<(DMatrix<f64>, DMatrix<f64>), PipelineError> {
    let (n, d) = (pairs.len(), h.dim());
    let mut first = DMatrix::zeros(n, d);
    let mut second = DMatrix::zeros(n, d);
    for (i, p) in pairs.pairs.iter().enumerate() {
        first.row_mut(i).copy_from_slice(fetch(h, &p.first)?);
        second.row_mut(i).copy_from_slice(fetch(h, &p.second)?);
    }
    Ok((first, second))
}

/// The matrix the reducer is fit on: all 2N activations (first, second of
/// each pair, interleaved) in single mode; the N differences
/// `H(first) - H(second)` in paired mode.
pub fn reducer_fit_matrix<L: EmbeddingLookup>(
    mode: Mode,
    train: &Dataset,
    h: &L,
) -> Result<DMatrix<f64>, PipelineError> {
    let (n, d) = (train.len(), h.dim());
    match mode {
        Mode::Single => {
            let mut x = DMatrix::zeros(2 * n, d);
            for (i, p) in train.pairs.iter().enumerate() {
                x.row_mut(2 * i).copy_from_slice(fetch(h, &p.first)?);
                x.row_mut(2 * i + 1).copy_from_slice(fetch(h, &p.second)?);
            }
            Ok(x)
        }
        Mode::Paired => {
            let (a, b) = pair_matrices(train, h)?;
            Ok(a - b)
        }
    }
}

pub fn fit_reducer_for_mode<L: EmbeddingLookup>(
    mode: Mode,
    train: &Dataset,
    h: &L,
    k: usize,
) -> Result<Reducer, PipelineError> {
    let x = reducer_fit_matrix(mode, train, h)?;
    Ok(Reducer::fit(&x, k, mode.fit_target())?)
}

/// Single: `P(H(first)) - P(H(second))`. Paired: `P(H(first) - H(second))`.
pub fn build_features<L: EmbeddingLookup>(
    mode: Mode,
    r: &Reducer,
    pairs: &Dataset,
    h: &L,
) -> Result<FeatureSet, PipelineError> {
    if r.fitted_on != mode.fit_target() {
        return Err(PipelineError::ModeMismatch {
            mode,
            fitted_on: r.fitted_on,
        });
    }
    let (a, b) = pair_matrices(pairs, h)?;
    let phi = match mode {
        Mode::Single => project(r, &a)? - project(r, &b)?,
        Mode::Paired => project(r, &(a - b))?,
    };
    Ok(FeatureSet::new(phi, pairs.labels())?)
}
