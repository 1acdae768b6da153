//! Cartesian sweeps over providers, templates, modes and component counts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    prepare, run_ks, ExperimentData, ExperimentSpec, LabelPolicy, Mode, PipelineError,
    ResultRecord, ResultTable,
};
use crate::data::Split;
use crate::digest::digest_u64;
use crate::embed::{CacheHandle, ProviderSpec};
use crate::probe::LogRegOptions;
use crate::prompt::PromptTemplate;

/// Component counts used when a sweep does not name its own.
pub const DEFAULT_KS: [usize; 4] = [1, 10, 50, 300];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub providers: Vec<ProviderSpec>,
    pub templates: Vec<PromptTemplate>,
    pub modes: Vec<Mode>,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub eval_split: Split,
    #[serde(default)]
    pub labels: LabelPolicy,
    #[serde(default)]
    pub probe: LogRegOptions,
}

impl SweepGrid {
    pub fn new(providers: Vec<ProviderSpec>, templates: Vec<PromptTemplate>) -> Self {
        Self {
            providers,
            templates,
            modes: vec![Mode::Single, Mode::Paired],
            ks: DEFAULT_KS.to_vec(),
            seed: 0,
            eval_split: Split::Test,
            labels: LabelPolicy::Balanced,
            probe: LogRegOptions::default(),
        }
    }

    pub fn cell_count(&self) -> usize {
        self.providers.len() * self.templates.len() * self.modes.len() * self.ks.len()
    }

    fn check(&self) -> Result<(), PipelineError> {
        if self.providers.is_empty() {
            return Err(PipelineError::EmptyGrid("providers"));
        }
        if self.templates.is_empty() {
            return Err(PipelineError::EmptyGrid("templates"));
        }
        if self.modes.is_empty() {
            return Err(PipelineError::EmptyGrid("modes"));
        }
        if self.ks.is_empty() {
            return Err(PipelineError::EmptyGrid("k values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepOptions {
    /// Upper bound on concurrently computed (provider, template, mode) groups.
    pub max_parallel: usize,
    /// Keep per-cell wall time in the records.
    pub record_timing: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            max_parallel: 1,
            record_timing: false,
        }
    }
}

/// Seed of a (model, template, mode) group. `k` is left out so that all
/// component counts of a group share one labeling and one reducer.
pub fn cell_seed(seed: u64, model_id: &str, template_id: &str, mode: Mode) -> u64 {
    seed ^ digest_u64(&[
        b"cell",
        model_id.as_bytes(),
        template_id.as_bytes(),
        mode.as_str().as_bytes(),
    ])
}

struct Group<'a> {
    provider: &'a ProviderSpec,
    template: &'a PromptTemplate,
    mode: Mode,
}

/// Runs every cell of `grid`. A failing cell becomes an error record; the
/// rest of the sweep carries on. Records are ordered provider, template,
/// mode, k, whatever the scheduling.
pub fn run_sweep(
    grid: &SweepGrid,
    data: &ExperimentData,
    cache: &CacheHandle,
    opts: SweepOptions,
) -> Result<ResultTable, PipelineError> {
    grid.check()?;
    let groups: Vec<Group> = grid
        .providers
        .iter()
        .flat_map(|p| {
            grid.templates.iter().flat_map(move |t| {
                grid.modes.iter().map(move |&m| Group {
                    provider: p,
                    template: t,
                    mode: m,
                })
            })
        })
        .collect();

    let run_group = |g: &Group| -> Vec<ResultRecord> {
        let spec = ExperimentSpec {
            provider: g.provider.clone(),
            template: g.template.clone(),
            mode: g.mode,
            k: grid.ks[0].max(1),
            seed: cell_seed(grid.seed, &g.provider.model_id, &g.template.id, g.mode),
            eval_split: grid.eval_split,
            labels: grid.labels,
            probe: grid.probe,
        };
        let cell = |k: usize| ExperimentSpec { k, ..spec.clone() };
        let outcome = spec
            .validate()
            .and_then(|_| prepare(&spec, data, cache))
            .and_then(|prep| run_ks(&spec, &grid.ks, &prep));
        match outcome {
            Ok(per_k) => per_k
                .into_iter()
                .zip(&grid.ks)
                .map(|(r, &k)| match r {
                    Ok(out) => ResultRecord::from_result(&out.result, opts.record_timing),
                    Err(e) => ResultRecord::from_error(&cell(k), &e),
                })
                .collect(),
            Err(e) => {
                log::warn!(
                    "sweep group {} / {} / {} failed: {e}",
                    g.provider.model_id,
                    g.template.id,
                    g.mode
                );
                grid.ks.iter().map(|&k| ResultRecord::from_error(&cell(k), &e)).collect()
            }
        }
    };

    // Embed each (provider, template) once, sequentially, so concurrent
    // groups only ever read the cache. Failures resurface per group below.
    for p in &grid.providers {
        for t in &grid.templates {
            let probe_spec = ExperimentSpec {
                provider: p.clone(),
                template: t.clone(),
                mode: grid.modes[0],
                k: 1,
                seed: grid.seed,
                eval_split: grid.eval_split,
                labels: grid.labels,
                probe: grid.probe,
            };
            if let Err(e) = prepare(&probe_spec, data, cache) {
                log::warn!("embedding {} / {} failed: {e}", p.model_id, t.id);
            }
        }
    }

    let nested: Vec<Vec<ResultRecord>> = if opts.max_parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(opts.max_parallel)
            .build()
            .map_err(|e| PipelineError::InvalidSpec(format!("thread pool: {e}")))?;
        pool.install(|| groups.par_iter().map(run_group).collect())
    } else {
        groups.iter().map(run_group).collect()
    };
    Ok(ResultTable {
        records: nested.into_iter().flatten().collect(),
    })
}
