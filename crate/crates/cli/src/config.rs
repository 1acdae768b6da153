//! Provider, data and sweep settings, shared by flags and TOML configs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use probekit::embed::RemoteConfig;
use probekit::prompt::{builtin_template, builtin_templates, load_templates};
use probekit::{
    ExperimentData, LabelPolicy, LogRegOptions, Mode, PromptTemplate, ProviderSpec, Split,
    SweepGrid, SyntheticConfig,
};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    /// synthetic, remote or file.
    pub kind: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default)]
    pub utility_scale: Option<f64>,
    #[serde(default)]
    pub direction_seed: Option<u64>,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub max_in_flight: Option<usize>,
    #[serde(default)]
    pub max_retries: Option<u32>,
    #[serde(default)]
    pub timeout_s: Option<u64>,
    /// Embedding file merged into the cache (file provider).
    #[serde(default)]
    pub import: Option<PathBuf>,
}

impl ProviderConfig {
    pub fn to_spec(&self) -> Result<ProviderSpec, CliError> {
        let user = |e: probekit::embed::EmbedError| CliError::User(e.to_string());
        let spec = match self.kind.as_str() {
            "synthetic" => {
                let d = SyntheticConfig::default();
                let cfg = SyntheticConfig {
                    dim: self.dim.unwrap_or(d.dim),
                    noise_sigma: self.noise_sigma.unwrap_or(d.noise_sigma),
                    utility_scale: self.utility_scale.unwrap_or(d.utility_scale),
                    utility_direction_seed: self.direction_seed.unwrap_or(d.utility_direction_seed),
                };
                let model = self.model.clone().unwrap_or_else(|| format!("synthetic-{}", cfg.dim));
                ProviderSpec::synthetic(model, cfg)
            }
            "remote" | "remote_api" => {
                let d = RemoteConfig::default();
                let cfg = RemoteConfig {
                    endpoint: self.endpoint.clone().unwrap_or(d.endpoint),
                    batch_size: self.batch_size.unwrap_or(d.batch_size),
                    max_in_flight: self.max_in_flight.unwrap_or(d.max_in_flight),
                    max_retries: self.max_retries.unwrap_or(d.max_retries),
                    timeout_s: self.timeout_s.unwrap_or(d.timeout_s),
                    ..d
                };
                ProviderSpec::remote(self.required_model()?, self.dim, cfg).map_err(user)?
            }
            "file" | "file_import" => ProviderSpec::file_import(self.required_model()?, self.dim).map_err(user)?,
            other => {
                return Err(CliError::User(format!(
                    "unknown provider {other:?} (expected synthetic, remote or file)"
                )))
            }
        };
        spec.validate().map_err(user)?;
        Ok(spec)
    }

    fn required_model(&self) -> Result<String, CliError> {
        self.model
            .clone()
            .ok_or_else(|| CliError::User(format!("provider {} needs --model", self.kind)))
    }

    pub fn rebase(&mut self, base: &Path) {
        if let Some(p) = &self.import {
            self.import = Some(base.join(p));
        }
    }
}

/// `<index>` picks a built-in template; anything else is read as a
/// template file with one `id<TAB>pattern` per line.
pub fn resolve_templates(arg: &str) -> Result<Vec<PromptTemplate>, CliError> {
    if let Ok(i) = arg.parse::<usize>() {
        return builtin_template(i)
            .map(|t| vec![t])
            .map_err(|e| CliError::User(e.to_string()));
    }
    let path = Path::new(arg);
    if !path.is_file() {
        return Err(CliError::User(format!(
            "--template {arg:?} is neither a built-in index (0-4) nor a template file"
        )));
    }
    let t = load_templates(path).map_err(|e| CliError::User(e.to_string()))?;
    if t.is_empty() {
        return Err(CliError::User(format!("template file {arg} is empty")));
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Dir(PathBuf),
    Synthetic { n_train: usize, n_eval: usize, seed: u64 },
}

impl DataSource {
    pub fn load(&self, eval_split: Split) -> Result<ExperimentData, CliError> {
        match self {
            DataSource::Dir(dir) => ExperimentData::load_dir(dir, eval_split == Split::TestHard)
                .map_err(|e| match e {
                    probekit::data::DataError::FileNotFound(_) | probekit::data::DataError::Io(_) => {
                        CliError::Failure(e.to_string())
                    }
                    other => CliError::User(other.to_string()),
                }),
            DataSource::Synthetic { n_train, n_eval, seed } => {
                Ok(ExperimentData::synthetic(*n_train, *n_eval, *seed))
            }
        }
    }

    /// Real data when a directory is given; synthetic pairs only make sense
    /// for the synthetic provider.
    pub fn choose(
        dir: Option<PathBuf>,
        all_synthetic: bool,
        n_train: usize,
        n_eval: usize,
        seed: u64,
    ) -> Result<Self, CliError> {
        match dir {
            Some(d) => Ok(DataSource::Dir(d)),
            None if all_synthetic => Ok(DataSource::Synthetic { n_train, n_eval, seed }),
            None => Err(CliError::User(
                "--data <dir with util_*.csv> is required for non-synthetic providers".into(),
            )),
        }
    }
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Single, Mode::Paired]
}

fn default_ks() -> Vec<usize> {
    probekit::pipeline::DEFAULT_KS.to_vec()
}

fn default_split() -> Split {
    Split::Test
}

fn default_n_train() -> usize {
    2000
}

fn default_n_eval() -> usize {
    1000
}

fn default_parallel() -> usize {
    1
}

/// TOML sweep description. Relative paths are taken from the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub providers: Vec<ProviderConfig>,
    /// Built-in template indices; all five when neither this nor
    /// `template_file` is set.
    #[serde(default)]
    pub templates: Option<Vec<usize>>,
    #[serde(default)]
    pub template_file: Option<PathBuf>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_split")]
    pub eval_split: Split,
    #[serde(default)]
    pub labels: LabelPolicy,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub data: Option<PathBuf>,
    #[serde(default = "default_n_train")]
    pub synthetic_train: usize,
    #[serde(default = "default_n_eval")]
    pub synthetic_eval: usize,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::User(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: SweepConfig =
            toml::from_str(&text).map_err(|e| CliError::User(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut cfg.providers {
            p.rebase(base);
        }
        for slot in [&mut cfg.template_file, &mut cfg.data, &mut cfg.cache_dir, &mut cfg.out] {
            if let Some(p) = slot.as_mut() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn grid(&self) -> Result<SweepGrid, CliError> {
        let providers = self
            .providers
            .iter()
            .map(ProviderConfig::to_spec)
            .collect::<Result<Vec<_>, _>>()?;
        let templates = match (&self.template_file, &self.templates) {
            (Some(f), _) => resolve_templates(&f.to_string_lossy())?,
            (None, Some(ix)) => ix
                .iter()
                .map(|&i| builtin_template(i).map_err(|e| CliError::User(e.to_string())))
                .collect::<Result<_, _>>()?,
            (None, None) => builtin_templates(),
        };
        let mut probe = LogRegOptions::default();
        if let Some(l) = self.lambda {
            probe.lambda = l;
        }
        Ok(SweepGrid {
            providers,
            templates,
            modes: self.modes.clone(),
            ks: self.ks.clone(),
            seed: self.seed,
            eval_split: self.eval_split,
            labels: self.labels,
            probe,
        })
    }

    pub fn data_source(&self) -> Result<DataSource, CliError> {
        let all_synthetic = self.providers.iter().all(|p| p.kind == "synthetic");
        DataSource::choose(
            self.data.clone(),
            all_synthetic,
            self.synthetic_train,
            self.synthetic_eval,
            self.seed,
        )
    }
}
