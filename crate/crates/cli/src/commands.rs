use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use probekit::artifact::Artifact;
use probekit::data::{self, split_stats, write_util_csv};
use probekit::digest::hex_digest;
use probekit::embed::{import_embeddings, synthetic::synthetic_pairs};
use probekit::pipeline::{
    embed_scenarios, run_experiment, run_sweep, scenarios_of, split_seed, SweepOptions,
};
use probekit::report::{aggregate, emit_fig_data, summary_csv, table_digest, FigKind, GroupKey, ReportError};
use probekit::{
    CacheHandle, ExperimentSpec, LabelPolicy, LogRegOptions, ProviderKind, ResultRecord,
    ResultTable, Split,
};

use crate::config::{resolve_templates, DataSource, ProviderConfig, SweepConfig};
use crate::{CliError, DataArgs, EmbedArgs, PrepareArgs, ProviderArgs, ReportArgs, RunArgs, SweepArgs};

const CACHE_FILE: &str = "embeddings.jsonl";
const RESULTS_FILE: &str = "results.jsonl";
const MANIFEST_FILE: &str = "manifest.jsonl";

fn provider_config(a: &ProviderArgs) -> ProviderConfig {
    ProviderConfig {
        kind: a.provider.clone(),
        model: a.model.clone(),
        dim: a.dim,
        noise_sigma: a.noise_sigma,
        utility_scale: a.utility_scale,
        direction_seed: a.direction_seed,
        endpoint: a.endpoint.clone(),
        batch_size: a.batch_size,
        max_in_flight: None,
        max_retries: a.max_retries,
        timeout_s: None,
        import: a.import.clone(),
    }
}

fn data_source(d: &DataArgs, kind: &str, seed: u64) -> Result<DataSource, CliError> {
    DataSource::choose(d.data.clone(), kind == "synthetic", d.n_train, d.n_eval, seed)
}

fn open_cache(dir: Option<&Path>, imports: &[&Path]) -> Result<CacheHandle, CliError> {
    let cache = match dir {
        Some(d) => CacheHandle::open(d.join(CACHE_FILE)).map_err(|e| CliError::Failure(e.to_string()))?,
        None => CacheHandle::in_memory(),
    };
    for path in imports {
        let imported = import_embeddings(path).map_err(|e| CliError::Failure(e.to_string()))?;
        let added = cache.merge(&imported).map_err(|e| CliError::User(e.to_string()))?;
        log::info!("merged {added} embeddings from {}", path.display());
    }
    cache.persist().map_err(|e| CliError::Failure(e.to_string()))?;
    Ok(cache)
}

fn config_digest<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_string(value).expect("config serializes");
    hex_digest(&[b"probekit-config", canonical.as_bytes()])
}

/// Appends one line to `<dir>/manifest.jsonl` (current directory if none).
fn append_manifest(dir: Option<&Path>, command: &str, digest: &str, seed: u64, extra: serde_json::Value) -> Result<(), CliError> {
    let dir = dir.unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let line = json!({
        "command": command,
        "config_digest": digest,
        "seed": seed,
        "versions": {
            "probekit": env!("CARGO_PKG_VERSION"),
            "artifact_format": probekit::artifact::FORMAT,
        },
        "details": extra,
    });
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(dir.join(MANIFEST_FILE))?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn print_json<T: Serialize>(v: &T) {
    println!("{}", serde_json::to_string(v).expect("serializable"));
}

pub fn prepare_data(a: PrepareArgs) -> Result<(), CliError> {
    let dir = match (&a.synthetic_out, &a.data) {
        (Some(out), _) => {
            std::fs::create_dir_all(out)?;
            for (split, n) in [(Split::Train, a.n_train), (Split::Test, a.n_eval), (Split::TestHard, a.n_eval)] {
                let file = std::fs::File::create(out.join(split.file_name()))?;
                write_util_csv(file, &synthetic_pairs(n, split, a.seed)).map_err(|e| CliError::Failure(e.to_string()))?;
            }
            out.clone()
        }
        (None, Some(d)) => d.clone(),
        (None, None) => return Err(CliError::User("prepare-data needs --data or --synthetic-out".into())),
    };
    let mut stats = Vec::new();
    for split in [Split::Train, Split::Test, Split::TestHard] {
        let path = dir.join(split.file_name());
        if split == Split::TestHard && !path.exists() {
            continue;
        }
        let raw = data::load_util_csv(&path, split).map_err(|e| match e {
            data::DataError::FileNotFound(_) | data::DataError::Io(_) => CliError::Failure(e.to_string()),
            other => CliError::User(other.to_string()),
        })?;
        let labeled = data::make_labeled_pairs(&raw, split, split_seed(a.seed, split))
            .map_err(|e| CliError::User(e.to_string()))?;
        let s = split_stats(&labeled);
        print_json(&s);
        stats.push(s);
    }
    let digest = config_digest(&json!({"command": "prepare-data", "data": dir, "seed": a.seed}));
    append_manifest(a.out.as_deref(), "prepare-data", &digest, a.seed, json!({ "splits": stats }))
}

pub fn embed(a: EmbedArgs) -> Result<(), CliError> {
    let pc = provider_config(&a.provider);
    let provider = pc.to_spec()?;
    let templates = resolve_templates(&a.template)?;
    let source = data_source(&a.data, &pc.kind, a.seed)?;
    let splits: Vec<Split> = match a.split {
        Some(s) => vec![s],
        None => vec![Split::Train, Split::Test, Split::TestHard],
    };
    let with_hard = splits.contains(&Split::TestHard)
        && match &source {
            DataSource::Dir(d) => d.join(Split::TestHard.file_name()).exists(),
            DataSource::Synthetic { .. } => true,
        };
    let data = source.load(if with_hard { Split::TestHard } else { Split::Test })?;
    let imports: Vec<&Path> = pc.import.as_deref().into_iter().collect();
    let cache = open_cache(Some(&a.cache_dir), &imports)?;
    let mut counts = Vec::new();
    for t in &templates {
        for &split in &splits {
            let Ok(pairs) = data.split(split) else { continue };
            let scenarios = scenarios_of(pairs);
            embed_scenarios(&provider, t, &scenarios, &cache)?;
            let line = json!({
                "model_id": provider.model_id,
                "template_id": t.id,
                "split": split,
                "scenarios": scenarios.len(),
                "cache_entries": cache.len(),
            });
            print_json(&line);
            counts.push(line);
        }
    }
    let digest = config_digest(&json!({
        "command": "embed", "provider": provider, "templates": templates, "data": source,
    }));
    append_manifest(Some(a.out.as_deref().unwrap_or(&a.cache_dir)), "embed", &digest, a.seed, json!({ "embedded": counts }))
}

pub fn run(a: RunArgs) -> Result<(), CliError> {
    if a.k.is_empty() || a.k.contains(&0) {
        return Err(CliError::User("--k needs one or more positive integers".into()));
    }
    if a.split == Split::Train {
        return Err(CliError::User("--split must be test or test_hard".into()));
    }
    let pc = provider_config(&a.provider);
    let provider = pc.to_spec()?;
    let templates = resolve_templates(&a.template)?;
    let source = data_source(&a.data, &pc.kind, a.seed)?;
    let data = source.load(a.split)?;
    let imports: Vec<&Path> = pc.import.as_deref().into_iter().collect();
    let cache = open_cache(a.cache_dir.as_deref(), &imports)?;
    let mut probe = LogRegOptions::default();
    if let Some(l) = a.lambda {
        probe.lambda = l;
    }
    let labels = if a.null_labels { LabelPolicy::CoinFlip } else { LabelPolicy::Balanced };
    let digest = config_digest(&json!({
        "command": "run",
        "provider": provider,
        "templates": templates,
        "mode": a.mode,
        "ks": a.k,
        "seed": a.seed,
        "eval_split": a.split,
        "labels": labels,
        "probe": probe,
        "data": source,
    }));

    let mut table = ResultTable::default();
    let mut artifacts: Vec<(String, Artifact)> = Vec::new();
    for t in &templates {
        for &k in &a.k {
            let spec = ExperimentSpec {
                provider: provider.clone(),
                template: t.clone(),
                mode: a.mode,
                k,
                seed: a.seed,
                eval_split: a.split,
                labels,
                probe,
            };
            let out = run_experiment(&spec, &data, &cache)?;
            let mut rec = ResultRecord::from_result(&out.result, a.timing);
            rec.config_digest = Some(digest.clone());
            print_json(&rec);
            table.records.push(rec);
            artifacts.push((format!("artifact_{}_{}_k{k}.json", t.id, a.mode), out.artifact));
        }
    }
    if let Some(out) = &a.out {
        table.save(&out.join(RESULTS_FILE))?;
        for (name, art) in &artifacts {
            art.write(&out.join(name)).map_err(|e| CliError::Failure(e.to_string()))?;
        }
    }
    let accs: Vec<_> = table
        .records
        .iter()
        .map(|r| json!({"template_id": r.template_id, "k": r.k, "eval_accuracy": r.eval_accuracy}))
        .collect();
    append_manifest(a.out.as_deref(), "run", &digest, a.seed, json!({ "results": accs }))
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let mut cfg = SweepConfig::load(&a.config)?;
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    if a.cache_dir.is_some() {
        cfg.cache_dir = a.cache_dir.clone();
    }
    if let Some(p) = a.max_parallel {
        cfg.max_parallel = p;
    }
    let grid = cfg.grid()?;
    let source = cfg.data_source()?;
    let data = source.load(grid.eval_split)?;
    let imports: Vec<&Path> = cfg.providers.iter().filter_map(|p| p.import.as_deref()).collect();
    let cache = open_cache(cfg.cache_dir.as_deref(), &imports)?;
    let out_dir: PathBuf = cfg.out.clone().unwrap_or_else(|| PathBuf::from("probekit-out"));
    let digest = config_digest(&json!({"command": "sweep", "grid": grid, "data": source}));

    let opts = SweepOptions {
        max_parallel: cfg.max_parallel.max(1),
        record_timing: a.timing,
    };
    let mut table = run_sweep(&grid, &data, &cache, opts)?;
    for r in &mut table.records {
        r.config_digest = Some(digest.clone());
    }
    let path = out_dir.join(RESULTS_FILE);
    table.save(&path)?;
    let errors = table.error_count();
    let remote_errors = table
        .records
        .iter()
        .filter(|r| r.is_error() && r.provider_kind == ProviderKind::RemoteApi)
        .count();
    print_json(&json!({
        "results": path,
        "cells": table.len(),
        "errors": errors,
        "config_digest": digest,
    }));
    append_manifest(
        Some(&out_dir),
        "sweep",
        &digest,
        grid.seed,
        json!({"results": path, "cells": table.len(), "errors": errors}),
    )?;
    if errors > 0 {
        eprintln!("warning: {errors} of {} cells failed; see the error fields in {}", table.len(), path.display());
    }
    if errors == table.len() {
        let msg = "every sweep cell failed".to_string();
        return Err(if remote_errors > 0 { CliError::Failure(msg) } else { CliError::User(msg) });
    }
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let table = ResultTable::load(&a.results).map_err(|e| match e.kind() {
        std::io::ErrorKind::InvalidData => CliError::User(format!("{}: {e}", a.results.display())),
        _ => CliError::Failure(format!("{}: {e}", a.results.display())),
    })?;
    let keys = a
        .group_by
        .iter()
        .map(|k| k.parse::<GroupKey>().map_err(CliError::User))
        .collect::<Result<Vec<_>, _>>()?;
    let kinds: Vec<FigKind> = if a.kind == "all" {
        FigKind::ALL.to_vec()
    } else {
        vec![a.kind.parse::<FigKind>().map_err(CliError::User)?]
    };
    let report_err = |e: ReportError| match e {
        ReportError::Io(e) => CliError::Failure(e.to_string()),
        other => CliError::User(other.to_string()),
    };
    let digest = table_digest(&table);
    let rows = aggregate(&table, &keys).map_err(report_err)?;
    let summary = summary_csv(&rows, &digest);
    std::fs::create_dir_all(&a.out)?;
    let tmp = a.out.join("summary.csv.tmp");
    std::fs::write(&tmp, &summary)?;
    std::fs::rename(&tmp, a.out.join("summary.csv"))?;
    print!("{summary}");

    let mut written = Vec::new();
    for kind in kinds {
        match emit_fig_data(&table, kind) {
            Ok(fig) => {
                let path = a.out.join(format!("{kind}.csv"));
                fig.write(&path).map_err(report_err)?;
                written.push(path);
            }
            Err(ReportError::MissingAxis(axis)) if a.kind == "all" => {
                eprintln!("skipping {kind}: results lack the {axis} axis");
            }
            Err(e) => return Err(report_err(e)),
        }
    }
    append_manifest(
        Some(&a.out),
        "report",
        &digest,
        table.records.first().map_or(0, |r| r.seed),
        json!({"results": a.results, "written": written}),
    )
}
