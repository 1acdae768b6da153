use std::path::Path;
use std::process::{Command, Output};

fn probekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probekit"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SWEEP: &str = r#"
seed = 9
ks = [1, 5, 20]
templates = [0, 1, 4]
synthetic_train = 150
synthetic_eval = 80
out = "out"

[[providers]]
kind = "synthetic"
model = "synthetic-24"
dim = 24
noise_sigma = 0.7

[[providers]]
kind = "synthetic"
dim = 40
noise_sigma = 1.1
"#;

#[test]
fn synthetic_run_prints_one_record_and_appends_a_manifest_line() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["run", "--provider", "synthetic", "--template", "0", "--mode", "paired", "--k", "1", "--seed", "7", "--n-train", "300", "--n-eval", "100"];
    let o = probekit(dir.path(), &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<_> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 1);
    let rec: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(rec["mode"], "paired");
    assert_eq!(rec["k"], 1);
    assert_eq!(rec["seed"], 7);
    assert!(rec["eval_accuracy"].as_f64().unwrap() > 0.9);
    assert!(rec.get("wall_time_s").is_none());

    probekit(dir.path(), &args);
    let manifest = std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = manifest.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 2);
    assert_eq!(entries[0]["config_digest"], rec["config_digest"]);
    assert_eq!(entries[0]["seed"], 7);
    assert!(entries[0]["versions"]["probekit"].is_string());
}

#[test]
fn run_with_out_writes_results_and_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = probekit(dir.path(), &["run", "--k", "1,3", "--n-train", "100", "--n-eval", "50", "--out", "res", "--timing"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let res = dir.path().join("res");
    assert_eq!(std::fs::read_to_string(res.join("results.jsonl")).unwrap().lines().count(), 2);
    for k in [1, 3] {
        let art = res.join(format!("artifact_copy_single_k{k}.json"));
        probekit::artifact::Artifact::read(&art).unwrap();
    }
    assert!(stdout(&o).contains("wall_time_s"));
}

#[test]
fn sweep_twice_gives_identical_result_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sweep.toml"), SWEEP).unwrap();
    let o = probekit(dir.path(), &["sweep", "--config", "sweep.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read(dir.path().join("out/results.jsonl")).unwrap();
    assert_eq!(first.iter().filter(|&&b| b == b'\n').count(), 2 * 3 * 2 * 3);
    let o = probekit(dir.path(), &["sweep", "--config", "sweep.toml", "--max-parallel", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(first, std::fs::read(dir.path().join("out/results.jsonl")).unwrap());
}

#[test]
fn report_files_carry_the_manifest_digest() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("sweep.toml"), SWEEP).unwrap();
    assert!(probekit(dir.path(), &["sweep", "--config", "sweep.toml"]).status.success());
    let manifest = std::fs::read_to_string(dir.path().join("out/manifest.jsonl")).unwrap();
    let entry: serde_json::Value = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
    let digest = entry["config_digest"].as_str().unwrap().to_string();

    let o = probekit(dir.path(), &["report", "--results", "out/results.jsonl", "--out", "figs", "--group-by", "template"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 2 + 3);
    for name in ["summary", "scaling_by_k", "variance_vs_k", "accuracy_by_prompt", "mode_violin"] {
        let text = std::fs::read_to_string(dir.path().join(format!("figs/{name}.csv"))).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("# config_digest={digest}"), "{name}");
    }

    let o = probekit(dir.path(), &["report", "--results", "out/results.jsonl", "--out", "figs", "--kind", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_axis_for_an_explicit_kind_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(probekit(dir.path(), &["run", "--k", "3", "--n-train", "60", "--n-eval", "30", "--out", "o"]).status.success());
    let o = probekit(dir.path(), &["report", "--results", "o/results.jsonl", "--out", "f", "--kind", "variance_vs_k"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("axis"));
}

#[test]
fn unknown_subcommand_exits_1_with_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = probekit(dir.path(), &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn bad_flags_are_user_errors() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--mode", "sideways"][..],
        &["run", "--k", "0"][..],
        &["run", "--split", "train"][..],
        &["run", "--template", "9"][..],
        &["run", "--provider", "remote", "--model", "text-embedding-ada-002"][..],
    ] {
        assert_eq!(probekit(dir.path(), args).status.code(), Some(1), "{args:?}");
    }
}

#[test]
fn unreachable_provider_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    assert!(probekit(dir.path(), &["prepare-data", "--synthetic-out", "data", "--n-train", "20", "--n-eval", "10"]).status.success());
    let o = probekit(
        dir.path(),
        &["run", "--provider", "remote", "--model", "m", "--dim", "4", "--endpoint", "http://127.0.0.1:1/v1", "--max-retries", "0", "--data", "data"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn imported_embeddings_reproduce_the_synthetic_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let prep = probekit(p, &["prepare-data", "--synthetic-out", "data", "--n-train", "120", "--n-eval", "60"]);
    assert!(prep.status.success(), "{}", stderr(&prep));
    assert_eq!(stdout(&prep).lines().count(), 3);
    let synth = ["--provider", "synthetic", "--model", "syn", "--dim", "16", "--noise-sigma", "0.5", "--data", "data"];
    let e = probekit(p, &[&["embed", "--split", "train", "--cache-dir", "c1"][..], &synth].concat());
    assert!(e.status.success(), "{}", stderr(&e));
    let e = probekit(p, &[&["embed", "--split", "test", "--cache-dir", "c1"][..], &synth].concat());
    assert!(e.status.success(), "{}", stderr(&e));

    let direct = probekit(p, &[&["run", "--k", "4"][..], &synth].concat());
    let file = ["--provider", "file", "--model", "syn", "--dim", "16", "--import", "c1/embeddings.jsonl", "--data", "data", "--k", "4"];
    let imported = probekit(p, &[&["run"][..], &file].concat());
    assert!(imported.status.success(), "{}", stderr(&imported));
    let a: serde_json::Value = serde_json::from_str(stdout(&direct).trim()).unwrap();
    let b: serde_json::Value = serde_json::from_str(stdout(&imported).trim()).unwrap();
    assert_eq!(a["eval_accuracy"], b["eval_accuracy"]);
    assert_eq!(b["provider_kind"], "file_import");

    // Nothing cached for another model: the file provider cannot fetch.
    let o = probekit(p, &["run", "--provider", "file", "--model", "other", "--dim", "16", "--data", "data"]);
    assert_eq!(o.status.code(), Some(2));
}
