use probekit::embed::RemoteConfig;
use probekit::pipeline::{
    build_features, cell_seed, fit_reducer_for_mode, label_splits, reducer_fit_matrix, run_experiment,
    run_sweep, scenarios_of, embed_scenarios, AccessLog, PipelineError, Stage, SweepOptions,
    DEFAULT_KS,
};
use probekit::prompt::builtin_templates;
use probekit::{
    CacheHandle, ExperimentData, ExperimentSpec, LabelPolicy, LogRegOptions, Mode, ProviderSpec,
    SweepGrid, Split, SyntheticConfig,
};

fn synth(sigma: f64) -> ProviderSpec {
    ProviderSpec::synthetic(
        "synthetic-64",
        SyntheticConfig {
            dim: 64,
            noise_sigma: sigma,
            ..SyntheticConfig::default()
        },
    )
}

fn spec(mode: Mode, k: usize, sigma: f64) -> ExperimentSpec {
    ExperimentSpec {
        provider: synth(sigma),
        template: builtin_templates()[0].clone(),
        mode,
        k,
        seed: 3,
        eval_split: Split::Test,
        labels: LabelPolicy::Balanced,
        probe: LogRegOptions::default(),
    }
}

#[test]
fn fit_matrix_has_two_rows_per_pair_in_single_mode_and_one_in_paired() {
    let data = ExperimentData::synthetic(40, 10, 1);
    let cache = CacheHandle::in_memory();
    let (train, _) = label_splits(&data, Split::Test, 1, LabelPolicy::Balanced).unwrap();
    let h = embed_scenarios(&synth(0.1), &builtin_templates()[0], &scenarios_of(&data.train), &cache).unwrap();
    assert_eq!(reducer_fit_matrix(Mode::Single, &train, &h).unwrap().nrows(), 80);
    assert_eq!(reducer_fit_matrix(Mode::Paired, &train, &h).unwrap().nrows(), 40);
}

#[test]
fn fitting_never_reads_eval_activations() {
    let data = ExperimentData::synthetic(30, 30, 2);
    let cache = CacheHandle::in_memory();
    let t = &builtin_templates()[1];
    let mut all = scenarios_of(&data.train);
    all.extend(scenarios_of(&data.test));
    let h = embed_scenarios(&synth(0.2), t, &all, &cache).unwrap();
    let (train, _) = label_splits(&data, Split::Test, 2, LabelPolicy::Balanced).unwrap();
    let eval_texts: Vec<String> = scenarios_of(&data.test).iter().map(|s| s.text().to_string()).collect();
    for mode in [Mode::Single, Mode::Paired] {
        let log = AccessLog::new(&h);
        let r = fit_reducer_for_mode(mode, &train, &log, 5).unwrap();
        build_features(mode, &r, &train, &log).unwrap();
        let seen = log.accessed();
        assert!(!seen.is_empty());
        assert!(seen.iter().all(|s| !eval_texts.contains(s)), "{mode} touched eval rows");
    }
}

#[test]
fn paired_features_flip_sign_exactly_under_pair_swap() {
    let data = ExperimentData::synthetic(50, 20, 4);
    let cache = CacheHandle::in_memory();
    let h = embed_scenarios(&synth(0.5), &builtin_templates()[2], &scenarios_of(&data.train), &cache).unwrap();
    let (train, _) = label_splits(&data, Split::Test, 4, LabelPolicy::Balanced).unwrap();
    let swapped = train.swapped();
    for mode in [Mode::Single, Mode::Paired] {
        let r = fit_reducer_for_mode(mode, &train, &h, 7).unwrap();
        let a = build_features(mode, &r, &train, &h).unwrap();
        let b = build_features(mode, &r, &swapped, &h).unwrap();
        for (x, y) in a.phi.iter().zip(b.phi.iter()) {
            assert_eq!(x.to_bits(), (-y).to_bits(), "{mode}");
        }
        for (l, m) in a.labels.iter().zip(&b.labels) {
            assert_eq!(l + m, 1);
        }
    }
}

#[test]
fn reducer_fit_on_other_mode_is_rejected() {
    let data = ExperimentData::synthetic(20, 5, 0);
    let cache = CacheHandle::in_memory();
    let h = embed_scenarios(&synth(0.1), &builtin_templates()[0], &scenarios_of(&data.train), &cache).unwrap();
    let (train, _) = label_splits(&data, Split::Test, 0, LabelPolicy::Balanced).unwrap();
    let r = fit_reducer_for_mode(Mode::Single, &train, &h, 2).unwrap();
    assert!(matches!(
        build_features(Mode::Paired, &r, &train, &h),
        Err(PipelineError::ModeMismatch { .. })
    ));
}

#[test]
fn noiseless_synthetic_is_perfectly_separable_at_k1() {
    let data = ExperimentData::synthetic(200, 100, 5);
    let cache = CacheHandle::in_memory();
    for mode in [Mode::Single, Mode::Paired] {
        let out = run_experiment(&spec(mode, 1, 0.0), &data, &cache).unwrap();
        assert_eq!(out.result.eval_accuracy, 1.0, "{mode}");
        assert_eq!(out.result.k_effective, 1);
    }
}

#[test]
fn runs_are_deterministic() {
    let data = ExperimentData::synthetic(100, 50, 6);
    let a = run_experiment(&spec(Mode::Paired, 10, 1.0), &data, &CacheHandle::in_memory()).unwrap();
    let b = run_experiment(&spec(Mode::Paired, 10, 1.0), &data, &CacheHandle::in_memory()).unwrap();
    assert_eq!(a.artifact.to_text(), b.artifact.to_text());
    assert_eq!(a.result.eval_accuracy.to_bits(), b.result.eval_accuracy.to_bits());
}

#[test]
fn invalid_k_is_a_user_error() {
    let data = ExperimentData::synthetic(10, 5, 0);
    let err = run_experiment(&spec(Mode::Single, 0, 0.0), &data, &CacheHandle::in_memory()).unwrap_err();
    assert!(!err.is_provider_or_io());
}

fn grid(providers: Vec<ProviderSpec>) -> SweepGrid {
    let mut g = SweepGrid::new(providers, builtin_templates());
    g.ks = DEFAULT_KS.to_vec();
    g.seed = 11;
    g
}

#[test]
fn sweep_covers_the_full_grid_in_order() {
    let data = ExperimentData::synthetic(60, 30, 7);
    let g = grid(vec![synth(0.5), ProviderSpec::synthetic("synthetic-b", SyntheticConfig { dim: 32, noise_sigma: 1.0, ..SyntheticConfig::default() })]);
    let rt = run_sweep(&g, &data, &CacheHandle::in_memory(), SweepOptions::default()).unwrap();
    assert_eq!(rt.len(), 2 * 5 * 2 * 4);
    assert_eq!(rt.error_count(), 0);
    let coords: Vec<_> = rt.records.iter().map(|r| r.coordinates()).collect();
    let mut sorted = coords.clone();
    sorted.sort_by_key(|c| {
        (
            g.providers.iter().position(|p| p.model_id == c.0),
            g.templates.iter().position(|t| t.id == c.1),
            c.2,
            c.3,
        )
    });
    assert_eq!(coords, sorted);
    assert!(rt.records.iter().all(|r| r.wall_time_s.is_none()));
}

#[test]
fn sweep_matches_single_runs() {
    let data = ExperimentData::synthetic(60, 30, 8);
    let mut g = grid(vec![synth(0.7)]);
    g.templates.truncate(1);
    g.modes = vec![Mode::Paired];
    g.ks = vec![1, 5];
    let rt = run_sweep(&g, &data, &CacheHandle::in_memory(), SweepOptions::default()).unwrap();
    for r in &rt.records {
        let mut s = spec(Mode::Paired, r.k, 0.7);
        s.seed = cell_seed(11, &r.model_id, &r.template_id, Mode::Paired);
        let single = run_experiment(&s, &data, &CacheHandle::in_memory()).unwrap();
        assert_eq!(r.eval_accuracy, Some(single.result.eval_accuracy));
    }
}

#[test]
fn sweep_result_does_not_depend_on_scheduling() {
    let data = ExperimentData::synthetic(60, 30, 9);
    let g = grid(vec![synth(0.5)]);
    let serial = run_sweep(&g, &data, &CacheHandle::in_memory(), SweepOptions::default()).unwrap();
    let parallel = run_sweep(
        &g,
        &data,
        &CacheHandle::in_memory(),
        SweepOptions { max_parallel: 4, record_timing: false },
    )
    .unwrap();
    assert_eq!(serial, parallel);

    // Reversing the grid axes reorders the work but not the per-cell outcome.
    let mut rev = g.clone();
    rev.templates.reverse();
    rev.modes.reverse();
    rev.ks.reverse();
    let reversed = run_sweep(&rev, &data, &CacheHandle::in_memory(), SweepOptions::default()).unwrap();
    let mut a = serial.records.clone();
    let mut b = reversed.records;
    a.sort_by_key(|r| r.coordinates());
    b.sort_by_key(|r| r.coordinates());
    assert_eq!(a, b);
}

#[test]
fn unreachable_provider_yields_error_cells_and_the_rest_completes() {
    let data = ExperimentData::synthetic(30, 10, 10);
    let remote = ProviderSpec::remote(
        "unreachable-model",
        Some(8),
        RemoteConfig {
            endpoint: "http://127.0.0.1:1/v1/embeddings".into(),
            max_retries: 0,
            backoff_ms: 1,
            timeout_s: 2,
            api_key_env: "PROBEKIT_TEST_NO_SUCH_KEY".into(),
            ..RemoteConfig::default()
        },
    )
    .unwrap();
    let mut g = grid(vec![remote, synth(0.5)]);
    g.templates.truncate(2);
    g.ks = vec![1, 2];
    let rt = run_sweep(&g, &data, &CacheHandle::in_memory(), SweepOptions::default()).unwrap();
    assert_eq!(rt.len(), 2 * 2 * 2 * 2);
    for r in &rt.records {
        if r.model_id == "unreachable-model" {
            assert!(r.is_error());
            assert_eq!(r.error_stage.as_deref(), Some(Stage::Embed.to_string().as_str()));
        } else {
            assert!(!r.is_error(), "{:?}", r.error);
        }
    }
}

#[test]
fn empty_grid_is_rejected() {
    let data = ExperimentData::synthetic(10, 5, 0);
    let mut g = grid(vec![synth(0.1)]);
    g.modes.clear();
    assert!(matches!(
        run_sweep(&g, &data, &CacheHandle::in_memory(), SweepOptions::default()),
        Err(PipelineError::EmptyGrid(_))
    ));
}

#[test]
fn timing_is_recorded_only_on_request() {
    let data = ExperimentData::synthetic(20, 10, 0);
    let mut g = grid(vec![synth(0.1)]);
    g.templates.truncate(1);
    g.ks = vec![1];
    let rt = run_sweep(&g, &data, &CacheHandle::in_memory(), SweepOptions { max_parallel: 1, record_timing: true }).unwrap();
    assert!(rt.records.iter().all(|r| r.wall_time_s.is_some()));
}

#[test]
fn result_table_round_trips_through_jsonl() {
    let data = ExperimentData::synthetic(30, 10, 12);
    let mut g = grid(vec![synth(0.4)]);
    g.templates.truncate(2);
    let rt = run_sweep(&g, &data, &CacheHandle::in_memory(), SweepOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.jsonl");
    rt.save(&path).unwrap();
    assert_eq!(probekit::ResultTable::load(&path).unwrap(), rt);
}
