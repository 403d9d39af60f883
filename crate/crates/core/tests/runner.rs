use std::fs;
use std::path::{Path, PathBuf};

use trackteach::pipeline::Mode;
use trackteach::runner::{
    self, read_events, read_metrics_csv, summary_from_artifacts, Event, Overrides, RunConfig,
    RunStatus, Snapshot, METRICS_HEADER,
};
use trackteach::Error;

fn small(dir: &Path, mode: Mode) -> RunConfig {
    let mut cfg = RunConfig {
        mode,
        output_dir: Some(dir.to_path_buf()),
        snapshot_every: 200,
        ..RunConfig::default()
    };
    cfg.world.frames = 600;
    cfg.world.seed = 9;
    cfg.metrics.eval_set_size = 200;
    cfg
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn artifacts_have_the_fixed_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let a = runner::run_experiment(&small(tmp.path(), Mode::FrameworkB)).unwrap();
    assert!(a.completed());
    let csv = fs::read_to_string(&a.metrics_csv).unwrap();
    assert_eq!(csv.lines().next().unwrap(), METRICS_HEADER);
    assert_eq!(
        METRICS_HEADER,
        "step,u,eval_accuracy,stability_rate,cum_online_loss,dyn_eval_accuracy,static_eval_accuracy,converged_flag"
    );
    let rows = read_metrics_csv(&a.metrics_csv).unwrap();
    assert_eq!(rows, a.rows);
    assert_eq!(rows.last().unwrap().step, 600);

    let events = read_events(&a.events_jsonl).unwrap();
    assert!(matches!(events.first(), Some(Event::Config { .. })));
    assert!(matches!(events.last(), Some(Event::Summary(_))));
    let frames = events
        .iter()
        .filter(|e| matches!(e, Event::Frame { .. }))
        .count();
    assert_eq!(frames, 600);

    let snaps: Vec<_> = a
        .snapshots
        .iter()
        .map(|p| p.file_name().unwrap().to_owned())
        .collect();
    assert_eq!(
        snaps,
        [
            "frame_00000200.json",
            "frame_00000400.json",
            "frame_00000600.json"
        ]
    );
    assert!(a.summary_json.exists());
}

#[test]
fn identical_config_gives_identical_bytes() {
    let (t1, t2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for mode in [Mode::FrameworkA, Mode::FrameworkB] {
        let a = runner::run_experiment(&small(t1.path(), mode)).unwrap();
        let b = runner::run_experiment(&small(t2.path(), mode)).unwrap();
        assert_eq!(
            fs::read(&a.metrics_csv).unwrap(),
            fs::read(&b.metrics_csv).unwrap()
        );
        assert_eq!(
            fs::read(a.final_snapshot().unwrap()).unwrap(),
            fs::read(b.final_snapshot().unwrap()).unwrap()
        );
        assert_eq!(a.samples, b.samples);
    }
}

#[test]
fn summary_is_recomputable_from_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in [Mode::FrameworkA, Mode::FrameworkB] {
        let a = runner::run_experiment(&small(tmp.path(), mode)).unwrap();
        let on_disk: runner::Summary =
            serde_json::from_str(&fs::read_to_string(&a.summary_json).unwrap()).unwrap();
        assert_eq!(on_disk, a.summary);
        assert_eq!(summary_from_artifacts(&a.dir).unwrap(), a.summary);
        let regret = a.summary.regret.unwrap();
        assert!(
            (regret - (a.summary.cum_online_loss - a.summary.hindsight_loss.unwrap())).abs() < 1e-9
        );
    }
}

#[test]
fn snapshot_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(tmp.path(), Mode::FrameworkB);
    let a = runner::run_experiment(&cfg).unwrap();
    let last = a.rows.last().unwrap();
    assert_eq!(
        runner::evaluate_snapshot(a.final_snapshot().unwrap(), &cfg).unwrap(),
        last.dyn_eval_accuracy
    );

    let zero = tmp.path().join("zero.json");
    Snapshot::zero(cfg.world.feature_dim, cfg.seed())
        .save(&zero)
        .unwrap();
    // p = 0.5 everywhere decides "human", so accuracy is the human share
    let acc = runner::evaluate_snapshot(&zero, &cfg).unwrap();
    assert!((acc - 0.5).abs() < 0.1, "zero model accuracy {acc}");

    let narrow = tmp.path().join("narrow.json");
    Snapshot::zero(cfg.world.feature_dim + 1, cfg.seed())
        .save(&narrow)
        .unwrap();
    assert!(matches!(
        runner::evaluate_snapshot(&narrow, &cfg),
        Err(Error::Shape { .. })
    ));

    let future = tmp.path().join("future.json");
    let text = fs::read_to_string(&zero)
        .unwrap()
        .replacen("\"version\": 1", "\"version\": 99", 1);
    fs::write(&future, text).unwrap();
    assert!(matches!(Snapshot::load(&future), Err(Error::Version(99))));
}

#[test]
fn invalid_configs_are_rejected_with_field_names() {
    let mut cfg = RunConfig::default();
    cfg.world.frames = 0;
    cfg.learner.lr0 = -1.0;
    match runner::bench(&cfg) {
        Err(Error::Validation(errs)) => {
            assert!(errs.iter().any(|e| e.contains("frames")), "{errs:?}");
            assert!(errs.iter().any(|e| e.contains("lr0")), "{errs:?}");
        }
        other => panic!("expected validation error, got {other:?}"),
    }
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), Mode::FrameworkB);
    cfg.world.frames = 0;
    assert!(matches!(
        runner::run_experiment(&cfg),
        Err(Error::Validation(_))
    ));
    assert!(
        files_under(tmp.path()).is_empty(),
        "nothing is written for an invalid config"
    );
    assert!(RunConfig::from_toml("[world]\nframse = 3\n").is_err());
}

#[test]
fn sample_log_replays_to_the_final_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    for mode in [Mode::FrameworkA, Mode::FrameworkB] {
        let mut cfg = small(tmp.path(), mode);
        cfg.output.record_samples = true;
        let a = runner::run_experiment(&cfg).unwrap();
        let model = runner::replay_sample_log(
            &a.dir.join("samples.jsonl"),
            cfg.world.feature_dim,
            cfg.learner.lr0,
        )
        .unwrap();
        let snap = Snapshot::load(a.final_snapshot().unwrap()).unwrap();
        assert_eq!(model.updates, snap.updates);
        assert!(model
            .weights
            .iter()
            .zip(&snap.weights)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(model.bias.to_bits(), snap.bias.to_bits());
    }
}

#[test]
fn writes_stay_inside_the_output_dir() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("inner");
    let mut cfg = small(&dir, Mode::FrameworkA);
    cfg.output.record_samples = true;
    cfg.output.dump_stream = true;
    runner::run_experiment(&cfg).unwrap();
    let all = files_under(tmp.path());
    assert!(!all.is_empty());
    assert!(all.iter().all(|p| p.starts_with(&dir)), "{all:?}");
}

#[test]
fn stream_replay_matches_and_corruption_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(&tmp.path().join("live"), Mode::FrameworkB);
    cfg.output.dump_stream = true;
    let live = runner::run_experiment(&cfg).unwrap();
    let stream = live.dir.join("stream.jsonl");

    let mut again = cfg.clone();
    again.output_dir = Some(tmp.path().join("replayed"));
    let replayed = runner::replay_stream(&again, &stream).unwrap();
    assert_eq!(
        fs::read(&live.metrics_csv).unwrap(),
        fs::read(&replayed.metrics_csv).unwrap()
    );

    // line 0 is the header; break the record for frame 300
    let text = fs::read_to_string(&stream).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[300] = "{\"frame\": 300, \"clusters\": [tru";
    let broken = tmp.path().join("broken.jsonl");
    fs::write(&broken, lines.join("\n")).unwrap();

    let mut bad = cfg.clone();
    bad.output_dir = Some(tmp.path().join("broken"));
    let failed = runner::replay_stream(&bad, &broken).unwrap();
    assert_eq!(failed.summary.status, RunStatus::Failed);
    assert!(failed.summary.error.is_some());
    assert_eq!(failed.summary.frames, 299);
    let events = read_events(&failed.events_jsonl).unwrap();
    assert!(events
        .iter()
        .any(|e| matches!(e, Event::Failure { frame: 300, .. })));
    let rows = read_metrics_csv(&failed.metrics_csv).unwrap();
    assert!(rows.iter().all(|r| r.step <= 299));
    assert_eq!(summary_from_artifacts(&failed.dir).unwrap(), failed.summary);
}

#[test]
fn flags_override_file_override_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("exp.toml");
    fs::write(
        &path,
        "mode = \"framework_a\"\n[world]\nseed = 3\nframes = 50\n[metrics]\neval_every = 10\n",
    )
    .unwrap();
    let mut cfg = RunConfig::load(&path).unwrap();
    assert_eq!(
        (cfg.mode, cfg.seed(), cfg.world.frames),
        (Mode::FrameworkA, 3, 50)
    );
    assert_eq!(cfg.metrics.eval_every, 10);
    assert_eq!(
        cfg.metrics.eval_set_size,
        RunConfig::default().metrics.eval_set_size
    );
    assert!(cfg.output_dir().ends_with("exp"));

    cfg.apply(&Overrides {
        seed: Some(8),
        mode: Some(Mode::FrameworkB),
        output_dir: Some(tmp.path().join("out")),
        frames: None,
    });
    assert_eq!(
        (cfg.mode, cfg.seed(), cfg.world.frames),
        (Mode::FrameworkB, 8, 50)
    );
    assert_eq!(cfg.output_dir(), tmp.path().join("out"));

    let round = RunConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(round, cfg);
}

#[test]
fn seed_sweep_writes_one_directory_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(tmp.path(), Mode::FrameworkB);
    cfg.world.frames = 200;
    let range = runner::parse_seed_range("4..=6").unwrap();
    assert_eq!(range, 4..7);
    let results = runner::run_sweep(&cfg, range);
    assert_eq!(results.len(), 3);
    for (seed, r) in results {
        let a = r.unwrap();
        assert_eq!(a.dir, tmp.path().join(format!("seed_{seed}")));
        assert_eq!(a.summary.seed, seed);
    }
    assert!(runner::parse_seed_range("5..5").is_err());
    assert!(runner::parse_seed_range("x").is_err());
}
