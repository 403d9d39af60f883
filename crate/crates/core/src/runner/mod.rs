//! Experiment runner: configuration, execution, persistence and benchmarking.
//!
//! A run directory holds `metrics.csv`, `events.jsonl`, `summary.json` and
//! versioned model snapshots under `snapshots/`. Optional extras are the
//! cluster stream (`stream.jsonl`) and the applied samples (`samples.jsonl`).

mod artifacts;
mod bench;
mod config;

use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::detectors::{decide, DynamicModel, LabeledSample, Provenance, StaticDetector};
use crate::error::{Error, Result};
use crate::metrics::{self, hindsight_optimum, MetricsLog};
use crate::pipeline::{replay_samples, Mode, Pipeline};
use crate::simulator::{
    eval_set, Class, ClassModel, ClusterSource, FeatureCluster, StreamDump, StreamReplay, World,
};
use crate::streams::{substream, Substream};

pub use artifacts::{
    read_events, read_metrics_csv, summary_from_artifacts, write_metrics_csv, Event, EventLog,
    HindsightRecord, MetricsRow, RunStatus, SampleCounts, Snapshot, Summary, METRICS_HEADER,
    SNAPSHOT_VERSION,
};
pub use bench::{bench, BenchReport, ScaleTiming};
pub use config::{
    MetricsConfig, OutputConfig, Overrides, RunConfig, SeedingConfig, OUTPUT_ROOT_ENV,
};

/// Paths and in-memory results of a finished (or failed) run.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub metrics_csv: PathBuf,
    pub events_jsonl: PathBuf,
    pub summary_json: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub summary: Summary,
    pub log: MetricsLog<f64>,
    pub rows: Vec<MetricsRow>,
    pub model: DynamicModel<f64>,
    pub samples: Vec<LabeledSample<f64>>,
}

impl RunArtifacts {
    pub fn completed(&self) -> bool {
        self.summary.status == RunStatus::Completed
    }

    pub fn final_snapshot(&self) -> Option<&PathBuf> {
        self.snapshots.last()
    }
}

/// Loads, overrides and runs a config file.
pub fn run_experiment_file(path: &Path, overrides: &Overrides) -> Result<RunArtifacts> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply(overrides);
    run_experiment(&cfg)
}

/// Runs the simulator-driven pipeline over the configured horizon.
///
/// Validation errors return `Err` before anything is written. A failure
/// during the run still returns `Ok`, with the partial artifacts on disk and
/// `summary.status == Failed`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunArtifacts> {
    cfg.check()?;
    let world = World::new(cfg.world.clone())?;
    execute(cfg, world)
}

/// Runs the pipeline on a recorded stream dump; the dump's world config
/// replaces the one in `cfg`.
pub fn replay_stream(cfg: &RunConfig, stream: &Path) -> Result<RunArtifacts> {
    let source = StreamReplay::open(stream)?;
    let mut cfg = cfg.clone();
    cfg.world = source.world().clone();
    cfg.output.dump_stream = false;
    cfg.check()?;
    execute(&cfg, source)
}

/// Independent runs for each seed in `seeds`, in parallel, each in
/// `<output_dir>/seed_<n>`.
pub fn run_sweep(cfg: &RunConfig, seeds: Range<u64>) -> Vec<(u64, Result<RunArtifacts>)> {
    let root = cfg.output_dir();
    seeds
        .into_par_iter()
        .map(|seed| {
            let mut c = cfg.clone();
            c.world.seed = seed;
            c.output_dir = Some(root.join(format!("seed_{seed}")));
            (seed, run_experiment(&c))
        })
        .collect()
}

/// Parses `a..b` (exclusive) or `a..=b`.
pub fn parse_seed_range(s: &str) -> Result<Range<u64>> {
    let bad = || {
        Error::Parse(format!(
            "seed range must look like a..b or a..=b, got {s:?}"
        ))
    };
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let range = match b.strip_prefix('=') {
        Some(b) => a..b.trim().parse::<u64>().map_err(|_| bad())? + 1,
        None => a..b.trim().parse().map_err(|_| bad())?,
    };
    if range.is_empty() {
        return Err(Error::InvalidArgument(format!("seed range {s:?} is empty")));
    }
    Ok(range)
}

/// Fraction of the evaluation set the static detector classifies correctly,
/// drawn on its own substream so the run's detector stream is untouched.
pub fn static_eval_accuracy(cfg: &RunConfig, eval: &[LabeledSample<f64>]) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    let det =
        StaticDetector::on_stream(cfg.static_detector, cfg.seed(), Substream::StaticEvaluation)?;
    let correct = eval
        .iter()
        .enumerate()
        .filter(|(i, s)| {
            let truth = if s.y == 1 {
                Class::Human
            } else {
                Class::Clutter
            };
            decide(det.confidence_at::<f64>(truth, *i as u64)) == s.y
        })
        .count();
    Ok(correct as f64 / eval.len() as f64)
}

/// Human-labeled samples for framework A: positives first, then negatives.
pub fn seed_samples(cfg: &RunConfig) -> Result<Vec<LabeledSample<f64>>> {
    let classes = ClassModel::new(&cfg.world);
    let mut rng = substream(cfg.seed(), Substream::Seeds);
    let plan = std::iter::repeat_n(Class::Human, cfg.seeding.positives)
        .chain(std::iter::repeat_n(Class::Clutter, cfg.seeding.negatives));
    plan.map(|class| {
        LabeledSample::new(
            classes.draw(class, &mut rng),
            class.label(),
            1.0,
            Provenance::Seed,
            0,
        )
    })
    .collect()
}

/// Accuracy of a snapshot on the config's evaluation set.
pub fn evaluate_snapshot(snapshot: &Path, cfg: &RunConfig) -> Result<f64> {
    cfg.check()?;
    let snap = Snapshot::load(snapshot)?;
    if snap.f != cfg.world.feature_dim {
        return Err(Error::Shape {
            expected: cfg.world.feature_dim,
            got: snap.f,
        });
    }
    let eval = eval_set::<f64>(&cfg.world, cfg.metrics.eval_set_size)?;
    metrics::accuracy(&snap.model(), &eval)
}

/// Rebuilds a model by feeding a `samples.jsonl` file through a fresh learner.
pub fn replay_sample_log(path: &Path, f: usize, lr0: f64) -> Result<DynamicModel<f64>> {
    let samples = read_sample_log(path)?;
    replay_samples(f, lr0, &samples)
}

pub fn read_sample_log(path: &Path) -> Result<Vec<LabeledSample<f64>>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

struct Recorder {
    dir: PathBuf,
    events: EventLog,
    samples: Option<std::io::BufWriter<std::fs::File>>,
    stream: Option<StreamDump<std::io::BufWriter<std::fs::File>>>,
    snapshots: Vec<PathBuf>,
    seed: u64,
}

impl Recorder {
    fn snapshot(&mut self, model: &DynamicModel<f64>, frame: u64) -> Result<()> {
        let path = artifacts::snapshot_path(&self.dir, frame);
        Snapshot::of(model, self.seed, frame).save(&path)?;
        self.events.write(&Event::Snapshot {
            frame,
            path: artifacts::relative(&self.dir, &path),
        })?;
        self.snapshots.push(path);
        Ok(())
    }

    fn samples(&mut self, samples: &[LabeledSample<f64>]) -> Result<()> {
        if let Some(out) = &mut self.samples {
            for s in samples {
                serde_json::to_writer(&mut *out, s)?;
                out.write_all(b"\n")?;
            }
        }
        Ok(())
    }
}

struct Progress {
    log: MetricsLog<f64>,
    static_acc: f64,
    frames: u64,
}

fn execute<S: ClusterSource<f64>>(cfg: &RunConfig, mut source: S) -> Result<RunArtifacts> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(dir.join("snapshots"))?;
    let seed = cfg.seed();
    let eval = eval_set::<f64>(&cfg.world, cfg.metrics.eval_set_size)?;
    let static_acc = static_eval_accuracy(cfg, &eval)?;

    let mut rec = Recorder {
        events: EventLog::create(&dir.join("events.jsonl"))?,
        samples: if cfg.output.record_samples {
            Some(std::io::BufWriter::new(std::fs::File::create(
                dir.join("samples.jsonl"),
            )?))
        } else {
            None
        },
        stream: if cfg.output.dump_stream {
            Some(StreamDump::create(&dir.join("stream.jsonl"), &cfg.world)?)
        } else {
            None
        },
        snapshots: Vec::new(),
        dir: dir.clone(),
        seed,
    };
    rec.events.write(&Event::Config {
        seed,
        config: Box::new(cfg.clone()),
        static_eval_accuracy: static_acc,
    })?;

    let f = cfg.world.feature_dim;
    let mut pipeline = match cfg.mode {
        Mode::FrameworkA => {
            let mut p = Pipeline::framework_a(
                f,
                cfg.tracker.clone(),
                cfg.experts.clone(),
                cfg.learner.clone(),
            )?;
            p.seed_supervision(seed_samples(cfg)?)?;
            rec.samples(p.sample_log())?;
            rec.events.write(&Event::Seed {
                samples: SampleCounts::tally(p.sample_log()),
            })?;
            p
        }
        Mode::FrameworkB => Pipeline::framework_b(
            f,
            cfg.tracker.clone(),
            cfg.learner.clone(),
            StaticDetector::new(cfg.static_detector, seed)?,
        )?,
    };

    let mut progress = Progress {
        log: MetricsLog::new(eval.len(), static_acc),
        static_acc,
        frames: 0,
    };
    let outcome = drive(
        cfg,
        &mut source,
        &mut pipeline,
        &eval,
        &mut rec,
        &mut progress,
    );
    let failure = outcome.err().map(|e| (progress.frames + 1, e.to_string()));
    if let Some((frame, message)) = &failure {
        rec.events.write(&Event::Failure {
            frame: *frame,
            message: message.clone(),
        })?;
    }
    finish(cfg, &pipeline, &eval, rec, progress, failure)
}

/// The frame loop; on error `progress` holds everything completed so far.
fn drive<S: ClusterSource<f64>>(
    cfg: &RunConfig,
    source: &mut S,
    pipeline: &mut Pipeline<f64>,
    eval: &[LabeledSample<f64>],
    rec: &mut Recorder,
    progress: &mut Progress,
) -> Result<()> {
    let dt = cfg.world.dt;
    let horizon = cfg.world.frames;
    while progress.frames < horizon {
        let Some(clusters): Option<Vec<FeatureCluster<f64>>> = source.next_frame()? else {
            break;
        };
        if let Some(dump) = &mut rec.stream {
            dump.write_frame(pipeline.frame() + 1, &clusters)?;
        }
        let out = pipeline.step(&clusters, dt)?;
        let frame = out.frame;
        progress.frames = frame;
        for e in &out.track_events {
            rec.events.write(&Event::Track {
                kind: e.kind,
                track_id: e.track_id,
                frame: e.frame,
            })?;
        }
        if cfg.output.frame_records || !out.new_samples.is_empty() {
            let full = cfg.output.frame_records;
            rec.events.write(&Event::Frame {
                frame,
                clusters: clusters.len(),
                predictions: if full { out.predictions } else { Vec::new() },
                static_outputs: if full { out.static_outputs } else { Vec::new() },
                samples: SampleCounts::tally(&out.new_samples),
            })?;
        }
        rec.samples(&out.new_samples)?;
        if frame % cfg.metrics.eval_every == 0 {
            evaluate(pipeline, eval, progress, frame)?;
        }
        if frame % cfg.snapshot_every == 0 {
            rec.snapshot(pipeline.model(), frame)?;
        }
    }
    Ok(())
}

fn evaluate(
    pipeline: &Pipeline<f64>,
    eval: &[LabeledSample<f64>],
    progress: &mut Progress,
    frame: u64,
) -> Result<()> {
    let u = metrics::correct_predictions(pipeline.model(), eval)?;
    let loss = pipeline.sample_losses().iter().sum();
    progress.log.push(frame, u, loss)
}

fn finish(
    cfg: &RunConfig,
    pipeline: &Pipeline<f64>,
    eval: &[LabeledSample<f64>],
    mut rec: Recorder,
    mut progress: Progress,
    failure: Option<(u64, String)>,
) -> Result<RunArtifacts> {
    let dir = rec.dir.clone();
    let last = progress.frames;
    if progress.log.records.last().is_none_or(|r| r.t < last) {
        // final evaluation; with no processed frame it is the step-0 state
        evaluate(pipeline, eval, &mut progress, last)?;
    }
    if failure.is_none()
        && rec
            .snapshots
            .last()
            .is_none_or(|p| *p != artifacts::snapshot_path(&dir, last))
    {
        rec.snapshot(pipeline.model(), last)?;
    }

    let samples = pipeline.sample_log().to_vec();
    progress.log.sample_losses = pipeline.sample_losses().to_vec();
    let hindsight = if samples.is_empty() {
        None
    } else {
        let opt = hindsight_optimum(&samples)?;
        let rec_h = HindsightRecord {
            samples: samples.len(),
            training_loss: opt.training_loss,
            converged: opt.converged,
            iterations: opt.iterations,
            gradient_norm: opt.gradient_norm,
            eval_accuracy: metrics::accuracy(&opt.model(cfg.learner.lr0), eval)?,
        };
        rec.events.write(&Event::Hindsight(rec_h.clone()))?;
        Some(rec_h)
    };
    let hindsight_acc = hindsight.as_ref().map(|h| h.eval_accuracy);
    progress.log.baseline_accuracy =
        artifacts::baseline(cfg.mode, progress.static_acc, hindsight_acc);

    let rows = metric_rows(cfg, &progress.log, progress.static_acc)?;
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;

    let last_row = rows.last().ok_or(Error::EmptyInput("evaluation records"))?;
    let window = cfg.metrics.window;
    let log = &progress.log;
    let hindsight_loss = hindsight.as_ref().map(|h| h.training_loss);
    let summary = Summary {
        status: if failure.is_some() {
            RunStatus::Failed
        } else {
            RunStatus::Completed
        },
        error: failure.as_ref().map(|(_, m)| m.clone()),
        mode: cfg.mode,
        seed: cfg.seed(),
        frames: last,
        samples: SampleCounts::tally(&samples),
        final_step: last_row.step,
        final_u: last_row.u,
        dyn_eval_accuracy: last_row.dyn_eval_accuracy,
        static_eval_accuracy: progress.static_acc,
        hindsight_eval_accuracy: hindsight_acc,
        baseline_accuracy: log.baseline_accuracy,
        cum_online_loss: last_row.cum_online_loss,
        hindsight_loss,
        regret: hindsight_loss.map(|h| last_row.cum_online_loss - h),
        stability_rate: last_row.stability_rate,
        windowed_stability_rate: metrics::windowed_stability_rate(log, window).ok(),
        converged: last_row.converged_flag == 1,
        converged_step: rows.iter().find(|r| r.converged_flag == 1).map(|r| r.step),
        snapshots: rec
            .snapshots
            .iter()
            .map(|p| artifacts::relative(&dir, p))
            .collect(),
    };
    rec.events
        .write(&Event::Summary(Box::new(summary.clone())))?;
    rec.events.finish()?;
    if let Some(out) = rec.samples.as_mut() {
        out.flush()?;
    }
    if let Some(dump) = rec.stream.take() {
        dump.finish()?;
    }
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(dir.join("summary.json"), text)?;

    Ok(RunArtifacts {
        metrics_csv: dir.join("metrics.csv"),
        events_jsonl: dir.join("events.jsonl"),
        summary_json: dir.join("summary.json"),
        snapshots: rec.snapshots,
        dir,
        summary,
        log: progress.log,
        rows,
        model: pipeline.model().clone(),
        samples,
    })
}

/// One CSV row per evaluation record. Stability rates are cumulative; the
/// convergence flag applies the windowed test to the records so far.
fn metric_rows(cfg: &RunConfig, log: &MetricsLog<f64>, static_acc: f64) -> Result<Vec<MetricsRow>> {
    let m = &cfg.metrics;
    let mut rows = Vec::with_capacity(log.records.len());
    let mut variation = 0usize;
    for (i, r) in log.records.iter().enumerate() {
        if i > 0 {
            variation += log.records[i - 1].u.abs_diff(r.u);
        }
        let converged = if i + 1 >= m.window {
            let prefix = MetricsLog {
                records: log.records[..=i].to_vec(),
                sample_losses: Vec::new(),
                ..MetricsLog::new(log.eval_set_size, log.baseline_accuracy)
            };
            metrics::converged(&prefix, m.window, m.tau, m.delta)?
        } else {
            false
        };
        rows.push(MetricsRow {
            step: r.t,
            u: r.u,
            eval_accuracy: r.eval_accuracy,
            stability_rate: variation as f64 / (i + 1) as f64,
            cum_online_loss: r.online_loss,
            dyn_eval_accuracy: r.eval_accuracy,
            static_eval_accuracy: static_acc,
            converged_flag: u8::from(converged),
        });
    }
    Ok(rows)
}
