use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::{DynamicModel, LabeledSample, Provenance};
use crate::error::{Error, Result};
use crate::pipeline::Mode;
use crate::tracker::TrackEventKind;

use super::config::RunConfig;

pub const METRICS_HEADER: &str =
    "step,u,eval_accuracy,stability_rate,cum_online_loss,dyn_eval_accuracy,static_eval_accuracy,converged_flag";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Model parameters at one frame of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub f: usize,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub updates: u64,
    pub lr0: f64,
    pub seed: u64,
    pub frame: u64,
}

impl Snapshot {
    pub fn of(model: &DynamicModel<f64>, seed: u64, frame: u64) -> Self {
        Self {
            version: SNAPSHOT_VERSION,
            f: model.dim(),
            weights: model.weights.clone(),
            bias: model.bias,
            updates: model.updates,
            lr0: model.lr0,
            seed,
            frame,
        }
    }

    pub fn zero(f: usize, seed: u64) -> Self {
        Self::of(&DynamicModel::new(f, 0.5), seed, 0)
    }

    pub fn load(path: &Path) -> Result<Self> {
        // peek at the version before trusting the layout
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let version = raw
            .get("version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Parse(format!("{}: snapshot has no version", path.display())))?;
        if version != u64::from(SNAPSHOT_VERSION) {
            return Err(Error::Version(u32::try_from(version).unwrap_or(u32::MAX)));
        }
        let snap: Self = serde_json::from_value(raw)?;
        if snap.weights.len() != snap.f {
            return Err(Error::Shape {
                expected: snap.f,
                got: snap.weights.len(),
            });
        }
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn model(&self) -> DynamicModel<f64> {
        DynamicModel {
            weights: self.weights.clone(),
            bias: self.bias,
            updates: self.updates,
            lr0: self.lr0,
        }
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub u: usize,
    pub eval_accuracy: f64,
    pub stability_rate: f64,
    pub cum_online_loss: f64,
    pub dyn_eval_accuracy: f64,
    pub static_eval_accuracy: f64,
    pub converged_flag: u8,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    w.write_record(METRICS_HEADER.split(','))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Parse(format!(
            "unexpected metrics header {header:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleCounts {
    pub seed: usize,
    pub p_expert: usize,
    pub n_expert: usize,
    pub fusion: usize,
    pub positive: usize,
    pub negative: usize,
}

impl SampleCounts {
    pub fn tally(samples: &[LabeledSample<f64>]) -> Self {
        let mut c = Self::default();
        for s in samples {
            c.add(s);
        }
        c
    }

    pub fn add(&mut self, s: &LabeledSample<f64>) {
        match s.provenance {
            Provenance::Seed => self.seed += 1,
            Provenance::PExpert => self.p_expert += 1,
            Provenance::NExpert => self.n_expert += 1,
            Provenance::Fusion => self.fusion += 1,
            Provenance::Evaluation => {}
        }
        if s.y == 1 {
            self.positive += 1;
        } else {
            self.negative += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.positive + self.negative
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub mode: Mode,
    pub seed: u64,
    /// Frames processed.
    pub frames: u64,
    pub samples: SampleCounts,
    /// Step of the last evaluation.
    pub final_step: u64,
    pub final_u: usize,
    pub dyn_eval_accuracy: f64,
    pub static_eval_accuracy: f64,
    pub hindsight_eval_accuracy: Option<f64>,
    pub baseline_accuracy: f64,
    pub cum_online_loss: f64,
    pub hindsight_loss: Option<f64>,
    /// `cum_online_loss - hindsight_loss`.
    pub regret: Option<f64>,
    pub stability_rate: f64,
    pub windowed_stability_rate: Option<f64>,
    pub converged: bool,
    /// First evaluation step at which the convergence test held.
    pub converged_step: Option<u64>,
    pub snapshots: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HindsightRecord {
    pub samples: usize,
    pub training_loss: f64,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub eval_accuracy: f64,
}

/// Heterogeneous records of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Config {
        seed: u64,
        config: Box<RunConfig>,
        static_eval_accuracy: f64,
    },
    Seed {
        samples: SampleCounts,
    },
    Frame {
        frame: u64,
        clusters: usize,
        predictions: Vec<f64>,
        static_outputs: Vec<f64>,
        samples: SampleCounts,
    },
    Track {
        kind: TrackEventKind,
        track_id: u64,
        frame: u64,
    },
    Snapshot {
        frame: u64,
        path: String,
    },
    Failure {
        frame: u64,
        message: String,
    },
    Hindsight(HindsightRecord),
    Summary(Box<Summary>),
}

pub struct EventLog {
    out: std::io::BufWriter<std::fs::File>,
}

impl EventLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self {
            out: std::io::BufWriter::new(std::fs::File::create(path)?),
        })
    }

    pub fn write(&mut self, e: &Event) -> Result<()> {
        serde_json::to_writer(&mut self.out, e)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Rebuilds the summary from `metrics.csv` and `events.jsonl`.
pub fn summary_from_artifacts(dir: &Path) -> Result<Summary> {
    let rows = read_metrics_csv(&dir.join("metrics.csv"))?;
    let events = read_events(&dir.join("events.jsonl"))?;
    let last = rows.last().ok_or(Error::EmptyInput("metrics rows"))?;
    let mut cfg = None;
    let mut samples = SampleCounts::default();
    let mut hindsight = None;
    let mut failure = None;
    let mut snapshots = Vec::new();
    for e in &events {
        match e {
            Event::Config { seed, config, .. } => cfg = Some((*seed, config.clone())),
            Event::Seed { samples: s } => samples = merge(samples, s),
            Event::Frame { samples: s, .. } => samples = merge(samples, s),
            Event::Snapshot { path, .. } => snapshots.push(path.clone()),
            Event::Hindsight(h) => hindsight = Some(h.clone()),
            Event::Failure { frame, message } => failure = Some((*frame, message.clone())),
            Event::Track { .. } | Event::Summary(_) => {}
        }
    }
    let (seed, cfg) = cfg.ok_or(Error::EmptyInput("config event"))?;
    // a run that fails at frame k processed k - 1 frames; otherwise the last
    // evaluation always lands on the final frame
    let frames = failure.as_ref().map_or(last.step, |(frame, _)| frame - 1);
    let w = cfg.metrics.window;
    let windowed = (rows.len() >= w).then(|| {
        let tail = &rows[rows.len() - w..];
        windowed_rate(tail.iter().map(|r| r.u), cfg.metrics.eval_set_size)
    });
    let hindsight_eval_accuracy = hindsight.as_ref().map(|h| h.eval_accuracy);
    let hindsight_loss = hindsight.as_ref().map(|h| h.training_loss);
    Ok(Summary {
        status: if failure.is_some() {
            RunStatus::Failed
        } else {
            RunStatus::Completed
        },
        error: failure.map(|(_, m)| m),
        mode: cfg.mode,
        seed,
        frames,
        samples,
        final_step: last.step,
        final_u: last.u,
        dyn_eval_accuracy: last.dyn_eval_accuracy,
        static_eval_accuracy: last.static_eval_accuracy,
        hindsight_eval_accuracy,
        baseline_accuracy: baseline(cfg.mode, last.static_eval_accuracy, hindsight_eval_accuracy),
        cum_online_loss: last.cum_online_loss,
        hindsight_loss,
        regret: hindsight_loss.map(|h| last.cum_online_loss - h),
        stability_rate: last.stability_rate,
        windowed_stability_rate: windowed,
        converged: last.converged_flag == 1,
        converged_step: rows.iter().find(|r| r.converged_flag == 1).map(|r| r.step),
        snapshots,
    })
}

fn merge(mut a: SampleCounts, b: &SampleCounts) -> SampleCounts {
    a.seed += b.seed;
    a.p_expert += b.p_expert;
    a.n_expert += b.n_expert;
    a.fusion += b.fusion;
    a.positive += b.positive;
    a.negative += b.negative;
    a
}

/// Mean `|u_t - u_{t+1}| / n` over consecutive values.
pub(crate) fn windowed_rate(us: impl Iterator<Item = usize>, n: usize) -> f64 {
    let us: Vec<usize> = us.collect();
    if us.len() < 2 {
        return 0.0;
    }
    let total: usize = us.windows(2).map(|w| w[0].abs_diff(w[1])).sum();
    total as f64 / ((us.len() - 1) * n.max(1)) as f64
}

/// Expectation-band center: the static detector in framework B, the
/// hindsight optimum (or chance before any sample) in framework A.
pub(crate) fn baseline(mode: Mode, static_acc: f64, hindsight_acc: Option<f64>) -> f64 {
    match mode {
        Mode::FrameworkB => static_acc,
        Mode::FrameworkA => hindsight_acc.unwrap_or(0.5),
    }
}

pub(crate) fn relative(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

pub(crate) fn snapshot_path(dir: &Path, frame: u64) -> PathBuf {
    dir.join("snapshots").join(format!("frame_{frame:08}.json"))
}
