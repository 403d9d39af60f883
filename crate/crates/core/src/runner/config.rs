use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::detectors::StaticDetectorConfig;
use crate::error::{Error, Result};
use crate::experts::ExpertConfig;
use crate::pipeline::{LearnerConfig, Mode};
use crate::simulator::WorldConfig;
use crate::tracker::TrackerConfig;

/// Environment variable naming the root for run outputs when neither the
/// command line nor the config file sets `output_dir`.
pub const OUTPUT_ROOT_ENV: &str = "TRACKTEACH_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Frames between evaluations on the held-out set.
    pub eval_every: u64,
    pub eval_set_size: usize,
    /// Evaluations in the convergence window.
    pub window: usize,
    /// Tolerated mean change of `u` per evaluation, as a fraction of the set.
    pub tau: f64,
    /// Tolerated accuracy shortfall below the baseline.
    pub delta: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            eval_every: 50,
            eval_set_size: 500,
            window: 40,
            tau: 0.02,
            delta: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedingConfig {
    /// Human-labeled positives applied before frame 1 (framework A).
    pub positives: usize,
    pub negatives: usize,
}

impl Default for SeedingConfig {
    fn default() -> Self {
        Self {
            positives: 1,
            negatives: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Write one `frame` record per frame to the event log.
    pub frame_records: bool,
    /// Write the simulated cluster stream to `stream.jsonl`.
    pub dump_stream: bool,
    /// Write every applied sample to `samples.jsonl`.
    pub record_samples: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            frame_records: true,
            dump_stream: false,
            record_samples: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub output_dir: Option<PathBuf>,
    /// Frames between model snapshots.
    pub snapshot_every: u64,
    pub world: WorldConfig,
    pub tracker: TrackerConfig,
    pub experts: ExpertConfig,
    pub static_detector: StaticDetectorConfig,
    pub learner: LearnerConfig,
    pub metrics: MetricsConfig,
    pub seeding: SeedingConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::FrameworkB,
            output_dir: None,
            snapshot_every: 1000,
            world: WorldConfig::default(),
            tracker: TrackerConfig::default(),
            experts: ExpertConfig::default(),
            static_detector: StaticDetectorConfig::default(),
            learner: LearnerConfig::default(),
            metrics: MetricsConfig::default(),
            seeding: SeedingConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<Mode>,
    pub output_dir: Option<PathBuf>,
    pub frames: Option<u64>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text)?;
        if cfg.output_dir.is_none() {
            let stem = path
                .file_stem()
                .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map_or_else(|| PathBuf::from("runs"), PathBuf::from);
            cfg.output_dir = Some(root.join(stem));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config always serializes")
    }

    /// Flags > file > defaults.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.world.seed = seed;
        }
        if let Some(mode) = o.mode {
            self.mode = mode;
        }
        if let Some(dir) = &o.output_dir {
            self.output_dir = Some(dir.clone());
        }
        if let Some(frames) = o.frames {
            self.world.frames = frames;
        }
    }

    /// The master seed from which every random substream is derived.
    pub fn seed(&self) -> u64 {
        self.world.seed
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUTPUT_ROOT_ENV)
                .map_or_else(|| PathBuf::from("runs"), PathBuf::from)
                .join("run")
        })
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = self.world.validate();
        errs.extend(self.tracker.validate());
        errs.extend(self.experts.validate());
        errs.extend(self.static_detector.validate());
        errs.extend(self.learner.validate());
        let m = &self.metrics;
        if m.eval_every == 0 {
            errs.push("metrics.eval_every must be at least 1".into());
        }
        if m.eval_set_size < 2 {
            errs.push("metrics.eval_set_size must be at least 2".into());
        }
        if m.window == 0 {
            errs.push("metrics.window must be at least 1".into());
        }
        if !(m.tau >= 0.0) || !(m.delta >= 0.0) {
            errs.push("metrics.tau and metrics.delta must be non-negative".into());
        }
        if self.snapshot_every == 0 {
            errs.push("snapshot_every must be at least 1".into());
        }
        if self.mode == Mode::FrameworkA && self.seeding.positives + self.seeding.negatives == 0 {
            errs.push("framework A needs at least one seed sample".into());
        }
        errs
    }

    pub fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}
