//! The two online learning loops.
//!
//! Framework A: every cluster is scored by the dynamic classifier and tracked;
//! the P/N experts inspect finished or long-lived trajectories and feed
//! corrections back into the classifier. It needs seed supervision before
//! the first frame.
//!
//! Framework B: a static teacher detector scores every cluster alongside the
//! dynamic one; per-trajectory teacher confidences are fused into soft labels
//! for the dynamic classifier. No ground truth enters the loop.

use serde::{Deserialize, Serialize};

use crate::detectors::{ClusterRef, DynamicModel, LabeledSample, Provenance, StaticDetector};
use crate::error::{Error, Result};
use crate::experts::{n_expert, p_expert, ExpertConfig};
use crate::fusion::fuse_probabilities;
use crate::metrics::model_loss;
use crate::scalar::Scalar;
use crate::simulator::FeatureCluster;
use crate::tracker::{
    segment_summary, Candidate, Observation, Track, TrackEvent, Tracker, TrackerConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    FrameworkA,
    FrameworkB,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "framework_a" | "a" | "A" => Ok(Mode::FrameworkA),
            "framework_b" | "b" | "B" => Ok(Mode::FrameworkB),
            other => Err(Error::Parse(format!("unknown mode {other:?}"))),
        }
    }
}

/// Which clusters the Framework B tracker consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerInput {
    /// Every cluster.
    All,
    /// Clusters the static detector calls human.
    StaticPositive,
    /// Clusters either detector calls human.
    EitherPositive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerConfig {
    pub lr0: f64,
    /// Most recent static confidences fused per trajectory.
    pub fusion_window: usize,
    /// Fused probabilities within this distance of 0.5 produce no labels.
    pub ambiguity_margin: f64,
    /// Frames between label generations for a long-lived confirmed track.
    pub label_every: u64,
    pub tracker_input: TrackerInput,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lr0: 0.5,
            fusion_window: 10,
            ambiguity_margin: 0.1,
            label_every: 20,
            tracker_input: TrackerInput::All,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            errs.push(format!("learner.lr0 must be positive, got {}", self.lr0));
        }
        if self.fusion_window == 0 {
            errs.push("learner.fusion_window must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.ambiguity_margin) {
            errs.push(format!(
                "learner.ambiguity_margin must lie in [0, 0.5), got {}",
                self.ambiguity_margin
            ));
        }
        if self.label_every == 0 {
            errs.push("learner.label_every must be at least 1".into());
        }
        errs
    }
}

/// Source of teacher confidences for Framework B.
pub trait Teacher<T> {
    fn confidence(&mut self, cluster: &FeatureCluster<T>) -> T;
}

impl<T: Scalar> Teacher<T> for StaticDetector {
    fn confidence(&mut self, cluster: &FeatureCluster<T>) -> T {
        self.detect(cluster)
    }
}

/// Everything a frame produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput<T> {
    pub frame: u64,
    /// Dynamic probability per input cluster.
    pub predictions: Vec<T>,
    /// Static confidence per input cluster (Framework B only).
    pub static_outputs: Vec<T>,
    pub new_samples: Vec<LabeledSample<T>>,
    pub track_events: Vec<TrackEvent>,
}

/// Fuses the last `window` teacher confidences of a trajectory and labels the
/// window's clusters from index `fresh_from` on.
pub fn generate_labels<T: Scalar>(
    track_id: u64,
    history: &[Observation<T>],
    fresh_from: usize,
    window: usize,
    ambiguity_margin: f64,
    frame: u64,
) -> Result<Vec<LabeledSample<T>>> {
    let start = history.len().saturating_sub(window);
    let recent = &history[start..];
    let confidences: Vec<T> = recent.iter().filter_map(|o| o.static_score).collect();
    if confidences.is_empty() {
        return Err(Error::EmptyInput("static outputs in track history"));
    }
    let fused = fuse_probabilities(confidences)?;
    let half = T::of(0.5);
    if (fused - half).abs() <= T::of(ambiguity_margin) {
        return Ok(Vec::new());
    }
    let y = u8::from(fused > half);
    let weight = (T::of(2.0) * fused - T::one()).abs();
    Ok(recent
        .iter()
        .enumerate()
        .filter(|(i, o)| start + i >= fresh_from && o.static_score.is_some())
        .map(|(_, o)| LabeledSample {
            x: o.features.clone(),
            y,
            weight,
            provenance: Provenance::Fusion,
            frame,
            source: Some(ClusterRef {
                track_id,
                frame: o.frame,
                cluster_index: o.cluster_index,
            }),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Pipeline<T, S = StaticDetector> {
    mode: Mode,
    tracker: Tracker<T>,
    model: DynamicModel<T>,
    sample_log: Vec<LabeledSample<T>>,
    sample_losses: Vec<T>,
    frame: u64,
    experts: ExpertConfig,
    learner: LearnerConfig,
    teacher: Option<S>,
}

fn check(errs: Vec<String>) -> Result<()> {
    if errs.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errs))
    }
}

impl<T: Scalar, S: Teacher<T>> Pipeline<T, S> {
    pub fn framework_a(
        dim: usize,
        tracker: TrackerConfig,
        experts: ExpertConfig,
        learner: LearnerConfig,
    ) -> Result<Self> {
        check(experts.validate())?;
        check(learner.validate())?;
        Ok(Self {
            mode: Mode::FrameworkA,
            tracker: Tracker::new(tracker)?,
            model: DynamicModel::new(dim, T::of(learner.lr0)),
            sample_log: Vec::new(),
            sample_losses: Vec::new(),
            frame: 0,
            experts,
            learner,
            teacher: None,
        })
    }

    pub fn framework_b(
        dim: usize,
        tracker: TrackerConfig,
        learner: LearnerConfig,
        teacher: S,
    ) -> Result<Self> {
        check(learner.validate())?;
        Ok(Self {
            mode: Mode::FrameworkB,
            tracker: Tracker::new(tracker)?,
            model: DynamicModel::new(dim, T::of(learner.lr0)),
            sample_log: Vec::new(),
            sample_losses: Vec::new(),
            frame: 0,
            experts: ExpertConfig::default(),
            learner,
            teacher: Some(teacher),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Index of the last processed frame; 0 before the first.
    pub fn frame(&self) -> u64 {
        self.frame
    }

    pub fn model(&self) -> &DynamicModel<T> {
        &self.model
    }

    pub fn tracker(&self) -> &Tracker<T> {
        &self.tracker
    }

    /// Every sample applied so far, in application order.
    pub fn sample_log(&self) -> &[LabeledSample<T>] {
        &self.sample_log
    }

    /// Regularized loss charged for each logged sample, before its update.
    pub fn sample_losses(&self) -> &[T] {
        &self.sample_losses
    }

    pub fn teacher(&self) -> Option<&S> {
        self.teacher.as_ref()
    }

    fn learn(&mut self, sample: LabeledSample<T>) -> Result<()> {
        let loss = model_loss(&self.model, &sample)?;
        self.model.update(&sample)?;
        self.sample_log.push(sample);
        self.sample_losses.push(loss);
        Ok(())
    }

    /// Human-supervised samples applied before the first frame (Framework A).
    pub fn seed_supervision(&mut self, samples: Vec<LabeledSample<T>>) -> Result<()> {
        if self.mode != Mode::FrameworkA {
            return Err(Error::InvalidPhase(
                "seed supervision exists only in framework A".into(),
            ));
        }
        if self.frame != 0 {
            return Err(Error::InvalidPhase(format!(
                "seed supervision must precede frame 1; pipeline is at frame {}",
                self.frame
            )));
        }
        if samples.is_empty() {
            return Err(Error::EmptyInput("seed samples"));
        }
        for mut s in samples {
            s.weight = T::one();
            s.provenance = Provenance::Seed;
            s.frame = 0;
            self.learn(s)?;
        }
        Ok(())
    }

    pub fn step(&mut self, clusters: &[FeatureCluster<T>], dt: T) -> Result<FrameOutput<T>> {
        match self.mode {
            Mode::FrameworkA => self.step_framework_a(clusters, dt),
            Mode::FrameworkB => self.step_framework_b(clusters, dt),
        }
    }

    fn predictions(&self, clusters: &[FeatureCluster<T>]) -> Result<Vec<T>> {
        clusters
            .iter()
            .map(|c| self.model.predict(&c.features))
            .collect()
    }

    /// Live tracks due for harvesting (confirmed, `every` frames since the
    /// last harvest, or named in `force`) followed by the dead ones, in id order.
    fn due(&self, every: u64, force: &[u64], dead: Vec<Track<T>>) -> Vec<Harvest<T>> {
        let mut due: Vec<Harvest<T>> = self
            .tracker
            .tracks()
            .iter()
            .enumerate()
            .filter(|(_, t)| {
                force.contains(&t.id)
                    || (t.status == crate::tracker::TrackStatus::Confirmed
                        && self.frame - t.last_harvest() >= every)
            })
            .map(|(i, t)| Harvest::Live(i, t.id))
            .collect();
        due.extend(dead.into_iter().map(Harvest::Dead));
        due.sort_by_key(Harvest::id);
        due
    }

    pub fn step_framework_a(
        &mut self,
        clusters: &[FeatureCluster<T>],
        dt: T,
    ) -> Result<FrameOutput<T>> {
        if self.mode != Mode::FrameworkA {
            return Err(Error::InvalidPhase("pipeline is not in framework A".into()));
        }
        self.frame += 1;
        let predictions = self.predictions(clusters)?;
        let candidates = clusters
            .iter()
            .zip(&predictions)
            .enumerate()
            .map(|(i, (c, &p))| Candidate {
                cluster_index: i,
                centroid: c.centroid,
                features: c.features.clone(),
                dynamic_score: p,
                static_score: None,
            })
            .collect();
        let step = self.tracker.step(self.frame, dt, candidates)?;

        let mut new_samples = Vec::new();
        for h in self.due(self.experts.harvest_every, &[], step.dead) {
            let frame = self.frame;
            let experts = &self.experts;
            let harvest = |t: &Track<T>| -> Vec<LabeledSample<T>> {
                let from = experts.judged_from(t.history(), t.unharvested().len());
                match segment_summary(t, from) {
                    Ok(stats) => {
                        let mut out = p_expert(&stats, t.id, t.unharvested(), experts, frame);
                        out.extend(n_expert(&stats, t.id, t.unharvested(), experts, frame));
                        out
                    }
                    Err(_) => Vec::new(),
                }
            };
            match h {
                Harvest::Live(i, _) => {
                    let t = &mut self.tracker.tracks_mut()[i];
                    new_samples.extend(harvest(t));
                    t.mark_harvested(frame);
                }
                Harvest::Dead(t) => new_samples.extend(harvest(&t)),
            }
        }
        for s in &new_samples {
            self.learn(s.clone())?;
        }
        Ok(FrameOutput {
            frame: self.frame,
            predictions,
            static_outputs: Vec::new(),
            new_samples,
            track_events: step.events,
        })
    }

    pub fn step_framework_b(
        &mut self,
        clusters: &[FeatureCluster<T>],
        dt: T,
    ) -> Result<FrameOutput<T>> {
        if self.mode != Mode::FrameworkB {
            return Err(Error::InvalidPhase("pipeline is not in framework B".into()));
        }
        self.frame += 1;
        let predictions = self.predictions(clusters)?;
        let teacher = self
            .teacher
            .as_mut()
            .expect("framework B always has a teacher");
        let static_outputs: Vec<T> = clusters.iter().map(|c| teacher.confidence(c)).collect();
        let half = T::of(0.5);
        let candidates = clusters
            .iter()
            .enumerate()
            .filter(|&(i, _)| match self.learner.tracker_input {
                TrackerInput::All => true,
                TrackerInput::StaticPositive => static_outputs[i] > half,
                TrackerInput::EitherPositive => static_outputs[i] > half || predictions[i] >= half,
            })
            .map(|(i, c)| Candidate {
                cluster_index: i,
                centroid: c.centroid,
                features: c.features.clone(),
                dynamic_score: predictions[i],
                static_score: Some(static_outputs[i]),
            })
            .collect();
        let step = self.tracker.step(self.frame, dt, candidates)?;

        let mut new_samples = Vec::new();
        let (window, margin, frame) = (
            self.learner.fusion_window,
            self.learner.ambiguity_margin,
            self.frame,
        );
        for h in self.due(self.learner.label_every, &step.confirmed, step.dead) {
            let label = |t: &Track<T>| -> Result<Vec<LabeledSample<T>>> {
                let fresh_from = t.history().len() - t.unharvested().len();
                generate_labels(t.id, t.history(), fresh_from, window, margin, frame)
            };
            match h {
                Harvest::Live(i, _) => {
                    let t = &mut self.tracker.tracks_mut()[i];
                    new_samples.extend(label(t)?);
                    t.mark_harvested(frame);
                }
                Harvest::Dead(t) => new_samples.extend(label(&t)?),
            }
        }
        for s in &new_samples {
            self.learn(s.clone())?;
        }
        Ok(FrameOutput {
            frame: self.frame,
            predictions,
            static_outputs,
            new_samples,
            track_events: step.events,
        })
    }
}

enum Harvest<T> {
    Live(usize, u64),
    Dead(Track<T>),
}

impl<T> Harvest<T> {
    fn id(&self) -> u64 {
        match self {
            Harvest::Live(_, id) => *id,
            Harvest::Dead(t) => t.id,
        }
    }
}

/// Applies a recorded sample log, in order, to a fresh model.
pub fn replay_samples<T: Scalar>(
    dim: usize,
    lr0: T,
    samples: &[LabeledSample<T>],
) -> Result<DynamicModel<T>> {
    let mut model = DynamicModel::new(dim, lr0);
    for s in samples {
        model.update(s)?;
    }
    Ok(model)
}
