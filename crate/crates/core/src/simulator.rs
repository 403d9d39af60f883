//! Deterministic planar world that emits pre-segmented clusters.
//!
//! Humans follow random waypoints at a constant speed per leg; clutter objects
//! are static or drift slowly. Each visible agent yields one cluster per frame
//! whose features are drawn from its class's Gaussian blob. Spurious clusters
//! appear at a configurable per-frame rate.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detectors::{LabeledSample, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::streams::{substream, Substream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Class {
    Human,
    Clutter,
}

impl Class {
    pub fn label(self) -> u8 {
        u8::from(self == Class::Human)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCluster<T> {
    pub centroid: [T; 2],
    pub features: Vec<T>,
    /// Hidden ground truth. Only the static oracle and the metrics read it.
    pub truth: Class,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<usize>,
    pub frame: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_humans: usize,
    pub n_clutter: usize,
    /// Arena extent `[width, height]` in meters.
    pub arena: [f64; 2],
    pub human_speed_range: [f64; 2],
    pub clutter_speed_range: [f64; 2],
    pub feature_dim: usize,
    pub class_feature_separation: f64,
    pub feature_noise: f64,
    pub centroid_noise: f64,
    pub miss_rate: f64,
    /// Probability of one spurious cluster per frame.
    pub false_positive_rate: f64,
    pub frames: u64,
    pub dt: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_humans: 10,
            n_clutter: 10,
            arena: [30.0, 30.0],
            human_speed_range: [0.5, 1.5],
            clutter_speed_range: [0.0, 0.05],
            feature_dim: 16,
            class_feature_separation: 4.0,
            feature_noise: 1.0,
            centroid_noise: 0.01,
            miss_rate: 0.05,
            false_positive_rate: 0.1,
            frames: 20_000,
            dt: 0.1,
            seed: 42,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let rate = |name: &str, v: f64, errs: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&v) {
                errs.push(format!("world.{name} must lie in [0, 1], got {v}"));
            }
        };
        rate("miss_rate", self.miss_rate, &mut errs);
        rate("false_positive_rate", self.false_positive_rate, &mut errs);
        if self.feature_dim < 2 {
            errs.push(format!(
                "world.feature_dim must be at least 2, got {}",
                self.feature_dim
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            errs.push(format!("world.dt must be positive, got {}", self.dt));
        }
        if self.frames == 0 {
            errs.push("world.frames must be at least 1".into());
        }
        if !(self.arena[0] > 0.0 && self.arena[1] > 0.0) {
            errs.push(format!(
                "world.arena must have positive extent, got {:?}",
                self.arena
            ));
        }
        for (name, r) in [
            ("human_speed_range", self.human_speed_range),
            ("clutter_speed_range", self.clutter_speed_range),
        ] {
            if !(r[0] >= 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                errs.push(format!(
                    "world.{name} must satisfy 0 <= min <= max, got {r:?}"
                ));
            }
        }
        for (name, v) in [
            ("class_feature_separation", self.class_feature_separation),
            ("feature_noise", self.feature_noise),
            ("centroid_noise", self.centroid_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("world.{name} must be non-negative, got {v}"));
            }
        }
        errs
    }

    fn check(&self) -> Result<()> {
        let errs = self.validate();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Per-class Gaussian feature distributions: both means sit on a line through
/// a random center, `class_feature_separation` apart.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassModel {
    human_mean: Vec<f64>,
    clutter_mean: Vec<f64>,
    noise: f64,
}

impl ClassModel {
    pub fn new(cfg: &WorldConfig) -> Self {
        let mut rng = substream(cfg.seed, Substream::Classes);
        let f = cfg.feature_dim;
        let center: Vec<f64> = (0..f).map(|_| gaussian(&mut rng)).collect();
        let mut dir: Vec<f64> = (0..f).map(|_| gaussian(&mut rng)).collect();
        let norm = dir
            .iter()
            .map(|d| d * d)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        dir.iter_mut().for_each(|d| *d /= norm);
        let half = 0.5 * cfg.class_feature_separation;
        Self {
            human_mean: center.iter().zip(&dir).map(|(c, d)| c + half * d).collect(),
            clutter_mean: center.iter().zip(&dir).map(|(c, d)| c - half * d).collect(),
            noise: cfg.feature_noise,
        }
    }

    pub fn mean(&self, class: Class) -> &[f64] {
        match class {
            Class::Human => &self.human_mean,
            Class::Clutter => &self.clutter_mean,
        }
    }

    pub fn draw<T: Scalar>(&self, class: Class, rng: &mut ChaCha8Rng) -> Vec<T> {
        self.mean(class)
            .iter()
            .map(|&m| T::of(m + self.noise * gaussian(rng)))
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Agent {
    class: Class,
    pos: [f64; 2],
    waypoint: [f64; 2],
    speed: f64,
}

/// Anything that yields frames of clusters: the live simulator or a replayed dump.
pub trait ClusterSource<T> {
    /// Next frame, or `None` once the stream is exhausted.
    fn next_frame(&mut self) -> Result<Option<Vec<FeatureCluster<T>>>>;
}

#[derive(Debug, Clone)]
pub struct World {
    cfg: WorldConfig,
    classes: ClassModel,
    agents: Vec<Agent>,
    rng: ChaCha8Rng,
    frame: u64,
}

impl World {
    pub fn new(cfg: WorldConfig) -> Result<Self> {
        cfg.check()?;
        let classes = ClassModel::new(&cfg);
        let mut rng = substream(cfg.seed, Substream::World);
        let mut agents = Vec::with_capacity(cfg.n_humans + cfg.n_clutter);
        for i in 0..cfg.n_humans + cfg.n_clutter {
            let (class, range) = if i < cfg.n_humans {
                (Class::Human, cfg.human_speed_range)
            } else {
                (Class::Clutter, cfg.clutter_speed_range)
            };
            let pos = [
                uniform(&mut rng, 0.0, cfg.arena[0]),
                uniform(&mut rng, 0.0, cfg.arena[1]),
            ];
            let waypoint = [
                uniform(&mut rng, 0.0, cfg.arena[0]),
                uniform(&mut rng, 0.0, cfg.arena[1]),
            ];
            let speed = uniform(&mut rng, range[0], range[1]);
            agents.push(Agent {
                class,
                pos,
                waypoint,
                speed,
            });
        }
        Ok(Self {
            cfg,
            classes,
            agents,
            rng,
            frame: 0,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.cfg
    }

    pub fn classes(&self) -> &ClassModel {
        &self.classes
    }

    /// Frames emitted so far.
    pub fn frame(&self) -> u64 {
        self.frame
    }

    /// True agent positions, in agent-id order.
    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.agents.iter().map(|a| a.pos).collect()
    }

    fn speed_range(&self, class: Class) -> [f64; 2] {
        match class {
            Class::Human => self.cfg.human_speed_range,
            Class::Clutter => self.cfg.clutter_speed_range,
        }
    }

    /// Advances every agent by one `dt` and returns the frame's clusters.
    pub fn tick<T: Scalar>(&mut self) -> Result<Vec<FeatureCluster<T>>> {
        if self.frame >= self.cfg.frames {
            return Err(Error::EndOfStream(self.frame));
        }
        self.frame += 1;
        let dt = self.cfg.dt;
        let arena = self.cfg.arena;
        let mut clusters = Vec::with_capacity(self.agents.len() + 1);
        for id in 0..self.agents.len() {
            let range = self.speed_range(self.agents[id].class);
            let rng = &mut self.rng;
            let agent = &mut self.agents[id];
            let step = agent.speed * dt;
            let mut to = [
                agent.waypoint[0] - agent.pos[0],
                agent.waypoint[1] - agent.pos[1],
            ];
            let mut dist = to[0].hypot(to[1]);
            if dist < step {
                // new leg: fresh waypoint and speed
                agent.waypoint = [uniform(rng, 0.0, arena[0]), uniform(rng, 0.0, arena[1])];
                agent.speed = uniform(rng, range[0], range[1]);
                to = [
                    agent.waypoint[0] - agent.pos[0],
                    agent.waypoint[1] - agent.pos[1],
                ];
                dist = to[0].hypot(to[1]);
            }
            // every frame moves exactly speed * dt
            let step = agent.speed * dt;
            if dist > 0.0 {
                agent.pos[0] += step * to[0] / dist;
                agent.pos[1] += step * to[1] / dist;
            }

            if rng.gen::<f64>() < self.cfg.miss_rate {
                continue;
            }
            let centroid = [
                T::of(agent.pos[0] + self.cfg.centroid_noise * gaussian(rng)),
                T::of(agent.pos[1] + self.cfg.centroid_noise * gaussian(rng)),
            ];
            let class = agent.class;
            clusters.push(FeatureCluster {
                centroid,
                features: self.classes.draw(class, rng),
                truth: class,
                agent_id: Some(id),
                frame: self.frame,
            });
        }
        if self.rng.gen::<f64>() < self.cfg.false_positive_rate {
            let rng = &mut self.rng;
            let centroid = [
                T::of(uniform(rng, 0.0, arena[0])),
                T::of(uniform(rng, 0.0, arena[1])),
            ];
            clusters.push(FeatureCluster {
                centroid,
                features: self.classes.draw(Class::Clutter, rng),
                truth: Class::Clutter,
                agent_id: None,
                frame: self.frame,
            });
        }
        Ok(clusters)
    }
}

impl<T: Scalar> ClusterSource<T> for World {
    fn next_frame(&mut self) -> Result<Option<Vec<FeatureCluster<T>>>> {
        match self.tick() {
            Ok(frame) => Ok(Some(frame)),
            Err(Error::EndOfStream(_)) => Ok(None),
            Err(e) => Err(e),
        }
    }
}

pub fn init_world(cfg: &WorldConfig) -> Result<World> {
    World::new(cfg.clone())
}

/// Labeled samples drawn from the class distributions on a dedicated
/// substream, alternating human and clutter.
pub fn labeled_samples<T: Scalar>(
    cfg: &WorldConfig,
    n: usize,
    stream: Substream,
    provenance: Provenance,
) -> Result<Vec<LabeledSample<T>>> {
    cfg.check()?;
    let classes = ClassModel::new(cfg);
    let mut rng = substream(cfg.seed, stream);
    (0..n)
        .map(|i| {
            let class = if i % 2 == 0 {
                Class::Human
            } else {
                Class::Clutter
            };
            LabeledSample::new(
                classes.draw(class, &mut rng),
                class.label(),
                T::one(),
                provenance,
                0,
            )
        })
        .collect()
}

/// Balanced held-out evaluation set, never shown to the learner.
pub fn eval_set<T: Scalar>(cfg: &WorldConfig, n: usize) -> Result<Vec<LabeledSample<T>>> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "evaluation set needs at least 2 samples, got {n}"
        )));
    }
    labeled_samples(cfg, n, Substream::Evaluation, Provenance::Evaluation)
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    world: WorldConfig,
}

#[derive(Serialize, Deserialize)]
struct DumpFrame<T> {
    frame: u64,
    clusters: Vec<FeatureCluster<T>>,
}

/// Writes the simulated stream as JSONL: one header line with the world
/// config, then one line per frame.
pub struct StreamDump<W: Write> {
    out: W,
}

impl StreamDump<BufWriter<std::fs::File>> {
    pub fn create(path: &Path, cfg: &WorldConfig) -> Result<Self> {
        let file = std::fs::File::create(path)?;
        Self::new(BufWriter::new(file), cfg)
    }
}

impl<W: Write> StreamDump<W> {
    pub fn new(mut out: W, cfg: &WorldConfig) -> Result<Self> {
        serde_json::to_writer(&mut out, &DumpHeader { world: cfg.clone() })?;
        out.write_all(b"\n")?;
        Ok(Self { out })
    }

    pub fn write_frame<T: Scalar>(
        &mut self,
        frame: u64,
        clusters: &[FeatureCluster<T>],
    ) -> Result<()> {
        serde_json::to_writer(
            &mut self.out,
            &DumpFrame {
                frame,
                clusters: clusters.to_vec(),
            },
        )?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.flush()?;
        Ok(self.out)
    }
}

/// Replays a stream dump in place of the simulator.
pub struct StreamReplay<R: BufRead> {
    lines: std::io::Lines<R>,
    world: WorldConfig,
}

impl StreamReplay<BufReader<std::fs::File>> {
    pub fn open(path: &Path) -> Result<Self> {
        Self::new(BufReader::new(std::fs::File::open(path)?))
    }
}

impl<R: BufRead> StreamReplay<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines.next().ok_or(Error::EmptyInput("stream dump"))??;
        let header: DumpHeader = serde_json::from_str(&header)?;
        Ok(Self {
            lines,
            world: header.world,
        })
    }

    pub fn world(&self) -> &WorldConfig {
        &self.world
    }
}

impl<T: Scalar, R: BufRead> ClusterSource<T> for StreamReplay<R> {
    fn next_frame(&mut self) -> Result<Option<Vec<FeatureCluster<T>>>> {
        for line in self.lines.by_ref() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let frame: DumpFrame<T> = serde_json::from_str(&line)?;
            return Ok(Some(frame.clusters));
        }
        Ok(None)
    }
}
