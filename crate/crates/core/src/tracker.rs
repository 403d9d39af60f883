//! Multi-target tracker: constant-velocity Kalman filters, Mahalanobis gating,
//! optimal assignment and an M-of-N confirmation lifecycle.

use serde::{Deserialize, Serialize};

use crate::assignment::solve_gated;
use crate::error::{Error, Result};
use crate::kalman::{self, diag, Gaussian, Innovation, Mat};
use crate::scalar::Scalar;

/// 99% quantile of chi-square with 2 degrees of freedom.
pub const GATE_CHI2_99_2DOF: f64 = 9.21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// White-noise acceleration spectral density, m^2/s^3.
    pub process_noise: f64,
    /// Standard deviation of centroid measurements, m.
    pub measurement_std: f64,
    /// Initial velocity standard deviation of a new track, m/s.
    pub init_velocity_std: f64,
    /// Squared Mahalanobis gate.
    pub gate: f64,
    pub confirm_hits: u32,
    pub confirm_window: u32,
    pub max_misses: u32,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            process_noise: 0.5,
            measurement_std: 0.1,
            init_velocity_std: 1.0,
            gate: GATE_CHI2_99_2DOF,
            confirm_hits: 3,
            confirm_window: 4,
            max_misses: 5,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("process_noise", self.process_noise),
            ("init_velocity_std", self.init_velocity_std),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                errs.push(format!("tracker.{name} must be non-negative, got {v}"));
            }
        }
        if !(self.measurement_std > 0.0 && self.measurement_std.is_finite()) {
            errs.push(format!(
                "tracker.measurement_std must be positive, got {}",
                self.measurement_std
            ));
        }
        if !(self.gate > 0.0) {
            errs.push(format!("tracker.gate must be positive, got {}", self.gate));
        }
        if self.confirm_hits == 0 || self.confirm_hits > self.confirm_window {
            errs.push("tracker.confirm_hits must lie in 1..=confirm_window".into());
        }
        if self.confirm_window > 32 {
            errs.push("tracker.confirm_window must be at most 32".into());
        }
        if self.max_misses == 0 {
            errs.push("tracker.max_misses must be at least 1".into());
        }
        errs
    }

    pub fn measurement_noise<T: Scalar>(&self) -> Mat<T, 2, 2> {
        let r = T::of(self.measurement_std * self.measurement_std);
        diag([r, r])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Dead,
}

/// A cluster offered to the tracker together with the detector outputs for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<T> {
    /// Index of the cluster within its frame.
    pub cluster_index: usize,
    pub centroid: [T; 2],
    pub features: Vec<T>,
    pub dynamic_score: T,
    pub static_score: Option<T>,
}

/// One associated cluster in a track's history.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    pub frame: u64,
    /// Stream time in seconds.
    pub time: T,
    pub cluster_index: usize,
    pub centroid: [T; 2],
    pub features: Vec<T>,
    pub dynamic_score: T,
    pub static_score: Option<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackStats<T> {
    pub duration: T,
    pub displacement: T,
    pub path_length: T,
    pub avg_speed: T,
    pub max_cov_trace: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track<T> {
    pub id: u64,
    pub filter: Gaussian<T, 4>,
    pub status: TrackStatus,
    pub hits: u32,
    /// Consecutive frames without an associated cluster.
    pub misses: u32,
    /// Hit flags for recent frames, newest in bit 0.
    recent: u32,
    age: u32,
    history: Vec<Observation<T>>,
    harvested: usize,
    last_harvest: u64,
    path_length: T,
    max_cov_trace: T,
    /// Positional covariance trace after each recorded observation.
    cov_traces: Vec<T>,
}

impl<T: Scalar> Track<T> {
    /// A tentative track at a first observation, at rest.
    pub fn spawn(id: u64, obs: Observation<T>, cfg: &TrackerConfig) -> Self {
        let r = T::of(cfg.measurement_std * cfg.measurement_std);
        let v = T::of(cfg.init_velocity_std * cfg.init_velocity_std);
        let filter = Gaussian {
            mean: [obs.centroid[0], obs.centroid[1], T::zero(), T::zero()],
            cov: diag([r, r, v, v]),
        };
        let frame = obs.frame;
        Self {
            id,
            max_cov_trace: r + r,
            cov_traces: vec![r + r],
            filter,
            status: TrackStatus::Tentative,
            hits: 1,
            misses: 0,
            recent: 1,
            age: 1,
            history: vec![obs],
            harvested: 0,
            last_harvest: frame,
            path_length: T::zero(),
        }
    }

    pub fn is_alive(&self) -> bool {
        self.status != TrackStatus::Dead
    }

    pub fn position(&self) -> [T; 2] {
        [self.filter.mean[0], self.filter.mean[1]]
    }

    pub fn positional_trace(&self) -> T {
        self.filter.cov[0][0] + self.filter.cov[1][1]
    }

    pub fn history(&self) -> &[Observation<T>] {
        &self.history
    }

    /// History entries not yet handed to an expert or label generator.
    pub fn unharvested(&self) -> &[Observation<T>] {
        &self.history[self.harvested..]
    }

    /// Marks the whole current history as harvested at `frame`.
    pub fn mark_harvested(&mut self, frame: u64) {
        self.harvested = self.history.len();
        self.last_harvest = frame;
    }

    pub fn last_harvest(&self) -> u64 {
        self.last_harvest
    }

    fn ensure_alive(&self) -> Result<()> {
        if self.is_alive() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("track {} is dead", self.id)))
        }
    }

    /// Constant-velocity time update over `dt` seconds.
    pub fn predict(&mut self, dt: T, process_noise: T) -> Result<()> {
        self.ensure_alive()?;
        if !(dt > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        let (f, q) = kalman::constant_velocity(dt, process_noise);
        self.filter = kalman::predict(&self.filter, &f, &q);
        Ok(())
    }

    /// Position measurement update. Does not touch the history.
    pub fn correct(&mut self, z: [T; 2], r: &Mat<T, 2, 2>) -> Result<()> {
        self.ensure_alive()?;
        self.filter = kalman::update(&self.filter, &z, &kalman::position_measurement(), r)?;
        Ok(())
    }

    /// Squared Mahalanobis distance of `z` from the predicted position.
    pub fn mahalanobis_sq(&self, z: [T; 2], r: &Mat<T, 2, 2>) -> Result<T> {
        Innovation::new(&self.filter, &z, &kalman::position_measurement(), r)
            .map(|i| i.mahalanobis_sq())
    }

    fn record(&mut self, obs: Observation<T>) {
        if let Some(last) = self.history.last() {
            let dx = obs.centroid[0] - last.centroid[0];
            let dy = obs.centroid[1] - last.centroid[1];
            self.path_length = self.path_length + dx.hypot(dy);
        }
        self.history.push(obs);
        let trace = self.positional_trace();
        self.cov_traces.push(trace);
        self.max_cov_trace = self.max_cov_trace.max(trace);
    }
}

/// Kinematic summary of a track's associated centroids.
pub fn track_summary<T: Scalar>(track: &Track<T>) -> Result<TrackStats<T>> {
    let h = track.history();
    if h.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            have: h.len(),
        });
    }
    let (first, last) = (&h[0], &h[h.len() - 1]);
    let duration = last.time - first.time;
    let displacement =
        (last.centroid[0] - first.centroid[0]).hypot(last.centroid[1] - first.centroid[1]);
    let avg_speed = if duration > T::zero() {
        track.path_length / duration
    } else {
        T::zero()
    };
    Ok(TrackStats {
        duration,
        displacement,
        path_length: track.path_length,
        avg_speed,
        max_cov_trace: track.max_cov_trace,
    })
}

/// Kinematic summary of the history from index `from` on: the trajectory as
/// it looks over a recent stretch rather than over the whole track life.
pub fn segment_summary<T: Scalar>(track: &Track<T>, from: usize) -> Result<TrackStats<T>> {
    let h = track.history();
    let seg = h.get(from..).unwrap_or(&[]);
    if seg.len() < 2 {
        return Err(Error::InsufficientHistory {
            needed: 2,
            have: seg.len(),
        });
    }
    let mut path_length = T::zero();
    for w in seg.windows(2) {
        path_length = path_length
            + (w[1].centroid[0] - w[0].centroid[0]).hypot(w[1].centroid[1] - w[0].centroid[1]);
    }
    let (first, last) = (&seg[0], &seg[seg.len() - 1]);
    let duration = last.time - first.time;
    let displacement =
        (last.centroid[0] - first.centroid[0]).hypot(last.centroid[1] - first.centroid[1]);
    let avg_speed = if duration > T::zero() {
        path_length / duration
    } else {
        T::zero()
    };
    let max_cov_trace = track.cov_traces[from..]
        .iter()
        .copied()
        .fold(T::zero(), T::max);
    Ok(TrackStats {
        duration,
        displacement,
        path_length,
        avg_speed,
        max_cov_trace,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Association {
    /// `(track index, cluster index)` pairs, sorted by track index.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_clusters: Vec<usize>,
}

/// Squared Mahalanobis costs, `None` where the pair fails the gate.
pub fn gated_costs<T: Scalar>(
    tracks: &[Track<T>],
    centroids: &[[T; 2]],
    r: &Mat<T, 2, 2>,
    gate: T,
) -> Vec<Vec<Option<T>>> {
    tracks
        .iter()
        .map(|t| {
            centroids
                .iter()
                .map(|&z| match t.mahalanobis_sq(z, r) {
                    Ok(d) if d <= gate => Some(d),
                    _ => None,
                })
                .collect()
        })
        .collect()
}

/// Optimal one-to-one track/cluster assignment under the Mahalanobis gate.
pub fn associate<T: Scalar>(
    tracks: &[Track<T>],
    centroids: &[[T; 2]],
    r: &Mat<T, 2, 2>,
    gate: T,
) -> Association {
    let costs = gated_costs(tracks, centroids, r, gate);
    let pairs = solve_gated(&costs);
    let mut track_used = vec![false; tracks.len()];
    let mut cluster_used = vec![false; centroids.len()];
    for &(t, c) in &pairs {
        track_used[t] = true;
        cluster_used[c] = true;
    }
    Association {
        pairs,
        unmatched_tracks: (0..tracks.len()).filter(|&t| !track_used[t]).collect(),
        unmatched_clusters: (0..centroids.len()).filter(|&c| !cluster_used[c]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackEventKind {
    Spawned,
    Confirmed,
    Died,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub kind: TrackEventKind,
    pub track_id: u64,
    pub frame: u64,
}

/// Result of one tracker step.
#[derive(Debug, Clone)]
pub struct TrackerStep<T> {
    pub events: Vec<TrackEvent>,
    /// Tracks that died this frame, removed from the tracker.
    pub dead: Vec<Track<T>>,
    /// Ids of tracks confirmed this frame.
    pub confirmed: Vec<u64>,
    /// Track id assigned to each candidate, in candidate order.
    pub assigned: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct Tracker<T> {
    cfg: TrackerConfig,
    tracks: Vec<Track<T>>,
    next_id: u64,
    time: T,
}

impl<T: Scalar> Tracker<T> {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        Ok(Self {
            cfg,
            tracks: Vec::new(),
            next_id: 1,
            time: T::zero(),
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    /// Live tracks, ordered by id.
    pub fn tracks(&self) -> &[Track<T>] {
        &self.tracks
    }

    pub fn tracks_mut(&mut self) -> &mut [Track<T>] {
        &mut self.tracks
    }

    /// Predicts every track forward, associates the candidates, corrects
    /// matched tracks and applies the lifecycle rules.
    pub fn step(
        &mut self,
        frame: u64,
        dt: T,
        candidates: Vec<Candidate<T>>,
    ) -> Result<TrackerStep<T>> {
        if !(dt > T::zero()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {dt}"
            )));
        }
        self.time = self.time + dt;
        let q = T::of(self.cfg.process_noise);
        for t in &mut self.tracks {
            t.predict(dt, q)?;
        }
        let r = self.cfg.measurement_noise();
        let centroids: Vec<[T; 2]> = candidates.iter().map(|c| c.centroid).collect();
        let assoc = associate(&self.tracks, &centroids, &r, T::of(self.cfg.gate));
        self.lifecycle(frame, candidates, &assoc)
    }

    /// Applies an association: matched tracks are corrected and recorded,
    /// unmatched clusters spawn tentative tracks, and the M-of-N and
    /// max-misses rules move tracks between states. Dead tracks are returned
    /// once and dropped.
    pub fn lifecycle(
        &mut self,
        frame: u64,
        candidates: Vec<Candidate<T>>,
        assoc: &Association,
    ) -> Result<TrackerStep<T>> {
        let r = self.cfg.measurement_noise();
        let window_mask = if self.cfg.confirm_window >= 32 {
            u32::MAX
        } else {
            (1u32 << self.cfg.confirm_window) - 1
        };
        let mut events = Vec::new();
        let mut confirmed = Vec::new();
        let mut assigned = vec![0u64; candidates.len()];
        let mut slots: Vec<Option<Candidate<T>>> = candidates.into_iter().map(Some).collect();
        let mut matched = vec![false; self.tracks.len()];
        let time = self.time;
        let observation = |c: Candidate<T>| Observation {
            frame,
            time,
            cluster_index: c.cluster_index,
            centroid: c.centroid,
            features: c.features,
            dynamic_score: c.dynamic_score,
            static_score: c.static_score,
        };

        for &(ti, ci) in &assoc.pairs {
            let cand = slots[ci].take().expect("cluster assigned twice");
            assigned[ci] = self.tracks[ti].id;
            let track = &mut self.tracks[ti];
            track.correct(cand.centroid, &r)?;
            track.record(observation(cand));
            track.hits += 1;
            track.misses = 0;
            track.recent = (track.recent << 1) | 1;
            matched[ti] = true;
        }
        for (ti, track) in self.tracks.iter_mut().enumerate() {
            if !matched[ti] {
                track.misses += 1;
                track.recent <<= 1;
            }
            // newly spawned tracks are aged at spawn
            track.age += 1;
            match track.status {
                TrackStatus::Tentative => {
                    if (track.recent & window_mask).count_ones() >= self.cfg.confirm_hits {
                        track.status = TrackStatus::Confirmed;
                        confirmed.push(track.id);
                        events.push(TrackEvent {
                            kind: TrackEventKind::Confirmed,
                            track_id: track.id,
                            frame,
                        });
                    } else if track.age >= self.cfg.confirm_window
                        || track.misses >= self.cfg.max_misses
                    {
                        track.status = TrackStatus::Dead;
                    }
                }
                TrackStatus::Confirmed => {
                    if track.misses >= self.cfg.max_misses {
                        track.status = TrackStatus::Dead;
                    }
                }
                TrackStatus::Dead => {}
            }
        }

        let (alive, dead): (Vec<_>, Vec<_>) = std::mem::take(&mut self.tracks)
            .into_iter()
            .partition(Track::is_alive);
        self.tracks = alive;
        for t in &dead {
            events.push(TrackEvent {
                kind: TrackEventKind::Died,
                track_id: t.id,
                frame,
            });
        }

        for (ci, slot) in slots.into_iter().enumerate() {
            if let Some(cand) = slot {
                let id = self.next_id;
                self.next_id += 1;
                assigned[ci] = id;
                self.tracks
                    .push(Track::spawn(id, observation(cand), &self.cfg));
                events.push(TrackEvent {
                    kind: TrackEventKind::Spawned,
                    track_id: id,
                    frame,
                });
            }
        }
        Ok(TrackerStep {
            events,
            dead,
            confirmed,
            assigned,
        })
    }
}
