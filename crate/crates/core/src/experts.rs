//! Kinematic P-expert and N-expert.
//!
//! The P-expert turns missed detections on human-like trajectories into
//! positive samples; the N-expert turns false alarms on trajectories no
//! pedestrian could produce into negative samples. Only misclassified
//! clusters are emitted.

use serde::{Deserialize, Serialize};

use crate::detectors::{ClusterRef, LabeledSample, Provenance};
use crate::scalar::Scalar;
use crate::tracker::{Observation, TrackStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertConfig {
    /// Seconds.
    pub min_duration: f64,
    /// Walking envelope `[min, max]`, m/s.
    pub speed_range: [f64; 2],
    /// Meters.
    pub min_displacement: f64,
    /// Upper bound on positional covariance trace, m^2.
    pub max_cov_trace: f64,
    /// Tracks that move less than this over `min_duration` are static, m.
    pub static_displacement: f64,
    /// Frames between harvests of a long-lived track.
    pub harvest_every: u64,
    /// Seconds of recent trajectory judged at each harvest, extended back
    /// as needed to cover every unharvested cluster.
    pub stats_window: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            min_duration: 2.0,
            speed_range: [0.3, 3.0],
            min_displacement: 1.0,
            max_cov_trace: 2.0,
            static_displacement: 0.2,
            harvest_every: 20,
            stats_window: 4.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.speed_range[0] < self.speed_range[1]) {
            errs.push(format!(
                "experts.speed_range must satisfy min < max, got {:?}",
                self.speed_range
            ));
        }
        for (name, v) in [
            ("min_duration", self.min_duration),
            ("speed_range[0]", self.speed_range[0]),
            ("min_displacement", self.min_displacement),
            ("max_cov_trace", self.max_cov_trace),
            ("static_displacement", self.static_displacement),
            ("stats_window", self.stats_window),
        ] {
            if !(v > 0.0) {
                errs.push(format!("experts.{name} must be positive, got {v}"));
            }
        }
        if !(self.static_displacement < self.min_displacement) {
            errs.push("experts.static_displacement must be below min_displacement".into());
        }
        if self.harvest_every == 0 {
            errs.push("experts.harvest_every must be at least 1".into());
        }
        errs
    }

    /// First history index the experts judge: the start of the last
    /// `stats_window` seconds, or of the unharvested entries if earlier.
    pub fn judged_from<T: Scalar>(&self, history: &[Observation<T>], unharvested: usize) -> usize {
        let Some(last) = history.last() else { return 0 };
        let horizon = last.time - T::of(self.stats_window);
        let recent = history.partition_point(|o| o.time < horizon);
        recent.min(history.len() - unharvested.min(history.len()))
    }

    fn speed_in_range<T: Scalar>(&self, v: T) -> bool {
        v >= T::of(self.speed_range[0]) && v <= T::of(self.speed_range[1])
    }

    /// Trajectory is consistent with a walking person.
    pub fn plausible<T: Scalar>(&self, s: &TrackStats<T>) -> bool {
        s.duration >= T::of(self.min_duration)
            && self.speed_in_range(s.avg_speed)
            && s.displacement >= T::of(self.min_displacement)
            && s.max_cov_trace <= T::of(self.max_cov_trace)
    }

    /// Trajectory cannot belong to a walking person.
    pub fn implausible<T: Scalar>(&self, s: &TrackStats<T>) -> bool {
        let parked = s.displacement <= T::of(self.static_displacement)
            && s.duration >= T::of(self.min_duration);
        parked || !self.speed_in_range(s.avg_speed)
    }
}

fn emit<T: Scalar>(
    track_id: u64,
    history: &[Observation<T>],
    frame: u64,
    y: u8,
    provenance: Provenance,
    misclassified: impl Fn(T) -> bool,
) -> Vec<LabeledSample<T>> {
    history
        .iter()
        .filter(|o| misclassified(o.dynamic_score))
        .map(|o| LabeledSample {
            x: o.features.clone(),
            y,
            weight: T::one(),
            provenance,
            frame,
            source: Some(ClusterRef {
                track_id,
                frame: o.frame,
                cluster_index: o.cluster_index,
            }),
        })
        .collect()
}

/// Positive samples for clusters the classifier rejected on a human-like track.
pub fn p_expert<T: Scalar>(
    stats: &TrackStats<T>,
    track_id: u64,
    history: &[Observation<T>],
    cfg: &ExpertConfig,
    frame: u64,
) -> Vec<LabeledSample<T>> {
    if !cfg.plausible(stats) {
        return Vec::new();
    }
    let half = T::of(0.5);
    emit(track_id, history, frame, 1, Provenance::PExpert, |p| {
        p < half
    })
}

/// Negative samples for clusters the classifier accepted on an implausible track.
pub fn n_expert<T: Scalar>(
    stats: &TrackStats<T>,
    track_id: u64,
    history: &[Observation<T>],
    cfg: &ExpertConfig,
    frame: u64,
) -> Vec<LabeledSample<T>> {
    if !cfg.implausible(stats) {
        return Vec::new();
    }
    let half = T::of(0.5);
    emit(track_id, history, frame, 0, Provenance::NExpert, |p| {
        p > half
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(duration: f64, displacement: f64, avg_speed: f64) -> TrackStats<f64> {
        TrackStats {
            duration,
            displacement,
            path_length: avg_speed * duration,
            avg_speed,
            max_cov_trace: 0.05,
        }
    }

    fn history(scores: &[f64]) -> Vec<Observation<f64>> {
        scores
            .iter()
            .enumerate()
            .map(|(i, &s)| Observation {
                frame: i as u64,
                time: i as f64 * 0.1,
                cluster_index: i,
                centroid: [0.0, 0.0],
                features: vec![i as f64, 1.0],
                dynamic_score: s,
                static_score: None,
            })
            .collect()
    }

    #[test]
    fn judged_window_covers_unharvested_entries() {
        let cfg = ExpertConfig {
            stats_window: 1.0,
            ..ExpertConfig::default()
        };
        // 100 entries 0.1 s apart; the last second starts at index 89
        let h = history(&[0.5; 100]);
        assert_eq!(cfg.judged_from(&h, 5), 89);
        assert_eq!(cfg.judged_from(&h, 30), 70);
        assert_eq!(cfg.judged_from(&h, 100), 0);
        assert_eq!(cfg.judged_from::<f64>(&[], 0), 0);
    }

    #[test]
    fn p_expert_examples() {
        let cfg = ExpertConfig::default();
        let h = history(&[0.3, 0.9, 0.3]);
        let out = p_expert(&stats(5.0, 6.0, 1.2), 4, &h, &cfg, 10);
        assert_eq!(out.len(), 2);
        assert!(out
            .iter()
            .all(|s| s.y == 1 && s.weight == 1.0 && s.provenance == Provenance::PExpert));
        assert!(p_expert(&stats(5.0, 6.0, 0.0), 4, &h, &cfg, 10).is_empty());
        assert!(p_expert(&stats(5.0, 6.0, 10.0), 4, &h, &cfg, 10).is_empty());
    }

    #[test]
    fn p_expert_requires_tight_covariance() {
        let cfg = ExpertConfig::default();
        let mut s = stats(5.0, 6.0, 1.2);
        s.max_cov_trace = 3.0;
        assert!(p_expert(&s, 1, &history(&[0.1]), &cfg, 0).is_empty());
    }

    #[test]
    fn n_expert_examples() {
        let cfg = ExpertConfig::default();
        let out = n_expert(
            &stats(10.0, 0.05, 0.1),
            2,
            &history(&[0.8, 0.8, 0.8]),
            &cfg,
            3,
        );
        assert_eq!(out.len(), 3);
        assert!(out
            .iter()
            .all(|s| s.y == 0 && s.provenance == Provenance::NExpert));
        assert!(n_expert(&stats(5.0, 6.0, 1.2), 2, &history(&[0.8]), &cfg, 3).is_empty());
        assert!(n_expert(&stats(10.0, 0.05, 0.1), 2, &history(&[0.2, 0.2]), &cfg, 3).is_empty());
    }

    #[test]
    fn neither_predicate_emits_nothing() {
        // moving at walking speed but too briefly to judge
        let cfg = ExpertConfig::default();
        let s = stats(0.5, 0.6, 1.2);
        assert!(!cfg.plausible(&s) && !cfg.implausible(&s));
    }

    #[test]
    fn samples_reference_history() {
        let cfg = ExpertConfig::default();
        let h = history(&[0.9, 0.1, 0.7]);
        for s in n_expert(&stats(10.0, 0.05, 0.1), 9, &h, &cfg, 3) {
            let src = s.source.unwrap();
            assert_eq!(src.track_id, 9);
            let o = h.iter().find(|o| o.frame == src.frame).unwrap();
            assert_eq!(o.features, s.x);
        }
    }

    #[test]
    fn validation() {
        let cfg = ExpertConfig {
            speed_range: [3.0, 0.3],
            static_displacement: 2.0,
            ..Default::default()
        };
        assert_eq!(cfg.validate().len(), 2);
        assert!(ExpertConfig::default().validate().is_empty());
    }

    proptest! {
        #[test]
        fn experts_are_disjoint_and_deterministic(
            duration in 0.0f64..20.0,
            displacement in 0.0f64..10.0,
            speed in 0.0f64..5.0,
            cov in 0.0f64..4.0,
            scores in proptest::collection::vec(0.0f64..1.0, 0..12),
        ) {
            let cfg = ExpertConfig::default();
            let mut s = stats(duration, displacement, speed);
            s.max_cov_trace = cov;
            let h = history(&scores);
            let p = p_expert(&s, 1, &h, &cfg, 0);
            let n = n_expert(&s, 1, &h, &cfg, 0);
            prop_assert!(p.is_empty() || n.is_empty());
            prop_assert!(!(cfg.plausible(&s) && cfg.implausible(&s)));
            prop_assert_eq!(p, p_expert(&s, 1, &h, &cfg, 0));
            prop_assert_eq!(n, n_expert(&s, 1, &h, &cfg, 0));
        }
    }
}
