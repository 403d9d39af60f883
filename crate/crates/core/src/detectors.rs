//! The fixed "static" teacher detector and the online "dynamic" classifier.
//!
//! The dynamic classifier is logistic regression trained by online gradient
//! descent with step size `lr0 / sqrt(t)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{probability_from_log_odds, DetectionConfidence, EPSILON};
use crate::scalar::{dot, Scalar};
use crate::simulator::{Class, FeatureCluster};
use crate::streams::{substream, Substream};

pub type FeatureVector<T> = Vec<T>;

/// Where a training sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Seed,
    PExpert,
    NExpert,
    Fusion,
    /// Held-out evaluation data; never enters a learner's sample log.
    Evaluation,
}

/// Track history entry a sample was harvested from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterRef {
    pub track_id: u64,
    pub frame: u64,
    /// Index of the cluster within its frame.
    pub cluster_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample<T> {
    pub x: FeatureVector<T>,
    /// 1 = human, 0 = not human.
    pub y: u8,
    pub weight: T,
    pub provenance: Provenance,
    pub frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<ClusterRef>,
}

impl<T: Scalar> LabeledSample<T> {
    pub fn new(
        x: FeatureVector<T>,
        y: u8,
        weight: T,
        provenance: Provenance,
        frame: u64,
    ) -> Result<Self> {
        if y > 1 {
            return Err(Error::InvalidArgument(format!(
                "label must be 0 or 1, got {y}"
            )));
        }
        if !(weight >= T::zero() && weight <= T::one()) {
            return Err(Error::InvalidArgument(format!(
                "sample weight must lie in [0, 1], got {}",
                weight
            )));
        }
        Ok(Self {
            x,
            y,
            weight,
            provenance,
            frame,
            source: None,
        })
    }

    pub fn with_source(mut self, source: ClusterRef) -> Self {
        self.source = Some(source);
        self
    }

    pub fn label(&self) -> T {
        if self.y == 1 {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// Online logistic classifier `h(x, w) = sigmoid(w . x + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub updates: u64,
    pub lr0: T,
}

impl<T: Scalar> DynamicModel<T> {
    pub fn new(dim: usize, lr0: T) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
            updates: 0,
            lr0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn check_dim(&self, x: &[T]) -> Result<()> {
        if x.len() != self.weights.len() {
            return Err(Error::Shape {
                expected: self.weights.len(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Linear score `w . x + b`.
    pub fn margin(&self, x: &[T]) -> Result<T> {
        self.check_dim(x)?;
        Ok(dot(&self.weights, x) + self.bias)
    }

    /// Probability that `x` is a human.
    pub fn predict(&self, x: &[T]) -> Result<T> {
        Ok(sigmoid(self.margin(x)?))
    }

    /// Weighted logistic loss of `s` and its gradient with respect to
    /// `(weights, bias)`; the bias component is last.
    pub fn loss_and_gradient(&self, s: &LabeledSample<T>) -> Result<(T, Vec<T>)> {
        let z = self.margin(&s.x)?;
        let y = s.label();
        let loss = s.weight * (softplus(z) - y * z);
        let coeff = s.weight * (sigmoid(z) - y);
        let mut grad: Vec<T> = s.x.iter().map(|&xi| coeff * xi).collect();
        grad.push(coeff);
        Ok((loss, grad))
    }

    /// Step size for the next update.
    pub fn learning_rate(&self) -> T {
        self.lr0 / T::of((self.updates + 1) as f64).sqrt()
    }

    /// One online gradient step on `s`. Returns the loss of `s` evaluated
    /// before the step. On failure the model is left untouched.
    pub fn update(&mut self, s: &LabeledSample<T>) -> Result<T> {
        let (loss, grad) = self.loss_and_gradient(s)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericalFailure("non-finite gradient".into()));
        }
        let eta = self.learning_rate();
        let (gw, gb) = grad.split_at(self.weights.len());
        for (w, &g) in self.weights.iter_mut().zip(gw) {
            *w = *w - eta * g;
        }
        self.bias = self.bias - eta * gb[0];
        self.updates += 1;
        Ok(loss)
    }

    /// Squared Euclidean norm of all parameters, bias included.
    pub fn param_norm_sq(&self) -> T {
        dot(&self.weights, &self.weights) + self.bias * self.bias
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    probability_from_log_odds(z)
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Predicted label under the 0.5 decision threshold.
pub fn decide<T: Scalar>(p: T) -> u8 {
    u8::from(p >= T::of(0.5))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticDetectorConfig {
    /// Probability the emitted confidence lands on the correct side of 0.5.
    pub accuracy: f64,
    /// Larger values push confidences toward 0 and 1.
    pub confidence_concentration: f64,
    /// Defaults to the run's master seed when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for StaticDetectorConfig {
    fn default() -> Self {
        Self {
            accuracy: 0.9,
            confidence_concentration: 2.0,
            seed: None,
        }
    }
}

impl StaticDetectorConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.accuracy > 0.5 && self.accuracy <= 1.0) {
            errs.push(format!(
                "static_detector.accuracy must lie in (0.5, 1], got {}",
                self.accuracy
            ));
        }
        if !(self.confidence_concentration > 0.0) {
            errs.push(format!(
                "static_detector.confidence_concentration must be positive, got {}",
                self.confidence_concentration
            ));
        }
        errs
    }
}

/// A pretrained detector stand-in: it sees the hidden class and reports a
/// confidence that is correct with probability `accuracy`.
#[derive(Debug, Clone)]
pub struct StaticDetector {
    cfg: StaticDetectorConfig,
    seed: u64,
    stream: Substream,
    next_draw: u64,
}

impl StaticDetector {
    pub fn new(cfg: StaticDetectorConfig, master_seed: u64) -> Result<Self> {
        Self::on_stream(cfg, master_seed, Substream::StaticDetector)
    }

    pub(crate) fn on_stream(
        cfg: StaticDetectorConfig,
        master_seed: u64,
        stream: Substream,
    ) -> Result<Self> {
        let errs = cfg.validate();
        if !errs.is_empty() {
            return Err(Error::Validation(errs));
        }
        Ok(Self {
            seed: cfg.seed.unwrap_or(master_seed),
            cfg,
            stream,
            next_draw: 0,
        })
    }

    pub fn config(&self) -> &StaticDetectorConfig {
        &self.cfg
    }

    pub fn draws(&self) -> u64 {
        self.next_draw
    }

    /// Confidence for an object of class `truth` at a given draw index.
    /// Pure: the same `(seed, draw)` always yields the same value.
    pub fn confidence_at<T: Scalar>(&self, truth: Class, draw: u64) -> T {
        let mut rng = substream(self.seed, self.stream);
        // two u64 draws per detection
        rng.set_word_pos(u128::from(draw) * 4);
        let coin: f64 = rng.gen();
        let u: f64 = rng.gen();
        let correct = coin < self.cfg.accuracy;
        let margin = 0.5 * (1.0 - u.powf(self.cfg.confidence_concentration));
        let says_human = correct == (truth == Class::Human);
        let p = if says_human {
            0.5 + margin
        } else {
            0.5 - margin
        };
        T::of(p.clamp(EPSILON, 1.0 - EPSILON))
    }

    /// Scores a cluster with the next draw of the detector's stream.
    pub fn detect<T: Scalar>(&mut self, cluster: &FeatureCluster<T>) -> T {
        let p = self.confidence_at(cluster.truth, self.next_draw);
        self.next_draw += 1;
        p
    }

    pub fn detection<T: Scalar>(
        &mut self,
        cluster: &FeatureCluster<T>,
        detection_id: usize,
    ) -> DetectionConfidence<T> {
        DetectionConfidence {
            prob: self.detect(cluster),
            detector_id: 0,
            detection_id,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(x: Vec<f64>, y: u8, weight: f64) -> LabeledSample<f64> {
        LabeledSample::new(x, y, weight, Provenance::Seed, 0).unwrap()
    }

    #[test]
    fn predict_examples() {
        let m = DynamicModel::<f64>::new(3, 0.5);
        assert_eq!(m.predict(&[1.0, -2.0, 3.0]).unwrap(), 0.5);

        let mut m = DynamicModel::<f64>::new(1, 0.5);
        m.bias = 3f64.ln();
        assert!((m.predict(&[0.0]).unwrap() - 0.75).abs() < 1e-12);
        m.bias = -50.0;
        let p = m.predict(&[0.0]).unwrap();
        assert!(p < 1e-20 && p > 0.0);
    }

    #[test]
    fn shape_errors() {
        let m = DynamicModel::<f64>::new(2, 0.5);
        assert!(matches!(
            m.predict(&[1.0]),
            Err(Error::Shape {
                expected: 2,
                got: 1
            })
        ));
        assert!(matches!(
            m.loss_and_gradient(&sample(vec![1.0; 3], 1, 1.0)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn loss_and_gradient_examples() {
        let m = DynamicModel::<f64>::new(2, 0.5);
        let (loss, grad) = m
            .loss_and_gradient(&sample(vec![1.0, 0.0], 1, 1.0))
            .unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(grad, vec![-0.5, 0.0, -0.5]);

        let (loss, grad) = m
            .loss_and_gradient(&sample(vec![3.0, -7.0], 1, 1.0))
            .unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-12);
        assert_eq!(grad.len(), 3);

        let (loss, grad) = m
            .loss_and_gradient(&sample(vec![3.0, -7.0], 0, 0.0))
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn update_examples() {
        let mut m = DynamicModel::<f64>::new(2, 1.0);
        m.update(&sample(vec![1.0, 0.0], 1, 1.0)).unwrap();
        assert_eq!(m.weights, vec![0.5, 0.0]);
        assert_eq!(m.bias, 0.5);
        assert_eq!(m.updates, 1);

        let before = m.clone();
        m.update(&sample(vec![4.0, 2.0], 0, 0.0)).unwrap();
        assert_eq!(m.weights, before.weights);
        assert_eq!(m.bias, before.bias);
        assert_eq!(m.updates, 2);
    }

    #[test]
    fn repeated_steps_decrease_loss_to_tolerance() {
        // the 1/sqrt(t) schedule crawls along the logistic tail, so a large
        // base rate is needed to reach 1e-8 in a bounded number of steps
        let mut m = DynamicModel::<f64>::new(2, 20.0);
        let s = sample(vec![0.7, -1.2], 1, 1.0);
        let mut last = m.loss_and_gradient(&s).unwrap().0;
        let mut steps = 0;
        while last >= 1e-8 {
            m.update(&s).unwrap();
            let now = m.loss_and_gradient(&s).unwrap().0;
            assert!(now < last, "loss went from {last} to {now} at step {steps}");
            last = now;
            steps += 1;
            assert!(steps < 100_000);
        }
    }

    #[test]
    fn repeated_steps_decrease_loss_at_default_rate() {
        let mut m = DynamicModel::<f64>::new(2, 0.5);
        let s = sample(vec![0.7, -1.2], 0, 1.0);
        let mut last = m.loss_and_gradient(&s).unwrap().0;
        for _ in 0..1000 {
            m.update(&s).unwrap();
            let now = m.loss_and_gradient(&s).unwrap().0;
            assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn non_finite_gradient_leaves_model_unchanged() {
        let mut m = DynamicModel::<f64>::new(2, 0.5);
        let before = m.clone();
        let err = m.update(&sample(vec![f64::INFINITY, 0.0], 1, 1.0));
        assert!(matches!(err, Err(Error::NumericalFailure(_))));
        assert_eq!(m, before);
    }

    #[test]
    fn sample_validation() {
        assert!(LabeledSample::new(vec![0.0f64], 2, 1.0, Provenance::Seed, 0).is_err());
        assert!(LabeledSample::new(vec![0.0f64], 1, 1.5, Provenance::Seed, 0).is_err());
        assert!(LabeledSample::new(vec![0.0f64], 1, -0.1, Provenance::Seed, 0).is_err());
    }

    #[test]
    fn static_detector_limits() {
        let cfg = StaticDetectorConfig {
            accuracy: 1.0,
            confidence_concentration: f64::INFINITY,
            seed: Some(7),
        };
        let det = StaticDetector::new(cfg, 0).unwrap();
        for draw in 0..100 {
            assert_eq!(det.confidence_at::<f64>(Class::Human, draw), 1.0 - EPSILON);
            assert_eq!(det.confidence_at::<f64>(Class::Clutter, draw), EPSILON);
        }
    }

    #[test]
    fn static_detector_hits_configured_rate() {
        let cfg = StaticDetectorConfig {
            accuracy: 0.9,
            confidence_concentration: 2.0,
            seed: Some(11),
        };
        let det = StaticDetector::new(cfg, 0).unwrap();
        let hits = (0..10_000u64)
            .filter(|&d| det.confidence_at::<f64>(Class::Human, d) > 0.5)
            .count();
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.9).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn static_detector_is_deterministic_per_draw() {
        let det = StaticDetector::new(StaticDetectorConfig::default(), 99).unwrap();
        let a: f64 = det.confidence_at(Class::Human, 1234);
        let b: f64 = det.confidence_at(Class::Human, 1234);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a, det.confidence_at::<f64>(Class::Human, 1235));
    }

    #[test]
    fn static_config_validation() {
        let bad = StaticDetectorConfig {
            accuracy: 0.5,
            confidence_concentration: 0.0,
            seed: None,
        };
        assert_eq!(bad.validate().len(), 2);
        assert!(StaticDetector::new(bad, 0).is_err());
    }
}
