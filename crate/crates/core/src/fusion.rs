//! Odds-based fusion of independent detector confidences.
//!
//! Every detection contributes its odds `p / (1 - p)`; the fused odds are the
//! product over all detectors and all of their detections, mapped back to a
//! probability with `o / (1 + o)`. The product is accumulated as a sum of
//! log-odds so that long windows of confident detections cannot overflow.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[EPSILON, 1 - EPSILON]` before conversion.
pub const EPSILON: f64 = 1e-6;

/// Confidence reported by detector `detector_id` for its `detection_id`-th detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfidence<T> {
    pub prob: T,
    pub detector_id: usize,
    pub detection_id: usize,
}

impl<T: Scalar> DetectionConfidence<T> {
    pub fn new(prob: T, detector_id: usize, detection_id: usize) -> Result<Self> {
        Ok(Self {
            prob: clamp_probability(prob)?,
            detector_id,
            detection_id,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet<T> {
    detections: Vec<DetectionConfidence<T>>,
    detectors: usize,
    max_per_detector: usize,
}

impl<T: Scalar> DetectionSet<T> {
    pub fn new(detections: Vec<DetectionConfidence<T>>, detectors: usize) -> Result<Self> {
        if detections.is_empty() {
            return Err(Error::EmptyInput("detection set"));
        }
        if detectors == 0 {
            return Err(Error::InvalidArgument(
                "detection set needs at least one detector".into(),
            ));
        }
        let mut per_detector = vec![0usize; detectors];
        for d in &detections {
            if d.detector_id >= detectors {
                return Err(Error::InvalidArgument(format!(
                    "detector id {} out of range for {} detectors",
                    d.detector_id, detectors
                )));
            }
            per_detector[d.detector_id] += 1;
        }
        let max_per_detector = per_detector.into_iter().max().unwrap_or(0);
        Ok(Self {
            detections,
            detectors,
            max_per_detector,
        })
    }

    /// Builds a set where every probability comes from one detector.
    pub fn from_single_detector(probs: &[T]) -> Result<Self> {
        let detections = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| DetectionConfidence::new(p, 0, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(detections, 1)
    }

    pub fn detections(&self) -> &[DetectionConfidence<T>] {
        &self.detections
    }

    /// Number of distinct detectors `o`.
    pub fn detectors(&self) -> usize {
        self.detectors
    }

    /// Largest number of detections any single detector contributed (`k`).
    pub fn max_per_detector(&self) -> usize {
        self.max_per_detector
    }
}

fn clamp_probability<T: Scalar>(p: T) -> Result<T> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::InvalidProbability(p.to_f64_lossy()));
    }
    let eps = T::of(EPSILON);
    Ok(p.max(eps).min(T::one() - eps))
}

/// Odds `p / (1 - p)` of a probability, after clamping.
pub fn odds<T: Scalar>(p: T) -> Result<T> {
    let p = clamp_probability(p)?;
    Ok(p / (T::one() - p))
}

/// Log-odds of a probability, after clamping.
pub fn log_odds<T: Scalar>(p: T) -> Result<T> {
    let p = clamp_probability(p)?;
    Ok(p.ln() - (T::one() - p).ln())
}

/// Logistic inverse of [`log_odds`], stable for large magnitudes.
pub fn probability_from_log_odds<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Fused probability of class Y given every detection in the set.
pub fn fuse<T: Scalar>(ds: &DetectionSet<T>) -> Result<T> {
    fuse_probabilities(ds.detections.iter().map(|d| d.prob))
}

/// Fuses raw probabilities, treating each one as an independent detection.
pub fn fuse_probabilities<T: Scalar, I>(probs: I) -> Result<T>
where
    I: IntoIterator<Item = T>,
{
    let mut terms = probs
        .into_iter()
        .map(log_odds)
        .collect::<Result<Vec<T>>>()?;
    if terms.is_empty() {
        return Err(Error::EmptyInput("detection set"));
    }
    // canonical order: the sum is then independent of input order
    terms.sort_by(|a, b| {
        a.partial_cmp(b)
            .expect("log-odds are finite after clamping")
    });
    let z = terms.into_iter().fold(T::zero(), |acc, t| acc + t);
    Ok(probability_from_log_odds(z))
}
