//! Regret, stability and convergence instrumentation.
//!
//! `u_t` is the number of correct predictions on a fixed held-out set at
//! evaluation step `t`. Stability is the summed variation of `u_t`; its time
//! average vanishing is the stabilization criterion. Regret compares the
//! online losses against the best fixed parameters in hindsight.

use serde::{Deserialize, Serialize};

use crate::detectors::{decide, sigmoid, softplus, DynamicModel, LabeledSample};
use crate::error::{Error, Result};
use crate::scalar::{dot, Scalar};

/// L2 coefficient that keeps the hindsight optimum bounded on separable data.
/// Every per-sample loss used for regret carries `L2 * ||(w, b)||^2`.
pub const L2: f64 = 1e-8;
/// Gradient norm at which the hindsight optimizer stops.
pub const HINDSIGHT_TOLERANCE: f64 = 1e-6;
pub const HINDSIGHT_MAX_ITERATIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord<T> {
    /// Frame at which the evaluation ran.
    pub t: u64,
    /// Correct predictions on the evaluation set.
    pub u: usize,
    /// Cumulative regularized online loss up to `t`.
    pub online_loss: T,
    pub eval_accuracy: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsLog<T> {
    pub records: Vec<EvalRecord<T>>,
    pub eval_set_size: usize,
    pub baseline_accuracy: T,
    /// Regularized loss of each sample under the parameters it was learned with.
    pub sample_losses: Vec<T>,
}

impl<T: Scalar> MetricsLog<T> {
    pub fn new(eval_set_size: usize, baseline_accuracy: T) -> Self {
        Self {
            records: Vec::new(),
            eval_set_size,
            baseline_accuracy,
            sample_losses: Vec::new(),
        }
    }

    pub fn cumulative_loss(&self) -> T {
        self.sample_losses
            .iter()
            .copied()
            .fold(T::zero(), |a, b| a + b)
    }

    /// Appends an evaluation; steps must strictly increase.
    pub fn push(&mut self, t: u64, u: usize, online_loss: T) -> Result<()> {
        if let Some(last) = self.records.last() {
            if t <= last.t {
                return Err(Error::InvalidArgument(format!(
                    "evaluation step {t} does not follow {}",
                    last.t
                )));
            }
        }
        if u > self.eval_set_size {
            return Err(Error::InvalidArgument(format!(
                "{u} correct predictions exceed evaluation set size {}",
                self.eval_set_size
            )));
        }
        self.records.push(EvalRecord {
            t,
            u,
            online_loss,
            eval_accuracy: T::of(u as f64 / self.eval_set_size.max(1) as f64),
        });
        Ok(())
    }

    /// Log restricted to its first `n` records.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            records: self.records[..n.min(self.records.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Summed absolute change of `u` over the first `steps` evaluations.
pub fn stability<T: Scalar>(log: &MetricsLog<T>, steps: usize) -> Result<T> {
    if steps > log.records.len() {
        return Err(Error::InsufficientData {
            needed: steps,
            have: log.records.len(),
        });
    }
    let total: usize = log.records[..steps]
        .windows(2)
        .map(|w| w[0].u.abs_diff(w[1].u))
        .sum();
    Ok(T::of(total as f64))
}

/// `stability(log, steps) / steps`.
pub fn stability_rate<T: Scalar>(log: &MetricsLog<T>, steps: usize) -> Result<T> {
    if steps == 0 {
        return Err(Error::InvalidArgument(
            "stability rate needs at least one step".into(),
        ));
    }
    Ok(stability(log, steps)? / T::of(steps as f64))
}

/// Mean of `|u_t - u_{t+1}| / eval_set_size` over the last `window` records.
pub fn windowed_stability_rate<T: Scalar>(log: &MetricsLog<T>, window: usize) -> Result<T> {
    let tail = tail(log, window)?;
    if tail.len() < 2 {
        return Ok(T::zero());
    }
    let total: usize = tail.windows(2).map(|w| w[0].u.abs_diff(w[1].u)).sum();
    Ok(T::of(
        total as f64 / ((tail.len() - 1) * log.eval_set_size.max(1)) as f64,
    ))
}

/// Mean evaluation accuracy over the last `window` records.
pub fn windowed_accuracy<T: Scalar>(log: &MetricsLog<T>, window: usize) -> Result<T> {
    let tail = tail(log, window)?;
    let sum = tail.iter().fold(T::zero(), |a, r| a + r.eval_accuracy);
    Ok(sum / T::of(tail.len() as f64))
}

fn tail<T: Scalar>(log: &MetricsLog<T>, window: usize) -> Result<&[EvalRecord<T>]> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if window > log.records.len() {
        return Err(Error::InsufficientData {
            needed: window,
            have: log.records.len(),
        });
    }
    Ok(&log.records[log.records.len() - window..])
}

/// True once performance has settled inside the expectation band: the
/// windowed variation rate is at most `tau` and the windowed accuracy is at
/// least `baseline - delta`.
pub fn converged<T: Scalar>(log: &MetricsLog<T>, window: usize, tau: T, delta: T) -> Result<bool> {
    let rate = windowed_stability_rate(log, window)?;
    let acc = windowed_accuracy(log, window)?;
    Ok(rate <= tau && acc >= log.baseline_accuracy - delta)
}

/// Number of correct predictions of `model` on `samples`.
pub fn correct_predictions<T: Scalar>(
    model: &DynamicModel<T>,
    samples: &[LabeledSample<T>],
) -> Result<usize> {
    let mut u = 0;
    for s in samples {
        if decide(model.predict(&s.x)?) == s.y {
            u += 1;
        }
    }
    Ok(u)
}

pub fn accuracy<T: Scalar>(model: &DynamicModel<T>, samples: &[LabeledSample<T>]) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("evaluation samples"));
    }
    Ok(T::of(
        correct_predictions(model, samples)? as f64 / samples.len() as f64,
    ))
}

/// Weighted logistic loss plus the L2 term, for parameters `(w, b)` packed
/// with the bias last.
pub fn regularized_loss<T: Scalar>(params: &[T], s: &LabeledSample<T>) -> Result<T> {
    let f = params.len() - 1;
    if s.x.len() != f {
        return Err(Error::Shape {
            expected: f,
            got: s.x.len(),
        });
    }
    let z = dot(&params[..f], &s.x) + params[f];
    let y = s.label();
    Ok(s.weight * (softplus(z) - y * z) + T::of(L2) * dot(params, params))
}

/// Regularized loss of the model's current parameters on `s`; this is what
/// the online learner is charged for `s`.
pub fn model_loss<T: Scalar>(model: &DynamicModel<T>, s: &LabeledSample<T>) -> Result<T> {
    let (loss, _) = model.loss_and_gradient(s)?;
    Ok(loss + T::of(L2) * model.param_norm_sq())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HindsightOptimum<T> {
    /// Weights followed by the bias.
    pub w_star: Vec<T>,
    /// Summed regularized loss at `w_star`.
    pub training_loss: T,
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: T,
}

impl<T: Scalar> HindsightOptimum<T> {
    pub fn model(&self, lr0: T) -> DynamicModel<T> {
        let f = self.w_star.len() - 1;
        DynamicModel {
            weights: self.w_star[..f].to_vec(),
            bias: self.w_star[f],
            updates: 0,
            lr0,
        }
    }
}

struct Objective<'a, T> {
    samples: &'a [LabeledSample<T>],
    dim: usize,
    l2: T,
}

impl<T: Scalar> Objective<'_, T> {
    fn value(&self, theta: &[T]) -> T {
        let f = self.dim - 1;
        let data = self.samples.iter().fold(T::zero(), |acc, s| {
            let z = dot(&theta[..f], &s.x) + theta[f];
            acc + s.weight * (softplus(z) - s.label() * z)
        });
        data + self.l2 * dot(theta, theta)
    }

    /// Gradient and Hessian (row-major, dim x dim).
    fn derivatives(&self, theta: &[T]) -> (Vec<T>, Vec<T>) {
        let (d, f) = (self.dim, self.dim - 1);
        let two = T::of(2.0);
        let mut g: Vec<T> = theta.iter().map(|&t| two * self.l2 * t).collect();
        let mut h = vec![T::zero(); d * d];
        for i in 0..d {
            h[i * d + i] = two * self.l2;
        }
        for s in self.samples {
            if s.weight == T::zero() {
                continue;
            }
            let z = dot(&theta[..f], &s.x) + theta[f];
            let p = sigmoid(z);
            let r = s.weight * (p - s.label());
            let c = s.weight * p * (T::one() - p);
            let xi = |k: usize| if k < f { s.x[k] } else { T::one() };
            for a in 0..d {
                let xa = xi(a);
                g[a] = g[a] + r * xa;
                let cxa = c * xa;
                for b in 0..=a {
                    h[a * d + b] = h[a * d + b] + cxa * xi(b);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[b * d + a] = h[a * d + b];
            }
        }
        (g, h)
    }
}

/// Solves `H x = b` for symmetric positive-definite `H` (row-major).
fn cholesky_solve<T: Scalar>(h: &[T], b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = h[i * n + j];
            for k in 0..j {
                s = s - l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let s = (0..i).fold(b[i], |acc, k| acc - l[i * n + k] * y[k]);
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let s = (i + 1..n).fold(y[i], |acc, k| acc - l[k * n + i] * x[k]);
        x[i] = s / l[i * n + i];
    }
    Some(x)
}

/// Batch minimizer of the summed regularized loss over every sample, by
/// damped Newton steps with Armijo backtracking.
pub fn hindsight_optimum<T: Scalar>(samples: &[LabeledSample<T>]) -> Result<HindsightOptimum<T>> {
    let first = samples
        .first()
        .ok_or(Error::EmptyInput("hindsight samples"))?;
    let f = first.x.len();
    if let Some(bad) = samples.iter().find(|s| s.x.len() != f) {
        return Err(Error::Shape {
            expected: f,
            got: bad.x.len(),
        });
    }
    let obj = Objective {
        samples,
        dim: f + 1,
        l2: T::of(L2 * samples.len() as f64),
    };
    let tol = T::of(HINDSIGHT_TOLERANCE);
    let mut theta = vec![T::zero(); f + 1];
    let mut value = obj.value(&theta);
    let mut iterations = 0;
    let mut converged = false;
    let mut grad_norm;
    loop {
        let (g, h) = obj.derivatives(&theta);
        grad_norm = dot(&g, &g).sqrt();
        if grad_norm <= tol {
            converged = true;
            break;
        }
        if iterations >= HINDSIGHT_MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let neg_g: Vec<T> = g.iter().map(|&v| -v).collect();
        let mut dir = cholesky_solve(&h, &neg_g).unwrap_or_else(|| neg_g.clone());
        let mut slope = dot(&g, &dir);
        if !(slope < T::zero()) {
            dir = neg_g;
            slope = -grad_norm * grad_norm;
        }
        let mut alpha = T::one();
        let c = T::of(1e-4);
        let mut improved = false;
        for _ in 0..60 {
            let trial: Vec<T> = theta
                .iter()
                .zip(&dir)
                .map(|(&t, &d)| t + alpha * d)
                .collect();
            let v = obj.value(&trial);
            if v <= value + c * alpha * slope {
                theta = trial;
                value = v;
                improved = true;
                break;
            }
            alpha = alpha * T::of(0.5);
        }
        if !improved {
            // no representable descent left at this precision
            break;
        }
    }
    Ok(HindsightOptimum {
        w_star: theta,
        training_loss: value,
        converged,
        iterations,
        gradient_norm: grad_norm,
    })
}

/// Online regularized loss minus the loss of `w_star`, both summed over `samples`.
pub fn regret<T: Scalar>(
    log: &MetricsLog<T>,
    opt: &HindsightOptimum<T>,
    samples: &[LabeledSample<T>],
) -> Result<T> {
    if log.sample_losses.len() != samples.len() {
        return Err(Error::Alignment {
            losses: log.sample_losses.len(),
            samples: samples.len(),
        });
    }
    let mut hindsight = T::zero();
    for s in samples {
        hindsight = hindsight + regularized_loss(&opt.w_star, s)?;
    }
    Ok(log.cumulative_loss() - hindsight)
}
