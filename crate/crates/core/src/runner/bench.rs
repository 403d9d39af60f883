use std::hint::black_box;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::detectors::{DynamicModel, LabeledSample, Provenance, StaticDetector};
use crate::error::Result;
use crate::pipeline::Pipeline;
use crate::simulator::{labeled_samples, ClusterSource, World};
use crate::streams::{substream, Substream};

use super::config::RunConfig;

const REPEATS: usize = 7;
/// Frames simulated per scale; shorter configs use their own horizon.
const BENCH_FRAMES: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTiming {
    pub f: usize,
    pub frames: u64,
    pub per_frame_ns: f64,
    pub per_prediction_ns: f64,
    pub per_update_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub base: ScaleTiming,
    pub scaled: ScaleTiming,
    /// `scaled.per_prediction_ns / base.per_prediction_ns`.
    pub prediction_ratio: f64,
    pub update_ratio: f64,
    pub frame_ratio: f64,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, out: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            out,
            "{:>6} {:>14} {:>18} {:>14}",
            "f", "frame (ns)", "prediction (ns)", "update (ns)"
        )?;
        for t in [&self.base, &self.scaled] {
            writeln!(
                out,
                "{:>6} {:>14.0} {:>18.1} {:>14.1}",
                t.f, t.per_frame_ns, t.per_prediction_ns, t.per_update_ns
            )?;
        }
        write!(
            out,
            "ratio {}x/{}: prediction {:.2}, update {:.2}, frame {:.2}",
            self.scaled.f, self.base.f, self.prediction_ratio, self.update_ratio, self.frame_ratio
        )
    }
}

/// Times frames, predictions and updates at the configured feature
/// dimension `f` and at `4f`.
pub fn bench(cfg: &RunConfig) -> Result<BenchReport> {
    cfg.check()?;
    let f = cfg.world.feature_dim;
    let base = time_scale(cfg, f)?;
    let scaled = time_scale(cfg, 4 * f)?;
    Ok(BenchReport {
        prediction_ratio: scaled.per_prediction_ns / base.per_prediction_ns,
        update_ratio: scaled.per_update_ns / base.per_update_ns,
        frame_ratio: scaled.per_frame_ns / base.per_frame_ns,
        base,
        scaled,
    })
}

fn best_of<F: FnMut() -> f64>(mut run: F) -> f64 {
    (0..REPEATS).map(|_| run()).fold(f64::INFINITY, f64::min)
}

fn time_scale(cfg: &RunConfig, f: usize) -> Result<ScaleTiming> {
    let mut world_cfg = cfg.world.clone();
    world_cfg.feature_dim = f;
    world_cfg.frames = world_cfg.frames.min(BENCH_FRAMES);
    let frames = world_cfg.frames;

    let samples: Vec<LabeledSample<f64>> =
        labeled_samples(&world_cfg, 256, Substream::Labeled, Provenance::Fusion)?;
    let mut rng = substream(cfg.seed(), Substream::Labeled);
    let mut model = DynamicModel::new(f, cfg.learner.lr0);
    for w in &mut model.weights {
        *w = rng.gen_range(-1.0..1.0);
    }
    // comparable total work at every scale
    let n = (4_000_000 / f).max(4096);

    let per_prediction_ns = best_of(|| {
        let start = Instant::now();
        let mut acc = 0.0;
        for i in 0..n {
            acc += model
                .predict(black_box(&samples[i % samples.len()].x))
                .unwrap_or(0.0);
        }
        black_box(acc);
        start.elapsed().as_nanos() as f64 / n as f64
    });
    let per_update_ns = best_of(|| {
        let mut m = model.clone();
        let start = Instant::now();
        for i in 0..n {
            let _ = m.update(black_box(&samples[i % samples.len()]));
        }
        black_box(&m);
        start.elapsed().as_nanos() as f64 / n as f64
    });

    let mut world = World::new(world_cfg.clone())?;
    let mut pipeline: Pipeline<f64> = Pipeline::framework_b(
        f,
        cfg.tracker.clone(),
        cfg.learner.clone(),
        StaticDetector::new(cfg.static_detector, cfg.seed())?,
    )?;
    let mut elapsed = 0u128;
    while let Some(clusters) = ClusterSource::<f64>::next_frame(&mut world)? {
        let start = Instant::now();
        pipeline.step(&clusters, world_cfg.dt)?;
        elapsed += start.elapsed().as_nanos();
    }
    Ok(ScaleTiming {
        f,
        frames,
        per_frame_ns: elapsed as f64 / frames as f64,
        per_prediction_ns,
        per_update_ns,
    })
}
