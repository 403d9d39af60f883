//! Acceptance suite. Runs every criterion in sequence, prints one PASS/FAIL
//! line each, then fails if any criterion failed.
//!
//! Timing budgets assume an optimized build (the workspace test profile).

use std::fs;
use std::hint::black_box;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trackteach::detectors::{DynamicModel, LabeledSample, Provenance};
use trackteach::fusion::fuse_probabilities;
use trackteach::kalman::{update, Gaussian};
use trackteach::metrics::{hindsight_optimum, model_loss, regret, MetricsLog};
use trackteach::pipeline::Mode;
use trackteach::runner::{self, RunArtifacts, RunConfig};
use trackteach::simulator::{labeled_samples, WorldConfig};
use trackteach::streams::Substream;
use trackteach::tracker::{associate, gated_costs, Observation, Track, TrackerConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

/// Every multiset of `k` values from `grid`, as index-sorted vectors.
fn multisets(grid: &[f64], k: usize) -> Vec<Vec<f64>> {
    fn go(grid: &[f64], start: usize, k: usize, cur: &mut Vec<f64>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..grid.len() {
            cur.push(grid[i]);
            go(grid, i, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(grid, 0, k, &mut Vec::new(), &mut out);
    out
}

fn permutations(v: &[f64]) -> Vec<Vec<f64>> {
    if v.len() <= 1 {
        return vec![v.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..v.len() {
        let mut rest = v.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

fn fusion_oracle() -> Outcome {
    let start = Instant::now();
    let grid: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
    let (mut sets, mut worst, mut invariant) = (0, 0.0f64, true);
    for k in 1..=5 {
        for set in multisets(&grid, k) {
            sets += 1;
            // product of odds, then o / (1 + o)
            let odds: f64 = set.iter().map(|p| p / (1.0 - p)).product();
            let direct = odds / (1.0 + odds);
            let fused: f64 = fuse_probabilities(set.iter().copied()).unwrap();
            worst = worst.max((fused - direct).abs());
            for perm in permutations(&set) {
                invariant &=
                    fuse_probabilities::<f64, _>(perm).unwrap().to_bits() == fused.to_bits();
            }
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-12 && invariant && within(t, 1.0),
        format!("{sets} multisets, max |err| {worst:.2e}, permutation-exact {invariant}, {t:.2?}"),
    )
}

fn reference_loss(w: &[f64], b: f64, s: &LabeledSample<f64>) -> f64 {
    let z: f64 = w.iter().zip(&s.x).map(|(a, x)| a * x).sum::<f64>() + b;
    s.weight * (z.max(0.0) + (-z.abs()).exp().ln_1p() - f64::from(s.y) * z)
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let h = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let f = rng.gen_range(1..=32);
        let scale = 1.0 / (f as f64).sqrt();
        let mut m = DynamicModel::new(f, 0.5);
        for w in &mut m.weights {
            *w = rng.gen_range(-scale..scale);
        }
        m.bias = rng.gen_range(-1.0..1.0);
        let x = (0..f).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let s = LabeledSample::new(
            x,
            rng.gen_range(0..=1),
            rng.gen_range(0.05..1.0),
            Provenance::Fusion,
            0,
        )
        .unwrap();
        let (_, grad) = m.loss_and_gradient(&s).unwrap();
        for k in 0..=f {
            let (mut wp, mut wm) = (m.weights.clone(), m.weights.clone());
            let (mut bp, mut bm) = (m.bias, m.bias);
            if k < f {
                wp[k] += h;
                wm[k] -= h;
            } else {
                bp += h;
                bm -= h;
            }
            let numeric = (reference_loss(&wp, bp, &s) - reference_loss(&wm, bm, &s)) / (2.0 * h);
            let err = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-5 && within(t, 1.0),
        format!("100 pairs, max relative error {worst:.2e}, {t:.2?}"),
    )
}

fn brute_force(costs: &[Vec<Option<f64>>], m: usize) -> (usize, f64) {
    fn go(
        costs: &[Vec<Option<f64>>],
        row: usize,
        used: &mut [bool],
        pairs: usize,
        sum: f64,
        best: &mut (usize, f64),
    ) {
        if row == costs.len() {
            if pairs > best.0 || (pairs == best.0 && sum < best.1) {
                *best = (pairs, sum);
            }
            return;
        }
        go(costs, row + 1, used, pairs, sum, best);
        for c in 0..used.len() {
            if let (false, Some(d)) = (used[c], costs[row][c]) {
                used[c] = true;
                go(costs, row + 1, used, pairs + 1, sum + d, best);
                used[c] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(costs, 0, &mut vec![false; m], 0, 0.0, &mut best);
    best
}

fn association_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = TrackerConfig::default();
    let r = cfg.measurement_noise::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(0..=6);
        let m = rng.gen_range(0..=6);
        let mut tracks: Vec<Track<f64>> = (0..n)
            .map(|i| {
                let o = Observation {
                    frame: 0,
                    time: 0.0,
                    cluster_index: 0,
                    centroid: [rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5)],
                    features: vec![],
                    dynamic_score: 0.5,
                    static_score: None,
                };
                Track::spawn(i as u64 + 1, o, &cfg)
            })
            .collect();
        for t in &mut tracks {
            t.filter.mean[2] = rng.gen_range(-1.0..1.0);
            t.filter.mean[3] = rng.gen_range(-1.0..1.0);
            t.predict(rng.gen_range(0.05..0.5), 0.5).unwrap();
        }
        let clusters: Vec<[f64; 2]> = (0..m)
            .map(|_| [rng.gen_range(0.0..1.5), rng.gen_range(0.0..1.5)])
            .collect();
        let costs = gated_costs(&tracks, &clusters, &r, cfg.gate);
        let a = associate(&tracks, &clusters, &r, cfg.gate);
        let got: f64 = a.pairs.iter().map(|&(t, c)| costs[t][c].unwrap()).sum();
        if (a.pairs.len(), got) != brute_force(&costs, m) {
            mismatches += 1;
        }
    }
    let t = start.elapsed();
    outcome(
        mismatches == 0 && within(t, 5.0),
        format!("1000 instances, {mismatches} mismatches, {t:.2?}"),
    )
}

fn kalman_hand_case() -> Outcome {
    let prior = Gaussian {
        mean: [0.0f64],
        cov: [[1.0]],
    };
    let post = update(&prior, &[1.0], &[[1.0]], &[[1.0]]).unwrap();
    let (x, p) = (post.mean[0], post.cov[0][0]);
    outcome(
        (x - 0.5).abs() <= 1e-12 && (p - 0.5).abs() <= 1e-12,
        format!("x' = {x}, P' = {p}"),
    )
}

fn regret_sublinear() -> Outcome {
    let start = Instant::now();
    let cfg = WorldConfig {
        class_feature_separation: 8.0,
        feature_noise: 0.5,
        ..WorldConfig::default()
    };
    let stream: Vec<LabeledSample<f64>> =
        labeled_samples(&cfg, 10_000, Substream::Labeled, Provenance::Fusion).unwrap();
    let avg = |t: usize| {
        let s = &stream[..t];
        let opt = hindsight_optimum(s).unwrap();
        let mut m = DynamicModel::new(cfg.feature_dim, 0.5);
        let mut log = MetricsLog::new(1, 0.5);
        for x in s {
            log.sample_losses.push(model_loss(&m, x).unwrap());
            m.update(x).unwrap();
        }
        (regret(&log, &opt, s).unwrap() / t as f64, opt.converged)
    };
    let ((early, c1), (late, c2)) = (avg(1000), avg(10_000));
    let t = start.elapsed();
    outcome(
        c1 && c2 && late <= 0.5 * early && within(t, 10.0),
        format!(
            "R/T {early:.5} at 1000, {late:.5} at 10000 (ratio {:.3}), optimum converged {}, {t:.2?}",
            late / early,
            c1 && c2
        ),
    )
}

fn default_framework_b(dir: &std::path::Path) -> (RunArtifacts, Duration) {
    let mut cfg = RunConfig {
        mode: Mode::FrameworkB,
        output_dir: Some(dir.to_path_buf()),
        ..RunConfig::default()
    };
    cfg.world.frames = 20_000;
    cfg.output.frame_records = false;
    let start = Instant::now();
    let a = runner::run_experiment(&cfg).unwrap();
    (a, start.elapsed())
}

fn stability(a: &RunArtifacts, t: Duration) -> Outcome {
    let s = &a.summary;
    let wsr = s.windowed_stability_rate.unwrap_or(f64::NAN);
    outcome(
        a.completed() && wsr <= 0.02 && s.converged && within(t, 60.0),
        format!(
            "windowed stability {:.4} (<= 0.02), converged at {:?}, {t:.2?}",
            wsr, s.converged_step
        ),
    )
}

fn transfer(a: &RunArtifacts) -> Outcome {
    let s = &a.summary;
    let hindsight = s.hindsight_eval_accuracy.unwrap_or(f64::NAN);
    outcome(
        s.dyn_eval_accuracy >= s.static_eval_accuracy - 0.02
            && (s.dyn_eval_accuracy - hindsight).abs() <= 0.05,
        format!(
            "dyn {:.4}, static {:.4}, hindsight {:.4}",
            s.dyn_eval_accuracy, s.static_eval_accuracy, hindsight
        ),
    )
}

fn single_seed_framework_a(dir: &std::path::Path) -> Outcome {
    let mut cfg = RunConfig {
        mode: Mode::FrameworkA,
        output_dir: Some(dir.to_path_buf()),
        ..RunConfig::default()
    };
    cfg.world.class_feature_separation = 6.0;
    cfg.world.feature_noise = 0.5;
    cfg.world.frames = 20_000;
    cfg.seeding.positives = 1;
    cfg.seeding.negatives = 0;
    cfg.output.frame_records = false;
    let a = runner::run_experiment(&cfg).unwrap();
    let seeds = a
        .samples
        .iter()
        .filter(|s| s.provenance == Provenance::Seed)
        .count();
    outcome(
        a.completed() && seeds == 1 && a.summary.dyn_eval_accuracy >= 0.8,
        format!(
            "{seeds} seed sample, final accuracy {:.4}",
            a.summary.dyn_eval_accuracy
        ),
    )
}

fn determinism(dir: &std::path::Path) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for mode in [Mode::FrameworkA, Mode::FrameworkB] {
        let run = |tag: &str| {
            let mut cfg = RunConfig {
                mode,
                output_dir: Some(dir.join(format!("{mode:?}_{tag}"))),
                ..RunConfig::default()
            };
            cfg.world.frames = 3000;
            cfg.output.record_samples = true;
            runner::run_experiment(&cfg).unwrap()
        };
        let (a, b) = (run("first"), run("second"));
        let csv = fs::read(&a.metrics_csv).unwrap() == fs::read(&b.metrics_csv).unwrap();
        let snap = fs::read(a.final_snapshot().unwrap()).unwrap()
            == fs::read(b.final_snapshot().unwrap()).unwrap();
        let replayed =
            runner::replay_sample_log(&a.dir.join("samples.jsonl"), a.model.dim(), 0.5).unwrap();
        let bits = replayed
            .weights
            .iter()
            .zip(&a.model.weights)
            .all(|(x, y)| x.to_bits() == y.to_bits())
            && replayed.bias.to_bits() == a.model.bias.to_bits();
        ok &= csv && snap && bits;
        notes.push(format!(
            "{mode:?}: csv {csv}, snapshot {snap}, replay {bits}"
        ));
    }
    outcome(ok, notes.join("; "))
}

fn predict_ns(f: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(f as u64);
    let mut m = DynamicModel::<f64>::new(f, 0.5);
    for w in &mut m.weights {
        *w = rng.gen_range(-0.1..0.1);
    }
    let xs: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..f).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let calls = 500_000;
    let start = Instant::now();
    let mut acc = 0.0;
    for i in 0..calls {
        acc += m.predict(black_box(&xs[i % xs.len()])).unwrap();
    }
    black_box(acc);
    start.elapsed().as_nanos() as f64 / calls as f64
}

fn performance(dir: &std::path::Path) -> Outcome {
    let mut cfg = RunConfig {
        mode: Mode::FrameworkB,
        output_dir: Some(dir.to_path_buf()),
        ..RunConfig::default()
    };
    cfg.world.frames = 10_000;
    cfg.output.frame_records = false;
    let start = Instant::now();
    let a = runner::run_experiment(&cfg).unwrap();
    let t = start.elapsed();
    let (mut small, mut large) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..5 {
        small = small.min(predict_ns(128));
        large = large.min(predict_ns(512));
    }
    let ratio = large / small;
    outcome(
        a.completed() && cfg.world.n_humans + cfg.world.n_clutter == 20 && within(t, 30.0) && ratio <= 5.0,
        format!("10000 frames in {t:.2?}; predict {small:.1} ns at f=128, {large:.1} ns at f=512, ratio {ratio:.2}"),
    )
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "fusion oracle equivalence", fusion_oracle()),
        (2, "gradient check", gradient_check()),
        (3, "association oracle", association_oracle()),
        (4, "Kalman hand case", kalman_hand_case()),
        (5, "regret sublinearity", regret_sublinear()),
    ];
    let (b_run, b_time) = default_framework_b(&tmp.path().join("framework_b"));
    results.push((6, "stability convergence", stability(&b_run, b_time)));
    results.push((7, "transfer quality", transfer(&b_run)));
    results.push((
        8,
        "single-seed framework A",
        single_seed_framework_a(&tmp.path().join("framework_a")),
    ));
    results.push((
        9,
        "determinism",
        determinism(&tmp.path().join("determinism")),
    ));
    results.push((
        10,
        "performance budget",
        performance(&tmp.path().join("perf")),
    ));

    for (n, name, o) in &results {
        println!(
            "criterion {n:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
