use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use trackteach::pipeline::Mode;
use trackteach::runner::{self, Overrides, RunArtifacts, RunConfig, Snapshot};
use trackteach::Error;

/// Online detector-teaching experiments on a simulated tracking stream.
#[derive(Parser)]
#[command(name = "trackteach", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment (or a parallel seed sweep with --seeds).
    Run(RunArgs),
    /// Evaluate a model snapshot on the config's evaluation set.
    Eval {
        #[arg(long)]
        snapshot: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Time frames, predictions and updates at f and 4f.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-run from a stream dump, or rebuild a model from a sample log.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// framework_a | framework_b (or a | b).
    #[arg(long)]
    mode: Option<Mode>,
    /// Run directory; defaults to $TRACKTEACH_OUTPUT_ROOT/<config name>.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    frames: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Seed sweep `a..b` or `a..=b`, one subdirectory per seed.
    #[arg(long)]
    seeds: Option<String>,
}

#[derive(Args)]
struct ReplayArgs {
    #[command(flatten)]
    common: Common,
    /// Stream dump (`stream.jsonl`) to run instead of the simulator.
    #[arg(long, conflicts_with = "samples")]
    stream: Option<PathBuf>,
    /// Sample log (`samples.jsonl`) to feed through a fresh model.
    #[arg(long, required_unless_present = "stream")]
    samples: Option<PathBuf>,
    /// Snapshot to compare the rebuilt model with.
    #[arg(long, requires = "samples")]
    expect: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?
            }
            None => RunConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            mode: self.mode,
            output_dir: self.output_dir.clone(),
            frames: self.frames,
        });
        Ok(cfg)
    }
}

fn report(a: &RunArtifacts) {
    let s = &a.summary;
    println!("run directory   {}", a.dir.display());
    println!("status          {:?}", s.status);
    println!("frames          {}", s.frames);
    println!("samples         {}", s.samples.total());
    println!("dyn accuracy    {:.4}", s.dyn_eval_accuracy);
    println!("static accuracy {:.4}", s.static_eval_accuracy);
    if let Some(h) = s.hindsight_eval_accuracy {
        println!("hindsight acc.  {h:.4}");
    }
    if let Some(r) = s.regret {
        println!("regret          {r:.4}");
    }
    println!("stability rate  {:.4}", s.stability_rate);
    match s.converged_step {
        Some(step) => println!("converged at    {step}"),
        None => println!("converged at    never"),
    }
    if let Some(e) = &s.error {
        println!("error           {e}");
    }
}

fn run(args: &RunArgs) -> anyhow::Result<bool> {
    let cfg = args.common.resolve()?;
    match &args.seeds {
        None => {
            let a = runner::run_experiment(&cfg)?;
            report(&a);
            Ok(a.completed())
        }
        Some(range) => {
            let seeds = runner::parse_seed_range(range)?;
            cfg.check()?;
            let mut ok = true;
            for (seed, result) in runner::run_sweep(&cfg, seeds) {
                match result {
                    Ok(a) => {
                        let s = &a.summary;
                        println!(
                            "seed {seed}: {:?}, dyn {:.4}, static {:.4}, converged {}",
                            s.status,
                            s.dyn_eval_accuracy,
                            s.static_eval_accuracy,
                            s.converged_step
                                .map_or_else(|| "never".into(), |t| t.to_string())
                        );
                        ok &= a.completed();
                    }
                    Err(e) => {
                        println!("seed {seed}: error: {e}");
                        ok = false;
                    }
                }
            }
            Ok(ok)
        }
    }
}

fn replay(args: &ReplayArgs) -> anyhow::Result<bool> {
    let cfg = args.common.resolve()?;
    if let Some(stream) = &args.stream {
        let a = runner::replay_stream(&cfg, stream)?;
        report(&a);
        return Ok(a.completed());
    }
    let Some(samples) = &args.samples else {
        bail!("replay needs --stream or --samples");
    };
    let model = runner::replay_sample_log(samples, cfg.world.feature_dim, cfg.learner.lr0)?;
    println!("replayed {} updates", model.updates);
    match &args.expect {
        Some(path) => {
            let snap = Snapshot::load(path)?;
            let same = snap
                .weights
                .iter()
                .zip(&model.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
                && snap.weights.len() == model.weights.len()
                && snap.bias.to_bits() == model.bias.to_bits()
                && snap.updates == model.updates;
            println!(
                "matches {}: {}",
                path.display(),
                if same { "bit-exact" } else { "NO" }
            );
            Ok(same)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(&model)?);
            Ok(true)
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<bool> {
    match &cli.command {
        Command::Run(args) => run(args),
        Command::Eval { snapshot, common } => {
            let cfg = common.resolve()?;
            let acc = runner::evaluate_snapshot(snapshot, &cfg)?;
            println!(
                "eval accuracy {acc:.4} on {} samples",
                cfg.metrics.eval_set_size
            );
            Ok(true)
        }
        Command::Bench { common, json } => {
            let cfg = common.resolve()?;
            let r = runner::bench(&cfg)?;
            if *json {
                println!("{}", serde_json::to_string_pretty(&r)?);
            } else {
                println!("{r}");
            }
            Ok(true)
        }
        Command::Replay(args) => replay(args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => match e.downcast_ref::<Error>() {
            Some(Error::Validation(errs)) => {
                eprintln!("invalid configuration:");
                for msg in errs {
                    eprintln!("  {msg}");
                }
                ExitCode::from(2)
            }
            _ => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
