use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hcrl_core::eval::{evaluate, sweep, sweep_levels};
use hcrl_core::session::{self, load_checkpoint, RunConfig};
use hcrl_core::{EnvId, SourceKind};

#[derive(Parser)]
#[command(name = "hcrl", version, about = "Curriculum PPO trainer with a human in the loop")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train under a difficulty source, writing a run directory.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint at one level.
    Eval(EvalArgs),
    /// Greedy evaluation over a set of levels.
    Sweep(SweepArgs),
    /// Re-run a recorded run from its event log and compare metrics.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value = "gridworld")]
    env: EnvId,
    #[arg(long, default_value = "auto")]
    source: SourceKind,
    /// Event log to replay (scripted source).
    #[arg(long)]
    script: Option<PathBuf>,
    /// Comma-separated level per decision point (scripted source).
    #[arg(long, value_delimiter = ',', conflicts_with = "script")]
    schedule: Option<Vec<u32>>,
    /// Step budget; defaults to 50000 (GridWorld) or 200000 (WallJumper).
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Address for the control protocol, e.g. 127.0.0.1:7878.
    #[arg(long, env = "HCRL_BIND")]
    bind: Option<String>,
    #[arg(long, env = "HCRL_RUN_DIR")]
    run_dir: Option<PathBuf>,
    /// Human source: seconds to wait for a command before keeping the level.
    #[arg(long)]
    auto_continue: Option<f64>,
    #[arg(long, default_value_t = 100)]
    eval_episodes: usize,
    #[arg(long)]
    no_eval: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    level: u32,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated levels; defaults to 1..=5 (GridWorld) or 0..=16 (WallJumper).
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<u32>>,
    #[arg(long, default_value_t = 500)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long, env = "HCRL_RUN_DIR")]
    run_dir: PathBuf,
}

fn source_name(source: SourceKind) -> String {
    serde_json::to_value(source).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn train(args: TrainArgs) -> Result<bool> {
    let run_dir = args
        .run_dir
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}-s{}", args.env.as_str(), source_name(args.source), args.seed)));
    let mut config = RunConfig::new(args.env, args.source, run_dir);
    if let Some(steps) = args.steps {
        config.ppo.total_steps = steps;
    }
    config.ppo.workers = args.workers;
    config.seed = args.seed;
    config.script = args.script;
    config.schedule = args.schedule;
    config.bind = args.bind;
    config.auto_continue_ms = match args.auto_continue {
        Some(secs) if secs.is_finite() && secs >= 0.0 => Some((secs * 1000.0).round() as u64),
        Some(secs) => bail!("--auto-continue must be a non-negative number of seconds, got {secs}"),
        None => None,
    };
    config.curriculum.eval_episodes = args.eval_episodes;
    config.curriculum.evaluate = !args.no_eval;

    let prepared = session::prepare(&config)?;
    eprintln!("run {} -> {}", prepared.run_id(), config.run_dir.display());
    if let Some(addr) = prepared.local_addr() {
        eprintln!("listening on {addr}");
    }
    let started = Instant::now();
    let outcome = prepared.execute()?;
    for event in &outcome.events {
        eprintln!("step {:>8}  level {} -> {}", event.global_step, event.old_level, event.new_level);
    }
    println!(
        "{}",
        serde_json::json!({
            "run_id": outcome.run_id,
            "run_dir": outcome.run_dir,
            "final_step": outcome.final_step,
            "reached_total": outcome.reached_total,
            "final_checkpoint": outcome.final_checkpoint,
            "seconds": started.elapsed().as_secs_f64(),
        })
    );
    Ok(outcome.reached_total)
}

fn eval(args: EvalArgs) -> Result<bool> {
    let ckpt = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let report = evaluate(&ckpt.params, &ckpt.spec, ckpt.descriptor.env_id, args.level, args.episodes, args.seed)?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(true)
}

fn sweep_cmd(args: SweepArgs) -> Result<bool> {
    let ckpt = load_checkpoint(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let env = ckpt.descriptor.env_id;
    let levels = args.levels.unwrap_or_else(|| sweep_levels(env));
    let curve = sweep(&ckpt.params, &ckpt.spec, env, &levels, args.episodes, args.seed)?;
    println!("{}", serde_json::to_string(&curve)?);
    Ok(true)
}

fn replay(args: ReplayArgs) -> Result<bool> {
    let result = session::replay(&args.run_dir)?;
    let c = &result.comparison;
    println!(
        "{}",
        serde_json::json!({
            "replay_dir": result.outcome.run_dir,
            "identical": c.identical(),
            "original_lines": c.left_lines,
            "replay_lines": c.right_lines,
            "first_mismatch": c.first_mismatch,
            "reached_total": result.outcome.reached_total,
        })
    );
    if !c.identical() {
        eprintln!("replay diverged from the recorded metrics");
    }
    Ok(result.outcome.reached_total)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => train(args),
        Command::Eval(args) => eval(args),
        Command::Sweep(args) => sweep_cmd(args),
        Command::Replay(args) => replay(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
