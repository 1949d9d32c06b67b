use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nhuman::experiments::{
    cmd_ablate, cmd_compare_aggregation, cmd_eval, cmd_profile, cmd_sample, cmd_sweep_radius,
    cmd_synth_gen, cmd_train, ExperimentConfig, Overrides,
};
use nhuman::Error;

#[derive(Parser)]
#[command(
    name = "nhuman",
    version,
    about = "Train, evaluate and profile the multi-human trajectory CVAE"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and write checkpoint.json, metrics.jsonl and timing.jsonl.
    Train(Common),
    /// Validation NLL and best-of-N displacement for a checkpoint.
    Eval(Common),
    /// Latent and mixture size variants.
    Ablate(Common),
    /// One model per edge radius.
    SweepRadius(Common),
    /// Sum vs mean edge inputs and the edge influence reducers.
    CompareAggregation(Common),
    /// Forward-pass time and memory against scene size.
    Profile(Common),
    /// Sampled futures as JSON lines and an SVG overlay.
    Sample(Common),
    /// Write the synthetic dataset as a play file.
    SynthGen(Common),
}

#[derive(Args)]
struct Common {
    /// TOML or JSON experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Edge radius, metres.
    #[arg(long, allow_negative_numbers = true)]
    radius: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    /// Prediction horizon S, frames.
    #[arg(long)]
    horizon: Option<usize>,
    /// History length H, frames.
    #[arg(long)]
    history: Option<usize>,
    /// Checkpoint for eval and sample; defaults to OUT/checkpoint.json.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> nhuman::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            radius: self.radius,
            steps: self.steps,
            horizon: self.horizon,
            history: self.history,
            checkpoint: self.checkpoint.clone(),
        });
        cfg.resolved()
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).unwrap_or_default()
}

fn run(command: Command) -> nhuman::Result<String> {
    Ok(match command {
        Command::Train(c) => json(&cmd_train(&c.load()?, &c.out)?),
        Command::Eval(c) => json(&cmd_eval(&c.load()?, &c.out)?),
        Command::Ablate(c) => json(&cmd_ablate(&c.load()?, &c.out)?),
        Command::SweepRadius(c) => json(&cmd_sweep_radius(&c.load()?, &c.out)?),
        Command::CompareAggregation(c) => json(&cmd_compare_aggregation(&c.load()?, &c.out)?),
        Command::Profile(c) => {
            let s = cmd_profile(&c.load()?, &c.out)?;
            format!(
                "R^2 {:.4}, memory monotone {}, per-pair time ratio {:.2}",
                s.r_squared, s.memory_monotone, s.per_pair_time_ratio
            )
        }
        Command::Sample(c) => {
            let s = cmd_sample(&c.load()?, &c.out)?;
            format!(
                "wrote {} and {}",
                s.svg_path.display(),
                s.jsonl_path.display()
            )
        }
        Command::SynthGen(c) => json(&cmd_synth_gen(&c.load()?, &c.out)?),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config_error() {
        2
    } else {
        3
    }
}
