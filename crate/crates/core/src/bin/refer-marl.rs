use std::fs;
use std::io::BufReader;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use refer_marl::learner::Variant;
use refer_marl::trainer::{self, evaluate, metrics, plot, verify, Config, RunOptions, Trainer};

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "refer-marl", version, about = "Multi-agent V-RACER with ReF-ER")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train from a config file, or continue a run with --resume.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
        /// Output directory for metrics, config and checkpoints.
        #[arg(long, default_value = "run")]
        out: PathBuf,
        /// Continue the run found in --out from its last checkpoint.
        #[arg(long)]
        resume: bool,
        /// Checkpoint cadence in episodes.
        #[arg(long, default_value_t = 100)]
        checkpoint_every: u64,
    },
    /// Roll out a checkpointed policy without training.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the numerical self-checks.
    Verify {
        #[arg(long)]
        quick: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write moving-median curves (CSV and SVG) next to a metrics file.
    Plot {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long, default_value_t = plot::WINDOW)]
        window: usize,
    },
}

enum Failure {
    Verify,
    Config(String),
    Runtime(String),
}

fn run(cli: Cli) -> Result<(), Failure> {
    let rt = |e: &dyn std::fmt::Display| Failure::Runtime(e.to_string());
    match cli.cmd {
        Cmd::Train { config, seed, variant, out, resume, checkpoint_every } => {
            let opts = RunOptions { out_dir: Some(out.clone()), checkpoint_every, stop_at: None };
            let report = |m: &trainer::EpisodeMetrics| {
                if m.episode % 100 == 0 {
                    eprintln!(
                        "episode {:>6}  return {:>9.3}  f_off {:.3}  beta {:.4}",
                        m.episode, m.mean_return, m.f_off, m.beta
                    );
                }
            };
            if resume {
                trainer::resume(&opts, report).map_err(|e| rt(&e))?;
                return Ok(());
            }
            let mut cfg = match config {
                Some(path) => {
                    let text = fs::read_to_string(&path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
                    Config::parse(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?
                }
                None => Config::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
            let t = trainer::run_training(cfg, &opts, report).map_err(|e| rt(&e))?;
            eprintln!("finished {} episodes; metrics in {}", t.episodes(), out.display());
        }
        Cmd::Eval { checkpoint, episodes, seed } => {
            let t = Trainer::load_checkpoint(&checkpoint).map_err(|e| rt(&e))?;
            let mut env = t.config().env.build();
            let rets = evaluate(t.net(), t.head(), env.as_mut(), episodes, seed).map_err(|e| rt(&e))?;
            let (mean, std) = metrics::mean_std(&rets);
            println!("episodes {episodes}  mean_return {mean:.4}  std {std:.4}  median {:.4}", metrics::median(&rets));
        }
        Cmd::Verify { quick, seed } => {
            let report = verify::run(&verify::Subjects::default(), quick, seed);
            println!("{report}");
            if !report.passed() {
                return Err(Failure::Verify);
            }
        }
        Cmd::Plot { metrics: path, window } => {
            let f = fs::File::open(&path).map_err(|e| rt(&format!("{}: {e}", path.display())))?;
            let ms = metrics::read_jsonl(BufReader::new(f)).map_err(|e| rt(&format!("{}: {e}", path.display())))?;
            let c = plot::curves(&ms, window);
            let csv = path.with_extension("curves.csv");
            let svg = path.with_extension("curves.svg");
            fs::write(&csv, plot::to_csv(&c)).map_err(|e| rt(&e))?;
            fs::write(&svg, plot::to_svg(&c)).map_err(|e| rt(&e))?;
            println!("wrote {} and {}", csv.display(), svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verify) => ExitCode::from(EXIT_VERIFY),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
