//! Argument parsing and exit codes for the `diablo` binary.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::attention::{SelectionMode, Strategy};
use crate::error::{Error, Result};
use crate::harness::{
    run_ablate, run_evaluate, run_gen_data, run_gradcheck, run_train, threads_from_env, write_recall_csv, AblationAxes,
    Checkpoint, DataSource, EvalSet, RunConfig, RECALL_FILE,
};

pub const EXIT_OK: u8 = 0;
/// Unexpected internal failure (a shape error that validation should have caught).
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_GRADCHECK: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "diablo", version, about = "Dictionary-based attention for metric learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model; writes metrics.csv, checkpoint.bin and config.json.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "run")]
        out: PathBuf,
    },
    /// Recall@K of a checkpoint on the validation classes of its run.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Take the data and split from this config instead of the checkpoint's.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the split seed of the config in use.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        /// Embed the whole dataset rather than the validation classes.
        #[arg(long)]
        all: bool,
        /// Directory for recall.csv (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep selection mode, strategy and dictionary size over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// First seed; run i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        mode: Vec<SelectionMode>,
        #[arg(long, value_delimiter = ',', value_parser = parse_strategy)]
        strategy: Vec<Strategy>,
        /// Dictionary sizes, from 1, 2, 4, 8, 16.
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value = "ablation")]
        out: PathBuf,
    },
    /// Finite-difference check of every op and pipeline.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        seeds: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Write the synthetic dataset of a config as IDX files.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> std::result::Result<SelectionMode, String> {
    match s {
        "feature" => Ok(SelectionMode::Feature),
        "dimension" => Ok(SelectionMode::Dimension),
        _ => Err(format!("`{s}` is not a selection mode (feature, dimension)")),
    }
}

fn parse_strategy(s: &str) -> std::result::Result<Strategy, String> {
    match s {
        "pre" => Ok(Strategy::Pre),
        "post" => Ok(Strategy::Post),
        _ => Err(format!("`{s}` is not a strategy (pre, post)")),
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } | Error::Argument(_) => EXIT_CONFIG,
        Error::Io { .. } | Error::Format { .. } => EXIT_IO,
        Error::Shape(_) => EXIT_INTERNAL,
    }
}

/// Loads `path` (or the defaults) and returns it with the directory that
/// relative data paths resolve against.
fn load_config(path: Option<&Path>) -> Result<(RunConfig, PathBuf)> {
    match path {
        Some(p) => {
            let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
            Ok((RunConfig::load(p)?, base))
        }
        None => Ok((RunConfig::default(), PathBuf::new())),
    }
}

fn fmt_recall(r: f64) -> String {
    format!("{:.4}", r)
}

/// Executes a parsed command; returns the process exit code.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let (mut cfg, base) = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = run_train(&cfg, &base, &out)?;
            for r in &outcome.log {
                println!("epoch {:>3}  loss {:.6}  R@1 {}", r.epoch, r.loss, fmt_recall(r.recall_at_1));
            }
            println!("wrote {}", out.display());
            Ok(EXIT_OK)
        }
        Command::Evaluate { checkpoint, config, seed, k, all, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (mut cfg, base) = match config {
                Some(p) => load_config(Some(&p))?,
                None => (ckpt.config.clone(), PathBuf::new()),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let ks = k.unwrap_or_else(|| cfg.eval_ks.clone());
            let set = if all { EvalSet::All } else { EvalSet::Validation };
            let recall = run_evaluate(&ckpt, &cfg, &base, set, &ks)?;
            println!("{:>4}  recall", "K");
            for (k, r) in &recall {
                println!("{k:>4}  {}", fmt_recall(*r));
            }
            let dir = out.unwrap_or_else(|| checkpoint.parent().map(Path::to_path_buf).unwrap_or_default());
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_recall_csv(&dir.join(RECALL_FILE), &recall)?;
            Ok(EXIT_OK)
        }
        Command::Ablate { config, seed, mode, strategy, n, seeds, out } => {
            let (mut cfg, base) = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let axes = AblationAxes { modes: mode, strategies: strategy, branches: n };
            let summaries = run_ablate(&cfg, &base, &axes, seeds, &out, threads_from_env()?)?;
            println!("{:<22} {:>5}  {:>8}  {:>8}  {:>8}", "cell", "runs", "median", "min", "max");
            for s in &summaries {
                println!(
                    "{:<22} {:>5}  {:>8}  {:>8}  {:>8}",
                    s.cell.name(),
                    s.recalls.len(),
                    fmt_recall(s.median()),
                    fmt_recall(s.min()),
                    fmt_recall(s.max())
                );
            }
            Ok(EXIT_OK)
        }
        Command::Gradcheck { seed, seeds, inject_fault } => {
            let seed_list: Vec<u64> = (seed..seed + seeds as u64).collect();
            let outcomes = run_gradcheck(&seed_list, inject_fault, threads_from_env()?)?;
            for o in &outcomes {
                println!("{o}");
            }
            let failed = outcomes.iter().filter(|o| !o.passed()).count();
            println!("{} checks over {} seeds, {failed} failed", outcomes.len(), seeds);
            Ok(if failed == 0 { EXIT_OK } else { EXIT_GRADCHECK })
        }
        Command::GenData { config, seed, out } => {
            let (cfg, _) = load_config(config.as_deref())?;
            let DataSource::Synthetic(mut spec) = cfg.data else {
                return Err(Error::config("data", "gen-data needs a synthetic data source"));
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let (images, labels) = run_gen_data(&spec, &out)?;
            println!("wrote {} and {}", images.display(), labels.display());
            Ok(EXIT_OK)
        }
    }
}

/// Entry point of the binary.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
