use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cade::config::ExperimentConfig;
use cade::pipeline::{self, RunOptions};
use cade::{manifest, stages, Result};
use clap::{Args, Parser, Subcommand};

/// Two-tier computer-aided detection on synthetic CT phantoms.
#[derive(Parser)]
#[command(name = "cade", version)]
struct Cli {
    /// Worker threads for folds.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON). The desk-scale defaults apply without one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output or work directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom cohort as RV1 volumes and target lists.
    Phantom(Common),
    /// Run the tier-1 detector over a stored cohort.
    Candidates(Common),
    /// Train a model on one fold's training patients (all patients without --fold).
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Score one fold's test patients (all patients without --fold).
    Score {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fold: Option<usize>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// FROC, AUC and summary of a scored candidate CSV.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scored: Option<PathBuf>,
    },
    /// The full cross-validated pipeline.
    Run(Common),
    /// Pipeline plus re-aggregation with fewer views per candidate.
    SweepN {
        #[command(flatten)]
        common: Common,
        /// View counts, e.g. 1,5,10 (the config's list by default).
        #[arg(long, value_delimiter = ',')]
        n: Vec<usize>,
    },
    /// Train and evaluate every mode × {ORIG, AUG} cell.
    ModeMatrix(Common),
    /// Verify a report directory against its manifest.
    Check {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let out = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("cade-out"));
    Ok((cfg, out))
}

fn seal(dir: &Path) -> Result<()> {
    manifest::write(dir).map(|m| log::info!("manifest lists {} files", m.files.len()))
}

fn run(cli: Cli) -> Result<()> {
    let opts = RunOptions { threads: cli.threads, ..RunOptions::default() };
    match cli.command {
        Command::Phantom(c) => {
            let (cfg, out) = load(&c)?;
            let n = stages::phantom(&cfg, &out)?;
            println!("wrote {n} phantoms to {}", out.join("cohort").display());
            seal(&out)
        }
        Command::Candidates(c) => {
            let (cfg, out) = load(&c)?;
            let n = stages::candidates(&cfg, &out)?;
            println!("wrote {n} candidates to {}", stages::tier1_path(&out).display());
            seal(&out)
        }
        Command::Train { common, fold } => {
            let (cfg, out) = load(&common)?;
            let path = stages::train(&cfg, &out, fold)?;
            println!("wrote {}", path.display());
            seal(&out)
        }
        Command::Score { common, fold, checkpoint } => {
            let (cfg, out) = load(&common)?;
            let n = stages::score(&cfg, &out, fold, checkpoint.as_deref())?;
            println!("scored {n} candidates into {}", stages::scored_path(&out).display());
            seal(&out)
        }
        Command::Eval { common, scored } => {
            let (cfg, out) = load(&common)?;
            let s = stages::eval(&cfg, &out, scored.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
            seal(&out)
        }
        Command::Run(c) => {
            let (cfg, out) = load(&c)?;
            let r = pipeline::run_pipeline(&cfg, Some(&out), &opts)?;
            println!("{}", serde_json::to_string_pretty(&r.eval.summary).expect("summary serializes"));
            Ok(())
        }
        Command::SweepN { common, n } => {
            let (cfg, out) = load(&common)?;
            let n = if n.is_empty() { cfg.eval.n_values.clone() } else { n };
            let (_, sweep) = pipeline::run_n_sweep(&cfg, &n, Some(&out), &opts)?;
            for s in sweep {
                println!("N = {:>3}  AUC {:.4}", s.n, s.auc);
            }
            Ok(())
        }
        Command::ModeMatrix(c) => {
            let (cfg, out) = load(&c)?;
            let cells = pipeline::run_mode_matrix(&cfg, Some(&out), &opts)?;
            let fp = cfg.eval.fisher_fp;
            for cell in cells {
                let s = cade::cade_core::eval::sensitivity_at_fp(&cell.test, fp);
                println!("{:<10} AUC {:.4}  sensitivity at {fp} FP {:.3}", cell.name(), cell.summary.auc, s);
            }
            Ok(())
        }
        Command::Check { out } => {
            let m = manifest::check(&out)?;
            println!("{} files verified", m.files.len());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CADE_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
