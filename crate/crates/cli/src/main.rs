use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trinas_core::cli::{self as run, Overrides, RunOptions};
use trinas_core::derive::DerivedArch;
use trinas_core::engine::{Progress, SearchConfig, TrainMode};
use trinas_core::Result;

#[derive(Parser)]
#[command(name = "trinas", version, about = "Architecture search for small super-resolution networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Checkpoint to continue from instead of the run directory's.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lambda_order: Option<f64>,
    #[arg(long)]
    lambda_flops: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    train_mode: Option<TrainMode>,
    /// Normalize cell and node weights with softmax instead of sparsestmax.
    #[arg(long)]
    softmax_baseline: bool,
    /// Stop after this many epochs; resume later from the checkpoint.
    #[arg(long)]
    stop_after: Option<usize>,
}

fn parse_mode(s: &str) -> std::result::Result<TrainMode, String> {
    TrainMode::parse(s).ok_or_else(|| format!("expected from_search or from_scratch, got {s}"))
}

impl Common {
    fn options(&self, arch: Option<PathBuf>) -> RunOptions {
        RunOptions {
            config: self.config.clone(),
            out: self.out.clone(),
            resume: self.resume.clone(),
            overrides: Overrides {
                seed: self.seed,
                lambda_order: self.lambda_order,
                lambda_flops: self.lambda_flops,
                train_mode: self.train_mode,
                softmax_baseline: self.softmax_baseline,
            },
            stop_after: self.stop_after,
            arch,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic HR/LR image pairs as PGM files.
    Gendata {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 160)]
        count: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        scale: usize,
    },
    /// Sandwich-train the supernet weights.
    Pretrain(Common),
    /// Alternate weight and architecture steps, then derive the network.
    Search(Common),
    /// Train the derived network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Architecture file, for from_scratch training without a search.
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Print the derived architecture of a finished search.
    Derive(Common),
    /// PSNR of two image files, or validation PSNR of a trained run.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "target")]
        pred: Option<PathBuf>,
        #[arg(long, requires = "pred")]
        target: Option<PathBuf>,
    },
    /// FLOPs and parameter count of an architecture file.
    Flops {
        #[arg(long)]
        arch: PathBuf,
        /// LR input height.
        #[arg(long, default_value_t = 32)]
        height: usize,
        /// LR input width.
        #[arg(long, default_value_t = 32)]
        width: usize,
    },
    /// Print the default config with key documentation.
    DefaultConfig,
}

fn report(command: &str, out: &std::path::Path, progress: Progress, epoch: usize) {
    let status = match progress {
        Progress::Complete => "complete",
        Progress::Interrupted => "interrupted",
    };
    println!("{command} {status} epoch={epoch} out={}", out.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gendata {
            out,
            seed,
            count,
            size,
            scale,
        } => {
            let pairs = run::cmd_gendata(&out, seed, count, size, scale)?;
            println!("gendata wrote {} pairs to {}", pairs.len(), out.display());
        }
        Command::Pretrain(c) => {
            let (s, p) = run::cmd_pretrain(&c.options(None))?;
            report("pretrain", &c.out, p, s.epoch);
        }
        Command::Search(c) => {
            let (s, p) = run::cmd_search(&c.options(None))?;
            report("search", &c.out, p, s.epoch);
            if let Some(a) = &s.derived {
                println!("path {}", a.path_string());
            }
        }
        Command::Train { common, arch } => {
            let (s, p) = run::cmd_train(&common.options(arch))?;
            report("train", &common.out, p, s.epoch);
        }
        Command::Derive(c) => {
            print!("{}", run::cmd_derive(&c.options(None))?);
        }
        Command::Eval { common, pred, target } => {
            let db = match (pred, target) {
                (Some(p), Some(t)) => run::cmd_eval_files(&p, &t)?,
                _ => run::cmd_eval(&common.options(None))?,
            };
            println!("psnr {db}");
        }
        Command::Flops { arch, height, width } => {
            let arch: DerivedArch = std::fs::read_to_string(&arch)?.parse()?;
            let (flops, params) = run::cmd_flops(&arch, height, width);
            println!("flops {flops}\nparams {params}");
        }
        Command::DefaultConfig => print!("{}", SearchConfig::default().to_toml()),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", run::error_line(&e));
            ExitCode::FAILURE
        }
    }
}
