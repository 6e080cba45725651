//! `setvec`: reproducible runs of the set-regression toolkit driven by a
//! JSON config.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use setvec_core::Error;

#[derive(Parser)]
#[command(name = "setvec", version, about = "Attention-weighted set regression over bags of image patches")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.lambda1=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Top-level seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate train/test bag datasets.
    GenData(Common),
    /// Train a model on the training bags.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from `<out>/checkpoint.bin` when it exists.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint and write summary.json.
    Eval(Common),
    /// Write per-patch attention and per-subject vectors as CSV.
    AttnExport(Common),
    /// Write the latent singular spectrum.
    Spectrum(Common),
    /// Train one model per λ1 value and tabulate R² against effective rank.
    AblateLambda1 {
        #[command(flatten)]
        common: Common,
        /// Comma-separated λ1 values; defaults to `ablation.lambda1`.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Incompatible(_) => 2,
        Error::Numeric(_) => 4,
        Error::Dimension { .. }
        | Error::Domain(_)
        | Error::Format(_)
        | Error::Path { .. }
        | Error::Io(_)
        | Error::Json(_) => 3,
    }
}

fn init_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var("SETVEC_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("SETVEC_THREADS must be a positive integer, got `{v}`")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<serde_json::Value, Error> {
    init_threads()?;
    let resolve = |c: &Common| config::resolve(c.config.as_deref(), &c.sets, c.seed);
    match cli.cmd {
        Cmd::GenData(c) => commands::gen_data(&resolve(&c)?, &c.out),
        Cmd::Train { common: c, resume } => commands::train(&resolve(&c)?, &c.out, resume),
        Cmd::Eval(c) => commands::eval(&resolve(&c)?, &c.out),
        Cmd::AttnExport(c) => commands::attn_export(&resolve(&c)?, &c.out),
        Cmd::Spectrum(c) => commands::spectrum(&resolve(&c)?, &c.out),
        Cmd::AblateLambda1 { common: c, lambdas } => commands::ablate_lambda1(&resolve(&c)?, &c.out, lambdas),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(v) => {
            // a closed stdout (e.g. piped into `head`) is not a failure
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&v).expect("JSON value"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
