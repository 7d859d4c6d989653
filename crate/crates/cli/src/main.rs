use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fedchain_core::chain::Ledger;
use fedchain_core::ctnorm::{normalize_volume, read_ctv1, write_ctv1, Ctv1, LungWindow, DEFAULT_SPACING_MM, STANDARD_EXTENT_MM};
use fedchain_core::simnet::{run_experiment, ExperimentConfig};
use fedchain_core::Error;

#[derive(Parser)]
#[command(name = "fedchain", version, about = "Private federated learning over a hospital ledger, simulated")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `experiment.output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Resample and window CTV1 volumes.
    Normalize(NormalizeArgs),
    /// Inspect a persisted ledger.
    Ledger {
        #[command(subcommand)]
        command: LedgerCommand,
    },
}

#[derive(Args)]
struct NormalizeArgs {
    /// A .ctv file or a directory of them.
    #[arg(long)]
    input: PathBuf,
    /// Output file, or directory when the input is a directory.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = -600.0, allow_hyphen_values = true)]
    wl: f64,
    #[arg(long, default_value_t = 1200.0)]
    ww: f64,
    /// Target spacing in mm, `x,y,z`.
    #[arg(long, value_parser = parse_triple)]
    spacing: Option<[f64; 3]>,
    /// Target extent in mm, `x,y,z`.
    #[arg(long, value_parser = parse_triple)]
    extent: Option<[f64; 3]>,
}

#[derive(Subcommand)]
enum LedgerCommand {
    /// Check every hash link, Merkle root and signature.
    Verify { file: PathBuf },
    /// Print one block as JSON.
    Show {
        file: PathBuf,
        #[arg(long)]
        height: u64,
    },
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    parts.try_into().map_err(|_| format!("expected three comma-separated numbers, got {s:?}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, output_dir } => run(&config, output_dir),
        Command::Normalize(args) => normalize(&args),
        Command::Ledger { command: LedgerCommand::Verify { file } } => verify(&file),
        Command::Ledger { command: LedgerCommand::Show { file, height } } => show(&file, height),
    }
}

fn run(config: &Path, output_dir: Option<PathBuf>) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(dir) = output_dir {
        cfg.experiment.output_dir = dir;
    }
    let out = run_experiment(&cfg)?;
    if let Some(last) = out.reports.last() {
        println!("final accuracy {:.4} loss {:.4} after {} rounds", last.accuracy, last.loss, last.round);
    }
    if let Some(b) = &out.baseline {
        println!("centralized accuracy {:.4} loss {:.4}", b.accuracy, b.loss);
    }
    println!("wrote {} and {}", out.csv.display(), out.jsonl.display());
    for l in &out.ledgers {
        println!("ledger {}", l.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn normalize(args: &NormalizeArgs) -> Result<ExitCode> {
    let window = LungWindow::new(args.wl, args.ww)?;
    let spacing = args.spacing.unwrap_or(DEFAULT_SPACING_MM);
    let extent = args.extent.unwrap_or(STANDARD_EXTENT_MM);
    let one = |input: &Path, output: &Path| -> Result<()> {
        let volume = read_ctv1(input)?.into_volume()?;
        let clamped = volume.clamped_on_ingest();
        let normalized = normalize_volume(&volume, window, extent, spacing)?;
        write_ctv1(output, &Ctv1::from(&normalized))?;
        println!("{} -> {} {:?} ({clamped} voxels clamped)", input.display(), output.display(), normalized.dims);
        Ok(())
    };
    if args.input.is_dir() {
        fs::create_dir_all(&args.output).with_context(|| format!("creating {}", args.output.display()))?;
        let mut inputs: Vec<PathBuf> = fs::read_dir(&args.input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        inputs.retain(|p| p.extension().is_some_and(|e| e == "ctv"));
        inputs.sort();
        if inputs.is_empty() {
            bail!("no .ctv files in {}", args.input.display());
        }
        for input in inputs {
            let name = input.file_name().expect("read_dir entries have names");
            one(&input, &args.output.join(name))?;
        }
    } else {
        one(&args.input, &args.output)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify(file: &Path) -> Result<ExitCode> {
    match Ledger::open(file) {
        Ok(ledger) => {
            println!("ok: {} blocks, tip {}", ledger.height() + 1, ledger.tip().hash);
            Ok(ExitCode::SUCCESS)
        }
        Err(Error::CorruptLedger(reason)) => {
            println!("corrupt: {reason}");
            Ok(ExitCode::FAILURE)
        }
        Err(e) => Err(e.into()),
    }
}

fn show(file: &Path, height: u64) -> Result<ExitCode> {
    let ledger = Ledger::open(file)?;
    let Some(block) = ledger.block(height) else {
        bail!("height {height} is past the tip at {}", ledger.height());
    };
    println!("{}", serde_json::to_string_pretty(block)?);
    Ok(ExitCode::SUCCESS)
}
