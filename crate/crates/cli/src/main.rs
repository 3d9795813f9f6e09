use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use expwave_cli::{check_manifest, compare, run_pipeline, RunConfig};

/// Simulator and verification harness for blow-up solutions of the 1D
/// semilinear wave equation with exponential source.
#[derive(Parser)]
#[command(name = "expwave", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration (strict schema; unknown keys rejected).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for all artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Cap the worker thread count.
    #[arg(long)]
    jobs: Option<usize>,
    /// Omit timestamps and timings so artifacts are byte-identical across
    /// reruns.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a full experiment and emit CSV/JSON/SVG artifacts.
    Run(RunArgs),
    /// Compare two run manifests at different resolutions.
    Compare {
        /// Manifest of the first run.
        manifest_a: PathBuf,
        /// Manifest of the second run.
        manifest_b: PathBuf,
        /// Where to write the comparison JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify that a manifest's files exist with matching checksums.
    Check {
        manifest: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> expwave_cli::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            if let Some(jobs) = args.jobs {
                // Best effort: a later invocation in the same process may
                // have already initialized the pool.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
            }
            let config = RunConfig::from_path(&args.config)?;
            let (manifest, all_passed) = run_pipeline(&config, &args.out, !args.no_timestamp)?;
            for stage in &manifest.stages {
                match &stage.error {
                    Some(err) => println!("stage {:<24} {:>8}  ({err})", stage.name, stage.status),
                    None => println!("stage {:<24} {:>8}", stage.name, stage.status),
                }
            }
            println!(
                "wrote {} artifacts to {}",
                manifest.files.len() + 1,
                args.out.display()
            );
            Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Compare { manifest_a, manifest_b, out } => {
            let report = compare(&manifest_a, &manifest_b)?;
            let mut bytes = serde_json::to_vec_pretty(&report)?;
            bytes.push(b'\n');
            std::fs::write(&out, bytes)?;
            if report.degenerate {
                println!("identical resolutions: orders reported as degenerate");
            }
            println!("comparison written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { manifest } => {
            let man = check_manifest(&manifest)?;
            println!("manifest ok: {} files verified", man.files.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}
