use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use micromorph::cli::{load_config, run, Command, RunConfig};

/// Finite element laboratory for a coupled elasticity / curl-curl model:
/// identity verification, solves, convergence studies and regularity probes.
#[derive(Parser)]
#[command(name = "micromorph", version)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,

    /// JSON configuration file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for reports and tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Seed for randomized checks.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,

    /// Suppress progress lines.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum CliCommand {
    /// Run the identity verification suites and write a JSON report.
    Verify,
    /// Assemble and solve one problem; dump nodal fields and a summary.
    Solve,
    /// Manufactured-solution convergence study with observed rates.
    Mms,
    /// Difference-quotient regularity probes on the solved problem.
    Probe,
}

fn configure_threads() {
    if let Ok(v) = std::env::var("MICROMORPH_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    let config = match load_config(cli.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let rc = RunConfig {
        command: match cli.command {
            CliCommand::Verify => Command::Verify,
            CliCommand::Solve => Command::Solve,
            CliCommand::Mms => Command::Mms,
            CliCommand::Probe => Command::Probe,
        },
        config,
        out_dir: cli.out,
        seed: cli.seed,
        quiet: cli.quiet,
    };
    ExitCode::from(run(&rc) as u8)
}
