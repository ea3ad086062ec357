use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use abreu2d::cli::{run, Command as RunCommand, RunFlags};

/// Constant scalar curvature toric surfaces: stability scans, potential
/// solves and oracle verification on weighted convex polygons.
#[derive(Parser)]
#[command(name = "abreu2d", version)]
struct Args {
    #[command(subcommand)]
    command: Cli,

    /// Grid nodes per unit length for the solver.
    #[arg(long, global = true)]
    grid: Option<usize>,

    /// Gradient tolerance of the solver.
    #[arg(long, global = true)]
    gtol: Option<f64>,

    /// Iteration cap of the solver.
    #[arg(long, global = true)]
    max_iters: Option<usize>,

    /// Number of crease angles scanned.
    #[arg(long, global = true)]
    scan_angles: Option<usize>,

    /// Number of crease offsets scanned per angle.
    #[arg(long, global = true)]
    scan_offsets: Option<usize>,

    /// Directory for CSV artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker thread cap for the parallel scan.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Solver method: "lbfgs" (default) or "gd".
    #[arg(long, global = true)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Cli {
    /// Scan positivity of the stability functional over hinge functions.
    Stability { problem: PathBuf },
    /// Minimize the potential functional on a grid.
    Solve { problem: PathBuf },
    /// Solve, then evaluate the full diagnostic battery.
    Diagnose { problem: PathBuf },
    /// Verify the zero-scalar-curvature family at given parameters.
    JoyceVerify {
        #[arg(long)]
        a1: f64,
        #[arg(long)]
        a2: f64,
    },
    /// Evaluate the one-dimensional degenerating family.
    Oracle1d {
        /// Family parameters (default 0.1 0.03 0.01 0.003).
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        eps: Option<Vec<f64>>,
    },
}

fn main() -> ExitCode {
    let args = Args::parse();
    let flags = RunFlags {
        grid: args.grid,
        gtol: args.gtol,
        max_iters: args.max_iters,
        scan_angles: args.scan_angles,
        scan_offsets: args.scan_offsets,
        out_dir: args.out,
        threads: args.threads,
        method: args.method,
    };
    let command = match args.command {
        Cli::Stability { problem } => RunCommand::Stability { problem },
        Cli::Solve { problem } => RunCommand::Solve { problem },
        Cli::Diagnose { problem } => RunCommand::Diagnose { problem },
        Cli::JoyceVerify { a1, a2 } => RunCommand::JoyceVerify { a1, a2 },
        Cli::Oracle1d { eps } => RunCommand::Oracle1d {
            epsilons: eps.unwrap_or_else(|| vec![0.1, 0.03, 0.01, 0.003]),
        },
    };
    match run(&command, &flags) {
        Ok(report) => {
            print!("{}", report.render());
            ExitCode::from(report.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
