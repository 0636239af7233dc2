//! `narz`: scenario-driven front end for the sticky-particle solver.

mod commands;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Failure;
use scenario::parse_scenario;

#[derive(Parser)]
#[command(name = "narz", version, about = "Sticky-particle simulations and entropy certificates for nonlocal ARZ traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the particle dynamics; writes trajectory.csv, events.json and summary.json.
    Simulate {
        scenario: PathBuf,
        /// Output directory (default: the scenario's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// RK4 substep (default: the scenario's, else horizon / 1e4).
        #[arg(long)]
        substep: Option<f64>,
    },
    /// Compare N-particle runs with a reference run; writes convergence.csv/json.
    Converge {
        scenario: PathBuf,
        /// Comma-separated particle counts.
        #[arg(long, value_delimiter = ',')]
        ns: Option<Vec<usize>>,
        /// Reference particle count (default: the scenario's, else 4096).
        #[arg(long)]
        nref: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Measure W1 between two runs against the stability bounds; writes stability.csv/json.
    Stability {
        a: PathBuf,
        b: PathBuf,
        /// Output directory (default: the first scenario's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check Rankine-Hugoniot, Oleinik and Kruzkov conditions; writes certificate.csv/json.
    Certify {
        scenario: PathBuf,
        /// Kruzkov levels as `lo:hi:step` or a comma list (default: the scenario's, else 0.1:0.9:0.1).
        #[arg(long)]
        alphas: Option<String>,
        /// Certify this trajectory CSV instead of simulating.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in kernel families.
    Kernels {
        /// Support parameter used for the listed norms.
        #[arg(long, default_value_t = 1.0)]
        r: f64,
    },
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(value) = std::env::var("NARZ_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Input(format!("NARZ_THREADS: expected a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("NARZ_THREADS: {e}")))
}

fn run(cli: Cli) -> Result<String, Failure> {
    configure_threads()?;
    match cli.command {
        Command::Simulate { scenario, out, substep } => {
            let scn = parse_scenario(&scenario)?;
            let out = out.unwrap_or_else(|| scn.output.clone());
            commands::simulate(&scn, &out, substep)
        }
        Command::Converge { scenario, ns, nref, out } => {
            let scn = parse_scenario(&scenario)?;
            let out = out.unwrap_or_else(|| scn.output.clone());
            commands::converge(&scn, &out, ns.as_deref(), nref)
        }
        Command::Stability { a, b, out } => {
            let (a, b) = (parse_scenario(&a)?, parse_scenario(&b)?);
            let out = out.unwrap_or_else(|| a.output.clone());
            commands::stability(&a, &b, &out)
        }
        Command::Certify { scenario, alphas, trajectory, out } => {
            let scn = parse_scenario(&scenario)?;
            let out = out.unwrap_or_else(|| scn.output.clone());
            let alphas = match alphas {
                Some(spec) => commands::parse_alphas(&spec)?,
                None => scn.alphas.clone(),
            };
            commands::certify(&scn, &out, &alphas, trajectory.as_deref())
        }
        Command::Kernels { r } => commands::kernels(r),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let label = match e {
                Failure::Input(_) => "input error",
                Failure::Assertion(_) => "check failed",
                Failure::Runtime(_) => "error",
            };
            eprintln!("narz: {label}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
