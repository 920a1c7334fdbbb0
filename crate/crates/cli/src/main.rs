use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use covfactor::simgen::Scenario;
use covfactor_cli::{
    cmd_evaluate, cmd_fit, cmd_simulate, cmd_summarize, exit_code, resolve_out, FitOverrides, SimSize, EXIT_USER,
};

#[derive(Parser)]
#[command(name = "covfactor", version, about = "Covariate-dependent sparse factor model for count tables")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulation scenario with its ground truth.
    Simulate {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Number of features.
        #[arg(long)]
        features: Option<usize>,
        /// Subjects (sim2, sim3) or samples per design cell (sim1).
        #[arg(long)]
        units: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run MCMC chains for the data named in a run file.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        burn: Option<u64>,
        #[arg(long)]
        thin: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write posterior summaries and diagnostics for a fitted run.
    Summarize {
        #[arg(long)]
        run: PathBuf,
        /// Quantities to summarize: sigma2, tau, r, q, f, beta, alpha, rho.
        #[arg(long = "target")]
        targets: Vec<String>,
        /// Mean coefficient contrasts as `a:b`.
        #[arg(long = "contrast")]
        contrasts: Vec<String>,
    },
    /// Compare a fitted run with a simulation truth.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate {
            scenario,
            seed,
            features,
            units,
            out,
        } => {
            let out = resolve_out(out, &format!("{scenario}-seed{seed}"))?;
            cmd_simulate(scenario, seed, SimSize { features, units }, &out)?;
            println!("{}", out.display());
        }
        Command::Fit {
            config,
            seed,
            chains,
            iters,
            burn,
            thin,
            out,
        } => {
            let overrides = FitOverrides {
                seed,
                chains,
                iters,
                burn,
                thin,
                out,
            };
            let outcome = cmd_fit(&config, &overrides)?;
            println!(
                "{} draws in {:.1} s written to {}",
                outcome.n_draws,
                outcome.runtime_seconds,
                outcome.out.display()
            );
        }
        Command::Summarize { run, targets, contrasts } => {
            let s = cmd_summarize(&run, &targets, &contrasts)?;
            println!("{} rows written to {}", s.rows.len(), run.join("summary.csv").display());
        }
        Command::Evaluate { run, truth } => {
            let m = cmd_evaluate(&run, &truth)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
