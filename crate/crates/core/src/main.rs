use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bbp_lab::experiment::{exit_code, list_experiments, prepare, run, ExperimentConfig};
use bbp_lab::par::with_threads;

#[derive(Parser)]
#[command(name = "bbp-lab", version, about = "Outlier and moment-expansion experiments for deformed random matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Worker threads; defaults to all cores.
        #[arg(long, env = "BBP_LAB_THREADS")]
        threads: Option<usize>,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Master seed (overrides the config's `seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the available experiments.
    List,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", list_experiments());
            ExitCode::SUCCESS
        }
        Command::Run { config, threads, out, seed } => {
            let prepared = match ExperimentConfig::load(&config).and_then(|c| prepare(c, seed)) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if threads == Some(0) {
                eprintln!("error: --threads must be positive");
                return ExitCode::from(2);
            }
            let out = out
                .or_else(|| prepared.config.output.clone())
                .unwrap_or_else(|| PathBuf::from("bbp-lab-out").join(prepared.config.experiment.name()));
            let result = with_threads(threads, || run(&prepared, &out)).and_then(|r| r);
            match result {
                Ok(report) => {
                    for c in &report.checks {
                        let verdict = if c.pass { "PASS" } else { "FAIL" };
                        println!(
                            "{verdict} {}: measured {:.6e}, expected {:.6e}, tolerance {:.3e}",
                            c.name, c.measured, c.expected, c.tolerance
                        );
                    }
                    for w in &report.warnings {
                        println!("note: {w}");
                    }
                    println!("report: {}", out.join("report.json").display());
                    if report.pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code(&e) as u8)
                }
            }
        }
    }
}
