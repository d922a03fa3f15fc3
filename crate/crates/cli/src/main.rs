use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kdv_gauge::experiments::ExperimentKind;
use kdv_gauge_cli::config::parse_config;
use kdv_gauge_cli::run::{check, format_hypotheses, run, RunOptions};

#[derive(Parser)]
#[command(name = "kdv-gauge", version, about = "Gauge-transformed solvers and studies for variable-coefficient KdV equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the solve or experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
        /// Override `experiment.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Run even when the coefficients fail the hypothesis check.
        #[arg(long)]
        allow_hypothesis_violation: bool,
    },
    /// Validate a config and check the coefficient hypotheses without solving.
    Check { config: PathBuf },
    /// List the available experiment kinds.
    ListExperiments,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::ListExperiments => {
            println!("{:<24}plain solve of solver.initial (default when experiment.kind is absent)", "solve");
            for k in ExperimentKind::ALL {
                println!("{:<24}{}", k.name(), k.summary());
            }
            0
        }
        Command::Check { config } => match parse_config(&config) {
            Err(e) => {
                eprint!("{e}");
                2
            }
            Ok(cfg) => match check(&cfg) {
                Err(e) => {
                    eprintln!("error: {e}");
                    2
                }
                Ok(r) => {
                    print!("{}", format_hypotheses(&r));
                    if r.all_pass() {
                        0
                    } else {
                        1
                    }
                }
            },
        },
        Command::Run { config, output, seed, allow_hypothesis_violation } => match parse_config(&config) {
            Err(e) => {
                eprint!("{e}");
                2
            }
            Ok(cfg) => {
                let opts = RunOptions { seed, allow_hypothesis_violation };
                let outcome = run(&cfg, &output, &opts);
                if let Some(h) = outcome.hypotheses.as_ref().filter(|h| !h.all_pass()) {
                    eprint!("{}", format_hypotheses(h));
                }
                for v in &outcome.verdicts {
                    println!("{} {} = {:e} ({})", if v.passed { "PASS" } else { "FAIL" }, v.name, v.value, v.threshold);
                }
                if let Some(e) = &outcome.error {
                    eprintln!("error: {e}");
                }
                println!("run {} -> {} ({:?})", outcome.run_id, output.display(), outcome.status);
                outcome.status.exit_code()
            }
        },
    };
    ExitCode::from(code as u8)
}
