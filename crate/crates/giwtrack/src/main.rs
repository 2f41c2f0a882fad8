//! Thin command line wrapper; the work lives in [`giwtrack::cli`].

use clap::{Parser, Subcommand};
use std::path::PathBuf;

use giwtrack::cli::{self, SimulateOverrides};
use giwtrack::models::TrackerKind;
use giwtrack::selftest::SelftestLevel;

#[derive(Parser)]
#[command(
    name = "giwtrack",
    version,
    about = "Extended object tracking benchmark: prediction, filtering and smoothing \
             under the Gaussian inverse-Wishart random matrix model"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a Monte Carlo experiment and write gwd.csv, summary.csv and
    /// manifest.json.
    Simulate {
        /// Preset name (cv_lowpd, cv_highpd, ct_lowpd, ct_highpd) or path to
        /// a key-value config file.
        #[arg(long)]
        config: String,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Override the number of Monte Carlo runs.
        #[arg(long)]
        runs: Option<u32>,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the tracker set, comma separated (ccv,fcv,fct).
        #[arg(long, value_delimiter = ',')]
        trackers: Option<Vec<String>>,
    },
    /// Run the built-in correctness checks and print a pass/fail table.
    Selftest {
        /// basic (seconds) or deep (million-sample oracles).
        #[arg(long, default_value = "basic")]
        level: String,
    },
}

fn main() {
    let args = Args::parse();
    let code = match args.command {
        Command::Simulate {
            config,
            out,
            runs,
            seed,
            trackers,
        } => {
            let trackers = match trackers {
                None => None,
                Some(names) => {
                    let mut kinds = Vec::new();
                    for name in names {
                        match TrackerKind::parse(&name) {
                            Ok(kind) => kinds.push(kind),
                            Err(err) => {
                                eprintln!("config error: {err}");
                                std::process::exit(cli::exit_code::BAD_CONFIG);
                            }
                        }
                    }
                    Some(kinds)
                }
            };
            let overrides = SimulateOverrides {
                runs,
                seed,
                trackers,
            };
            cli::cmd_simulate(&config, &out, &overrides)
        }
        Command::Selftest { level } => match SelftestLevel::parse(&level) {
            Ok(level) => cli::cmd_selftest(level),
            Err(err) => {
                eprintln!("config error: {err}");
                cli::exit_code::BAD_CONFIG
            }
        },
    };
    std::process::exit(code);
}
