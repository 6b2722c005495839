use std::path::PathBuf;
use std::process::ExitCode;

use cascade_cli::examples::{self, EXAMPLES};
use cascade_cli::run::{run, RunOptions};
use cascade_cli::scenario::{parse_scenario, Scenario};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Steady states and correlations of cascaded Kerr mode chains")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file (or the name of a bundled example).
    Run {
        config: String,
        /// Output directory, overriding the scenario's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        /// Seed override.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write PNG heatmaps.
        #[arg(long)]
        render: bool,
    },
    /// Parse and validate a scenario, then print its resolved form.
    Validate { config: String },
    /// List bundled example scenarios.
    ListExamples,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_RUN: u8 = 2;

fn load(config: &str) -> Result<Scenario, String> {
    let path = PathBuf::from(config);
    let (text, stem) = if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{config}: {e}"))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "scenario".into());
        (text, stem)
    } else if let Some(ex) = examples::find(config) {
        (ex.text.to_string(), ex.name.to_string())
    } else {
        return Err(format!("{config}: no such file or bundled example"));
    };
    parse_scenario(&text, &stem).map_err(|e| format!("{config}: {e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListExamples => {
            for ex in EXAMPLES {
                println!("{:<26} {}", ex.name, ex.summary());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(s) => {
                print!("{}", s.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run { config, out, jobs, seed, render } => {
            let scenario = match load(&config) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(n) = jobs {
                pool = pool.num_threads(n.max(1));
            }
            let pool = match pool.build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(EXIT_RUN);
                }
            };
            let opts = RunOptions { out, seed, render };
            match pool.install(|| run(&scenario, &opts)) {
                Ok(sum) => {
                    println!(
                        "{}: {} points ({} ok, {} missing, {} resumed) -> {}",
                        scenario.name,
                        sum.total,
                        sum.ok,
                        sum.missing,
                        sum.resumed,
                        sum.out_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(EXIT_RUN)
                }
            }
        }
    }
}
