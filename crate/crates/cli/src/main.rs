use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use koopman_adapt::harness::{self, oracle, ExperimentConfig};
use koopman_adapt::{edmd, Error, ModelFile};

#[derive(Parser)]
#[command(name = "koopman-adapt", version, about = "Adaptive Koopman observer and MPC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Offline EDMD fit on the configured training excitation.
    Fit {
        /// Config file, or `default` for the built-in scenario.
        config: String,
        #[arg(short, long, default_value = "model.json")]
        output: PathBuf,
    },
    /// One closed-loop run; writes the per-sample trace.
    Simulate {
        config: String,
        #[arg(short, long, default_value = "trace.csv")]
        output: PathBuf,
    },
    /// All variants with and without the parameter schedule.
    Compare {
        config: String,
        #[arg(short, long, default_value = "summary.csv")]
        output: PathBuf,
    },
    /// Run a named numerical self-check.
    Oracle {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(oracle::ORACLE_NAMES))]
        name: String,
    },
    /// Print the built-in default config.
    DefaultConfig,
}

enum Failure {
    Config(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn load(spec: &str) -> Result<ExperimentConfig, Failure> {
    if spec == "default" || spec == "default-config" {
        return Ok(ExperimentConfig::default());
    }
    let path = Path::new(spec);
    if !path.exists() {
        return Err(Failure::Config(format!("config file not found: {}", path.display())));
    }
    ExperimentConfig::from_file(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Config(format!("cannot create {}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Fit { config, output } => {
            let cfg = load(&config)?;
            cfg.validate()?;
            let data = harness::generate_training_data(&cfg)?;
            let model = edmd::fit(&data, &cfg.dictionary()?)?;
            let file = ModelFile::from(&model);
            let json = serde_json::to_string_pretty(&file)
                .map_err(|e| Failure::Config(format!("cannot serialise model: {e}")))?;
            std::fs::write(&output, json + "\n")
                .map_err(|e| Failure::Config(format!("cannot write {}: {e}", output.display())))?;
            println!(
                "fitted N = {} from {} snapshots, residual {:.3e}; wrote {}",
                model.lifted_dim(),
                data.len(),
                model.residual(&data)?,
                output.display()
            );
        }
        Command::Simulate { config, output } => {
            let cfg = load(&config)?;
            let (records, abort) = match harness::run_closed_loop(&cfg) {
                Ok(r) => (r, None),
                Err(a) => (a.records.clone(), Some(a)),
            };
            harness::write_trace_csv(&records, create(&output)?)?;
            if let Some(a) = abort {
                // config problems surface before the first sample
                return Err(if a.error.is_numerical() {
                    Failure::Numerical(a.to_string())
                } else {
                    Failure::Config(a.error.to_string())
                });
            }
            let e = harness::compute_metric(&records)?;
            let w = harness::reference_energy(&records)?;
            let updates = records.iter().filter(|r| r.updated).count();
            println!(
                "{} samples, {} model updates, e_cum = {e:.6e}, normalized = {:.6e}; wrote {}",
                records.len(),
                updates,
                e / w,
                output.display()
            );
        }
        Command::Compare { config, output } => {
            let cfg = load(&config)?;
            let table = harness::run_comparison(&cfg)?;
            std::fs::write(&output, table.summary_csv())
                .map_err(|e| Failure::Config(format!("cannot write {}: {e}", output.display())))?;
            print!("{}", table.render());
            println!("wrote {}", output.display());
        }
        Command::Oracle { name } => {
            let report = oracle::run_oracle(&name)?;
            println!("{report}");
            if !report.passed() {
                return Err(Failure::Numerical(format!("oracle {name} exceeded its tolerance")));
            }
        }
        Command::DefaultConfig => print!("{}", ExperimentConfig::default().to_config_string()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
