use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mreo::harness::{
    compare, run_experiment, ExperimentConfig, OdeSpec, ProblemSpec, RunOptions, RunSummary,
};
use mreo::problems::{testbed, OdeModel};
use mreo::{CostProblem, Error};

/// Multi-seed experiments for the mreo ensemble optimizer and its PSO baseline.
#[derive(Parser)]
#[command(name = "mreo", version)]
struct Cli {
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment and write traces plus summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the config's seeds: `7`, `1,4,9`, or a range `1-20`.
        #[arg(long)]
        seed_override: Option<String>,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds run at the same time; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Compare two summaries (files or run directories) on the same problem.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Print the comparison as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// List the built-in problems.
    ListProblems,
    /// Write the reference trajectory of an oscillator problem as CSV.
    Reference {
        #[arg(long, value_enum, conflicts_with = "config")]
        problem: Option<Oscillator>,
        /// Take the oscillator setup from an experiment config instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Oscillator {
    Lorenz,
    Chen,
}

/// Failure with the exit code it maps to: 2 for bad input, 1 otherwise.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidComparison(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn config_error(message: String) -> Failure {
    Failure { code: 2, message }
}

fn parse_seeds(text: &str) -> Result<Vec<u64>, Failure> {
    let bad = |part: &str| config_error(format!("--seed-override: cannot parse {part:?}"));
    let mut seeds = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((lo, hi)) => {
                let lo: u64 = lo.trim().parse().map_err(|_| bad(part))?;
                let hi: u64 = hi.trim().parse().map_err(|_| bad(part))?;
                if lo > hi {
                    return Err(bad(part));
                }
                seeds.extend(lo..=hi);
            }
            None => seeds.push(part.parse().map_err(|_| bad(part))?),
        }
    }
    Ok(seeds)
}

fn load_summary(path: &Path) -> Result<RunSummary, Failure> {
    let file = if path.is_dir() {
        path.join("summary.json")
    } else {
        path.to_path_buf()
    };
    RunSummary::load(&file).map_err(|e| config_error(format!("{}: {e}", file.display())))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            seed_override,
            out,
            jobs,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed_override {
                cfg.seeds = parse_seeds(&s)?;
                cfg.validate()?;
            }
            let opts = RunOptions {
                output_dir: out,
                jobs,
            };
            let summary = run_experiment(&cfg, &opts)?;
            let a = &summary.aggregate;
            println!(
                "{} / {}: {} of {} seeds succeeded (rate {:.3}), median final cost {}",
                summary.problem,
                summary.algorithm,
                a.successes,
                a.runs,
                a.success_rate,
                a.median_final_cost
                    .map_or_else(|| "-".into(), |c| format!("{c:.6e}"))
            );
            if summary.any_failed() {
                return Err(Failure {
                    code: 1,
                    message: format!("{} seed(s) failed; see summary.json", a.failed_runs),
                });
            }
        }
        Command::Compare { a, b, json } => {
            let c = compare(&load_summary(&a)?, &load_summary(&b)?)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&c).map_err(|e| Failure {
                        code: 1,
                        message: e.to_string()
                    })?
                );
            } else {
                println!("{c}");
            }
        }
        Command::ListProblems => {
            println!("lorenz     3 parameters, reference theta = (10, 28, 8/3)");
            println!("chen       3 parameters, reference theta = (35, 3, 28)");
            for name in testbed::NAMES {
                let p = testbed::by_name(name, 1).expect("known name");
                println!(
                    "{name:<10} testbed, any dimension, box [{}, {}] per coordinate",
                    p.lower()[0],
                    p.upper()[0]
                );
            }
        }
        Command::Reference {
            problem,
            config,
            out,
        } => {
            let (spec, model) = match (problem, config) {
                (Some(Oscillator::Lorenz), _) => (OdeSpec::default(), OdeModel::lorenz()),
                (Some(Oscillator::Chen), _) => (OdeSpec::default(), OdeModel::chen()),
                (None, Some(path)) => match ExperimentConfig::load(&path)?.problem {
                    ProblemSpec::Lorenz(s) => (s, OdeModel::lorenz()),
                    ProblemSpec::Chen(s) => (s, OdeModel::chen()),
                    ProblemSpec::Testbed(_) => {
                        return Err(config_error(
                            "testbed problems have no reference trajectory".into(),
                        ))
                    }
                },
                (None, None) => return Err(config_error("pass --problem or --config".into())),
            };
            let p = spec.build(model)?;
            p.reference.write_csv(&out)?;
            log::info!("wrote {} samples to {}", p.reference.times.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
