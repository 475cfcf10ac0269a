//! `lagstep` - run delay-compensation scenarios and write traces.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lagstep::config::{list_scenarios, Overrides};
use lagstep::runner::{default_out_root, run, RunConfig, Source};
use lagstep::PredictorMethod;

#[derive(Parser)]
#[command(name = "lagstep", version, about = "Predictor-feedback scenarios with distinct input delays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List builtin scenarios, plus any *.toml scenarios in a directory
    List {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Run scenarios by builtin name or from scenario files
    Run {
        /// Builtin scenario names
        names: Vec<String>,

        /// Scenario file (repeatable)
        #[arg(long = "config", value_name = "PATH")]
        configs: Vec<PathBuf>,

        /// Time step override
        #[arg(long)]
        dt: Option<f64>,

        /// Horizon override
        #[arg(long)]
        horizon: Option<f64>,

        /// Output root; defaults to $LAGSTEP_OUT or ./out
        #[arg(long)]
        out: Option<PathBuf>,

        /// Add consistency, compensation and transform checks to verify.txt
        #[arg(long)]
        verify: bool,

        /// Treat divergence as the expected outcome
        #[arg(long)]
        expect_divergence: bool,

        #[arg(long, value_enum)]
        predictor: Option<Predictor>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Predictor {
    Generic,
    LinearExplicit,
}

impl From<Predictor> for PredictorMethod {
    fn from(p: Predictor) -> Self {
        match p {
            Predictor::Generic => PredictorMethod::Generic,
            Predictor::LinearExplicit => PredictorMethod::LinearExplicit,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::List { dir } => match list_scenarios(dir.as_deref()) {
            Ok(all) => {
                for (name, description) in all {
                    println!("{name:<28} {description}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        },
        Command::Run {
            names,
            configs,
            dt,
            horizon,
            out,
            verify,
            expect_divergence,
            predictor,
        } => {
            let sources: Vec<Source> = names
                .into_iter()
                .map(Source::Builtin)
                .chain(configs.into_iter().map(Source::File))
                .collect();
            if sources.is_empty() {
                eprintln!("error: give at least one scenario name or --config PATH");
                return ExitCode::from(1);
            }
            let out_root = out.unwrap_or_else(default_out_root);
            let runs: Vec<RunConfig> = sources
                .into_iter()
                .map(|source| RunConfig {
                    source,
                    out_root: out_root.clone(),
                    overrides: Overrides {
                        step: dt,
                        horizon,
                        predictor: predictor.map(Into::into),
                    },
                    verify,
                    expect_divergence,
                })
                .collect();
            ExitCode::from(run_all(&runs))
        }
    }
}

/// Runs every scenario on its own thread; the exit code is the worst one.
fn run_all(runs: &[RunConfig]) -> u8 {
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = runs.iter().map(|c| s.spawn(move || run(c))).collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    });
    let mut code = 0;
    for (config, result) in runs.iter().zip(results) {
        match result {
            Ok(outcome) => {
                let status = outcome.report.get("status").unwrap_or("?");
                println!("{}: {status} -> {}", outcome.name, outcome.dir.display());
                code = code.max(outcome.exit_code() as u8);
            }
            Err(e) => {
                let what = match &config.source {
                    Source::Builtin(name) => name.clone(),
                    Source::File(path) => path.display().to_string(),
                };
                eprintln!("error: {what}: {e}");
                code = code.max(1);
            }
        }
    }
    code
}
