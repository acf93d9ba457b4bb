use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use imi_cli::{analyze, export, prepare, serve, simulate, CliError, Overrides, RunConfig};
use imi_core::stimulus::{Condition, Difficulty};

#[derive(Parser)]
#[command(name = "imi", version, about = "Measure per-unit interpretability with 2-AFC psychophysics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record activations and build natural and synthetic stimuli.
    PrepareStimuli(Args),
    /// Serve the prepared stimuli over HTTP.
    Serve(Args),
    /// Run simulated campaigns and write the response dataset.
    Simulate(Args),
    /// Write every analysis report for the response dataset.
    Analyze(Args),
    /// Validate the dataset and package it with checksums.
    Export(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    units: Option<usize>,
    #[arg(long, value_parser = parse::<Condition>)]
    condition: Option<Condition>,
    #[arg(long, value_parser = parse::<Difficulty>)]
    difficulty: Option<Difficulty>,
}

fn parse<T: std::str::FromStr<Err = imi_core::ImiError>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: imi_core::ImiError| e.to_string())
}

impl Args {
    fn load(&self) -> Result<RunConfig, CliError> {
        let ov = Overrides {
            out: self.out.clone(),
            seed: self.seed,
            units: self.units,
            condition: self.condition,
            difficulty: self.difficulty,
        };
        RunConfig::load(&self.config, &ov)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PrepareStimuli(a) => {
            let cfg = a.load()?;
            let r = prepare::run(&cfg)?;
            println!(
                "prepared {} units, {} images in {}",
                r.units.len(),
                r.stimulus_images,
                cfg.prepared_dir().display()
            );
        }
        Command::Serve(a) => serve::run(&a.load()?)?,
        Command::Simulate(a) => {
            let cfg = a.load()?;
            let r = simulate::run(&cfg)?;
            for t in &r.tasks {
                println!(
                    "{}: {} sessions, {}/{} passing, accuracy {:.3}",
                    t.task, t.sessions, t.passing_sessions, t.target_passing_sessions, t.mean_accuracy
                );
            }
            println!("{} responses ({} main) in {}", r.records, r.main, cfg.dataset_dir().display());
        }
        Command::Analyze(a) => {
            let cfg = a.load()?;
            let r = analyze::run(&cfg)?;
            println!("{} reports in {}", r.reports.len(), cfg.analysis_dir().display());
        }
        Command::Export(a) => {
            let cfg = a.load()?;
            let r = export::run(&cfg)?;
            println!("exported {} responses to {}", r.records, cfg.export_dir().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
