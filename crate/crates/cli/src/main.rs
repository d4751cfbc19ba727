use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use eelab::config::{load_config_with, Experiment};
use eelab::{run_experiment, CliResult};

/// Run one named experiment from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "eelab", version)]
struct Args {
    experiment: Experiment,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output.dir` or `out/<experiment>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite an existing output directory.
    #[arg(long)]
    force: bool,
}

fn execute(args: &Args) -> CliResult<PathBuf> {
    let cfg = load_config_with(&args.config, Some(args.experiment), args.seed)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.dir.as_ref().map(|d| cfg.resolve(d)))
        .unwrap_or_else(|| PathBuf::from("out").join(args.experiment.name()));
    run_experiment(&cfg, &out, args.force)?;
    Ok(out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&args) {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("eelab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
