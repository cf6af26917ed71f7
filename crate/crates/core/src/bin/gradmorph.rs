use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use gradmorph::data::Split;
use gradmorph::pipeline::{Command, Experiment, ExperimentConfig};

/// Gradient-based input transfer experiments.
///
/// Exit codes: 0 success, 1 invalid config or contract violation, 2 I/O or
/// file-format error.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// gen-data | train-seg | perturb | train-translator | infer | evaluate | end2end-baseline
    command: String,
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for every artifact.
    #[arg(long)]
    out: PathBuf,
    /// Config override, e.g. `--set perturb.gamma=0.1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Shorthand for `--set mode.split=<split>`.
    #[arg(long)]
    split: Option<String>,
}

fn run(cli: Cli) -> gradmorph::Result<()> {
    let command: Command = cli.command.parse()?;
    let mut sets = cli.sets;
    if let Some(split) = cli.split {
        split.parse::<Split>()?;
        sets.push(format!("mode.split=\"{split}\""));
    }
    let config = ExperimentConfig::load(&cli.config, &sets)?;
    let outcome = Experiment::new(config, cli.out)?.run(command)?;
    for line in outcome.lines {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
