//! The whole experiment through the library API, the same code path the
//! `gradmorph` binary drives. Artifacts, reports and the manifest land in the
//! output directory.
//!
//! cargo run --release --example pipeline [-- <out dir> [key=value ...]]
//!
//! Overrides use the same keys as `--set`, e.g. `perturb.gamma=0.5`.

use gradmorph::data::Split;
use gradmorph::pipeline::{Command, Experiment, ExperimentConfig, Manifest};
use gradmorph::Result;

const CONFIG: &str = include_str!("configs/small.toml");

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "pipeline-example".into());
    let overrides: Vec<String> = args.collect();

    let config = ExperimentConfig::from_toml_str(CONFIG, &overrides)?;
    let train_only = ExperimentConfig {
        mode: gradmorph::pipeline::config::ModeConfig { split: Split::Train },
        ..config.clone()
    };

    // Perturbation targets come from the training split; everything else
    // uses the configured split (test).
    let steps = [
        (Command::GenData, &config),
        (Command::TrainSeg, &config),
        (Command::Perturb, &train_only),
        (Command::TrainTranslator, &config),
        (Command::Perturb, &config),
        (Command::Infer, &config),
        (Command::End2endBaseline, &config),
        (Command::Evaluate, &config),
    ];
    for (command, cfg) in steps {
        let started = std::time::Instant::now();
        let outcome = Experiment::new(cfg.clone(), &out)?.run(command)?;
        println!("== {command} ({:.1}s)", started.elapsed().as_secs_f64());
        for line in &outcome.lines {
            println!("   {line}");
        }
    }

    let exp = Experiment::new(config, &out)?;
    println!("\n{}", std::fs::read_to_string(exp.report_path("summary_test.csv")).unwrap_or_default());
    let manifest = Manifest::read(&exp.out)?;
    println!("manifest: {} command runs, {} hashed files", manifest.runs.len(), manifest.files.len());
    Ok(())
}
