use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wacil::config::{self, ExperimentConfig, PRESETS};
use wacil::{run, Error, Execution, Result};

#[derive(Parser, Debug)]
#[command(name = "wacil", version, about = "Class-incremental learning with weight aligning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and persist it to the output directory.
    Run {
        /// TOML experiment config.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Named preset; with --config, replaces only the variation switches.
        #[arg(long)]
        preset: Option<String>,
        /// Global seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (overrides the config).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Dotted `key=value` config override; repeatable.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Disable data-parallel execution.
        #[arg(long)]
        sequential: bool,
    },
    /// Recompute the summary table from a run directory.
    Analyze { dir: PathBuf },
    /// Render norm and confusion figures from a run directory.
    Plot { dir: PathBuf },
    /// List the named presets.
    PresetList,
}

fn build_config(
    config: Option<PathBuf>,
    preset: Option<String>,
    seed: Option<u64>,
    output: Option<PathBuf>,
    overrides: &[String],
    sequential: bool,
) -> Result<ExperimentConfig> {
    let mut cfg = match (&config, &preset) {
        (Some(path), _) => config::parse_config(path)?,
        (None, Some(name)) => config::preset(name)?,
        (None, None) => return Err(Error::Config("run needs --config or --preset".into())),
    };
    if let (Some(_), Some(name)) = (&config, &preset) {
        cfg.variation = config::preset_variation(name)?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(output) = output {
        cfg.output = output;
    }
    if sequential {
        cfg.execution = Execution::Sequential;
    }
    let cfg = config::apply_overrides(&cfg, overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            preset,
            seed,
            output,
            overrides,
            sequential,
        } => {
            let cfg = build_config(config, preset, seed, output, &overrides, sequential)?;
            let (dir, result) = run::execute(&cfg)?;
            for m in &result.steps {
                println!(
                    "step {}: {} classes, top-1 {:.4}, top-5 {:.4}{}",
                    m.step,
                    m.seen_classes,
                    m.top1,
                    m.top5,
                    m.gamma_applied.map(|g| format!(", gamma {g:.4}")).unwrap_or_default()
                );
            }
            print!("{}", result.summary.render());
            println!("run written to {}", dir.root().display());
        }
        Command::Analyze { dir } => print!("{}", run::analyze(&dir)?.render()),
        Command::Plot { dir } => {
            for path in run::plot(&dir)? {
                println!("{}", path.display());
            }
        }
        Command::PresetList => {
            for name in PRESETS {
                println!("{name:<12} {}", config::preset_description(name));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
