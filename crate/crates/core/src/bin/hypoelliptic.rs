use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hypoelliptic::experiment::{
    preset, resolve_output_dir, run_experiment, ConfigError, ExperimentConfig, ExperimentError,
    Source, PRESETS,
};

/// Drift estimation for second-order SDEs from position-only data.
#[derive(Parser)]
#[command(name = "hypoelliptic", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write CSV results.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: config output_dir, then
        /// $HYPOELLIPTIC_OUTPUT_DIR/<name>, then runs/<name>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List built-in experiment presets.
    ListPresets,
    /// Run an experiment in memory and print its summary table.
    Diagnose {
        #[command(flatten)]
        source: ConfigSource,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ConfigSource {
    /// TOML config file (or JSON, e.g. a previous metadata.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Name of a built-in preset.
    #[arg(long)]
    preset: Option<String>,
}

struct Loaded {
    name: String,
    config: ExperimentConfig,
    source: Option<Source>,
}

fn load(src: &ConfigSource, seed: Option<u64>) -> Result<Loaded, ExperimentError> {
    let (name, mut config, source) = match (&src.config, &src.preset) {
        (Some(path), _) => {
            let (cfg, source) = ExperimentConfig::from_path(path).map_err(|mut e| {
                e.message = format!("{}: {}", path.display(), e.message);
                e
            })?;
            let name = path.file_stem().map_or_else(
                || "experiment".to_string(),
                |s| s.to_string_lossy().into_owned(),
            );
            (name, cfg, Some(source))
        }
        (None, Some(name)) => {
            let p = preset(name).ok_or_else(|| ConfigError {
                line: None,
                field: Some("preset".into()),
                message: format!(
                    "unknown preset '{name}' (available: {})",
                    PRESETS
                        .iter()
                        .map(|p| p.name)
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            })?;
            (name.clone(), p.config(), None)
        }
        (None, None) => unreachable!("clap requires --config or --preset"),
    };
    if let Some(seed) = seed {
        config.master_seed = seed;
    }
    Ok(Loaded {
        name,
        config,
        source,
    })
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::ListPresets => {
            for p in PRESETS {
                println!("{:<12} {}", p.name, p.description);
            }
        }
        Command::Run { source, seed, out } => {
            let l = load(&source, seed)?;
            let dir = resolve_output_dir(out.as_deref(), &l.config, &l.name);
            let report = run_experiment(&l.config, l.source.as_ref(), Some(&dir))?;
            print!("{}", report.table);
            println!("wrote {} files to {}", report.files.len(), dir.display());
        }
        Command::Diagnose { source, seed } => {
            let l = load(&source, seed)?;
            let report = run_experiment(&l.config, l.source.as_ref(), None)?;
            print!("{}", report.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<ExperimentError>()
                .map_or(1, ExperimentError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
