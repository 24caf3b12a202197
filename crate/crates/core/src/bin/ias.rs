use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ias_core::config::{ExperimentConfig, PRESETS};
use ias_core::experiment::{compare, exit_code, generate, run_experiment};
use ias_core::Error;

/// Sparse reconstruction with hybrid IAS solvers.
#[derive(Parser)]
#[command(name = "ias", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the data of an experiment and write it to the output directory.
    Generate(Setup),
    /// Solve an experiment and write reconstruction, trace and metrics.
    Run(Setup),
    /// Print the metrics of two run directories side by side.
    Compare { a: PathBuf, b: PathBuf },
    /// List the built-in presets.
    Presets,
    /// Print the fully resolved configuration.
    Show(Setup),
}

#[derive(Args)]
struct Setup {
    #[arg(long)]
    preset: Option<String>,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// key=value applied after the preset and the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Setup {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match (&self.preset, &self.config) {
            (Some(_), Some(_)) => return Err(Error::Config {
                location: "command line".into(),
                message: "give either --preset or --config, not both".into(),
            }),
            (Some(p), None) => ExperimentConfig::preset(p)?,
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
                    location: path.display().to_string(),
                    message: e.to_string(),
                })?;
                ExperimentConfig::parse(&text).map_err(|e| match e {
                    Error::Config { location, message } => Error::Config {
                        location: format!("{}: {location}", path.display()),
                        message,
                    },
                    other => other,
                })?
            }
            (None, None) => return Err(Error::Config {
                location: "command line".into(),
                message: "one of --preset or --config is required".into(),
            }),
        };
        for kv in &self.overrides {
            cfg.apply_override(kv)?;
        }
        if let Some(s) = self.seed {
            cfg.set_seed(s)?;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| {
        PathBuf::from("runs").join(cfg.preset.clone().unwrap_or_else(|| "custom".into()))
    })
}

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Presets => {
            emit(&PRESETS.map(|p| format!("{p}\n")).concat());
            Ok(())
        }
        Command::Show(s) => s.resolve().map(|c| emit(&c.serialize())),
        Command::Generate(s) => s.resolve().and_then(|cfg| {
            let out = out_dir(&cfg);
            let p = generate(&cfg, &out)?;
            emit(&format!("wrote {} observations to {}\n", p.m(), out.display()));
            Ok(())
        }),
        Command::Run(s) => s.resolve().and_then(|cfg| {
            let out = out_dir(&cfg);
            let o = run_experiment(&cfg, &out)?;
            let mut text: String = o.metrics.rows().iter().map(|(k, v)| format!("{k:>18}  {v}\n")).collect();
            text.push_str(&format!("artifacts in {}\n", out.display()));
            emit(&text);
            Ok(())
        }),
        Command::Compare { a, b } => compare(&a, &b).map(|t| emit(&t)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
