use std::io::{self, Write};
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use erd_core::agents::ActionMode;
use erd_core::harness::{self, ExperimentConfig, RunMode};
use erd_core::instance::{self, SchematicParams};
use erd_core::service::{self, ServerConfig};

#[derive(Parser)]
#[command(name = "erd", version, about = "Escape Room Domain instances, experiments and live sessions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an instance from the schematic.
    Generate {
        #[arg(long, default_value_t = 1)]
        buttons: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Schematic parameters as JSON; `--buttons` overrides its button count.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Output file (stdout when omitted).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Check an instance file; exits 1 when it is invalid.
    Validate { file: PathBuf },
    /// Run an experiment config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, value_enum)]
        meta_actions: Option<Switch>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        timesteps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config's `output_dir`).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Serve live sessions over HTTP and WebSocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Directory of static UI assets.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Re-simulate a debug-mode diagnostics log and compare rewards.
    Replay {
        #[arg(long)]
        log: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Release,
    Debug,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Generate {
            buttons,
            seed,
            params,
            output,
        } => {
            let mut p = match params {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).with_context(|| path.display().to_string())?;
                    serde_json::from_str::<SchematicParams>(&text).with_context(|| path.display().to_string())?
                }
                None => SchematicParams::default(),
            };
            p.num_buttons = buttons;
            let inst = instance::generate(&p, seed)?;
            let text = instance::serialize(&inst);
            match output {
                Some(path) => {
                    std::fs::write(&path, text).with_context(|| path.display().to_string())?;
                    eprintln!("wrote instance {} to {}", inst.id(), path.display());
                }
                None => io::stdout().write_all(text.as_bytes())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate { file } => {
            let text = std::fs::read_to_string(&file).with_context(|| file.display().to_string())?;
            let inst = instance::deserialize(&text)?;
            let violations = instance::validate(&inst);
            if violations.is_empty() {
                println!("ok {}", inst.id());
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &violations {
                    println!("{}: {}", v.check, v.detail);
                }
                Ok(ExitCode::from(1))
            }
        }
        Command::Train {
            config,
            mode,
            meta_actions,
            trials,
            timesteps,
            seed,
            output,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::Release => RunMode::Release,
                    ModeArg::Debug => RunMode::Debug,
                };
            }
            if let Some(s) = meta_actions {
                cfg.action_mode = match s {
                    Switch::On => ActionMode::WithMeta,
                    Switch::Off => ActionMode::Primitives,
                };
            }
            cfg.trials = trials.unwrap_or(cfg.trials);
            cfg.training_timesteps = timesteps.unwrap_or(cfg.training_timesteps);
            cfg.master_seed = seed.unwrap_or(cfg.master_seed);
            let base = config.parent().unwrap_or(Path::new("."));
            let output = output.as_deref();
            if output.is_none() && cfg.output_dir.is_none() {
                bail!("no output directory: pass -o or set output_dir in the config");
            }
            let mut stderr = io::stderr().lock();
            let diag: Option<&mut dyn Write> = match cfg.mode {
                RunMode::Debug => Some(&mut stderr),
                RunMode::Release => None,
            };
            let table = harness::run_to_dir(&cfg, base, output, diag)?;
            println!("instance {}", table.instance_id);
            println!("algorithm,trials,episodes,exit_rate,optimal_rate,mean_normalized,stderr_normalized");
            for w in &table.final_window {
                println!(
                    "{},{},{},{:.3},{:.3},{:.2},{:.2}",
                    w.algorithm, w.trials, w.episodes, w.exit_rate, w.optimal_rate, w.mean_normalized, w.stderr_normalized
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { port, host, assets } => {
            if let Some(dir) = &assets {
                if !dir.is_dir() {
                    bail!("asset directory {} does not exist", dir.display());
                }
            }
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(ServerConfig {
                addr: SocketAddr::new(host, port),
                assets,
            }))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { log } => {
            let report = harness::replay_file(&log)?;
            println!("replayed {} episodes, {} steps", report.episodes, report.steps);
            for m in &report.mismatches {
                println!("mismatch {m}");
            }
            Ok(if report.is_clean() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}
