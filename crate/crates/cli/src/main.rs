//! Experiment driver: config-driven pipelines from toy models through
//! Hessian sketches, incoherence processing and rounding to KL metrics,
//! plus the property-suite runner.
//!
//! Exit codes: 0 success, 1 validation error, 2 property-suite failure.

mod commands;
mod config;
mod experiment;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "yaqa", version, about = "Adaptive rounding with Kronecker Hessian sketches")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for trial-parallel commands (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Round a weight matrix against a sketch from the binary container.
    Round {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Incoherence processing on|off, overriding the config.
        #[arg(long)]
        ip: Option<String>,
    },
    /// Build a Kronecker Hessian sketch for a toy-model layer.
    Sketch {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's method (ldlq|a|b|powerfull|vanloan).
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Path to a JSON data spec overriding the config's data section.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Incoherence processing on|off, overriding the config.
        #[arg(long)]
        ip: Option<String>,
    },
    /// Evaluate the error bounds on random instances, one CSV row each.
    BoundCheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a full experiment config: one CSV row per (algorithm × trial).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the property suites and report pass/fail with repro seeds.
    Verify {
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Corrupt the vec convention inside the oracle suite; the suite is
        /// then expected to fail (negative-control fixture).
        #[arg(long, default_value_t = false)]
        negative_control: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Usage problems are validation errors; --help/--version are not.
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            print!("{e}");
            return ExitCode::from(if benign { 0 } else { 1 });
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("threads: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn parse_ip(flag: Option<String>) -> Result<Option<bool>, String> {
    match flag.as_deref() {
        None => Ok(None),
        Some("on") => Ok(Some(true)),
        Some("off") => Ok(Some(false)),
        Some(other) => Err(format!("--ip: expected on|off, got '{other}'")),
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, String> {
    match cmd {
        Command::Round { config, out, seed, ip } => {
            let mut cfg: config::RoundConfig = config::load_config(&config)?;
            if let Some(v) = parse_ip(ip)? {
                cfg.ip = v;
            }
            commands::cmd_round(&cfg, &out, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sketch { config, out, method, iters, seed, data, ip } => {
            let mut cfg: config::SketchConfig = config::load_config(&config)?;
            if let Some(v) = parse_ip(ip)? {
                cfg.ip = v;
            }
            commands::cmd_sketch(&cfg, &out, commands::SketchOverrides { method, iters, seed, data })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::BoundCheck { config, out, seed } => {
            let cfg: config::BoundCheckConfig = config::load_config(&config)?;
            commands::cmd_bound_check(&cfg, &out, seed)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, out, seed } => {
            let mut cfg: config::ExperimentConfig = config::load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let (rows, summary) = experiment::run_experiment(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            std::fs::write(out.join("results.csv"), experiment::rows_to_csv(&rows))
                .map_err(|e| e.to_string())?;
            std::fs::write(
                out.join("summary.json"),
                serde_json::to_string_pretty(&summary).map_err(|e| e.to_string())?,
            )
            .map_err(|e| e.to_string())?;
            for (algo, kl) in &summary.median_kl_per_algorithm {
                println!("run: {algo} median KL {kl:.6e}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suite, seed, negative_control } => {
            let suite: yaqa_core::verify::Suite = suite.parse()?;
            let report = yaqa_core::verify::run_suite(suite, yaqa_core::verify::VerifyOpts {
                seed: seed.unwrap_or(0),
                negative_control,
            });
            for check in &report.checks {
                println!("{}", check.line());
            }
            if report.all_passed() {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::from(2))
            }
        }
    }
}
