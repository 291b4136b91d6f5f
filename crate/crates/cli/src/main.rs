use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use irs_slp::baselines::Scheme;
use irs_slp_cli::commands::{self, CheckOptions, Run};
use irs_slp_cli::config::RunConfig;
use irs_slp_cli::files::write_json;

/// Joint symbol-level precoding and IRS phase design, with BER simulation.
#[derive(Debug, Parser)]
#[command(name = "irs-slp", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML configuration file; defaults apply to anything it omits.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set sweep.trials=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed (overrides the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for realization-level parallelism; 1 gives
    /// byte-reproducible output.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only print errors.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize one channel realization and write the design and trace.
    Solve {
        /// Scenario file from `gen-scenario`; generated from the config if absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// slp-irs, slp-noirs, slp-random-theta or zf-noirs.
        #[arg(long)]
        scheme: Option<Scheme>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Monte-Carlo BER sweep; writes the results CSV and a run manifest.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Per-iteration objective values of the joint design as CSV.
    Trace {
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference gradient, projection and smoothing-bound checks.
    Check {
        /// Random instances per gradient check.
        #[arg(long, default_value_t = 100)]
        instances: usize,
        /// Write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt_gradient: f64,
    },
    /// Draw one channel realization and save it.
    GenScenario {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    PrintConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.quiet {
        "error"
    } else {
        match cli.global.verbose {
            0 => "info",
            1 => "debug",
            _ => "trace",
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let g = &cli.global;
    let mut config = RunConfig::load_with_overrides(g.config.as_deref(), &g.overrides)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if matches!(cli.command, Command::PrintConfig) {
        config.resolve()?;
        print!("{}", config.to_toml()?);
        return Ok(ExitCode::SUCCESS);
    }
    let run = Run::new(config)?;
    match cli.command {
        Command::Solve {
            scenario,
            scheme,
            out,
            trace_out,
        } => {
            let s = commands::solve(&run, scenario.as_deref(), scheme, out.as_deref(), trace_out.as_deref())?;
            println!("scheme: {}", s.scheme);
            println!("exact objective g: {:.10e}", s.exact_objective);
            println!("smoothed objective f: {:.10e}", s.smoothed_objective);
            println!("worst margin: {:.10e}", s.worst_margin);
            println!(
                "BER at noise {} dB: {:.4e} ({} trials)",
                run.config.power.noise_db, s.ber, s.ber_trials
            );
            println!("outer iterations: {} (converged: {})", s.outer_iterations, s.converged);
            println!("design: {}", s.design_path.display());
            if let Some(p) = s.trace_path {
                println!("trace: {}", p.display());
            }
        }
        Command::Sweep { out, manifest } => {
            let s = commands::sweep(&run, g.threads, out.as_deref(), manifest.as_deref())?;
            println!("{} records written to {}", s.records, s.csv.display());
            println!("manifest: {}", s.manifest.display());
        }
        Command::Trace { scenario, out } => {
            let (path, f) = commands::trace(&run, scenario.as_deref(), out.as_deref())?;
            println!("{} objective values written to {}", f.len(), path.display());
        }
        Command::Check {
            instances,
            report,
            corrupt_gradient,
        } => {
            let opts = CheckOptions {
                gradient_instances: instances,
                corrupt_gradient,
                ..CheckOptions::default()
            };
            let r = commands::check(&run, &opts)?;
            print!("{}", commands::format_check(&r));
            if let Some(p) = report {
                write_json(&p, &r)?;
            }
            if !r.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::GenScenario { out } => {
            let p = commands::gen_scenario(&run, out.as_deref())?;
            println!("scenario: {}", p.display());
        }
        Command::PrintConfig => unreachable!(),
    }
    Ok(ExitCode::SUCCESS)
}
