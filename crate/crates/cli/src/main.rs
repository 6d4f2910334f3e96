use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stackelberg_core::run::{
    emit_plot_data, load_config, run_compare, run_shoot, run_solve, RunConfig, EXIT_ERROR, EXIT_NOT_CONVERGED, EXIT_OK,
};
use stackelberg_core::transcription::CollocationRule;

/// Open-loop Stackelberg solutions of the spacecraft pursuit-evasion game.
#[derive(Debug, Parser)]
#[command(name = "stackelberg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration; omitted fields take the benchmark defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the leader's problem by semi-direct collocation.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Number of mesh segments (overrides `mesh`).
        #[arg(long)]
        mesh: Option<usize>,
        /// Collocation rule: `hermite-simpson` or `gauss-lobatto-5`.
        #[arg(long)]
        rule: Option<CollocationRule>,
    },
    /// Solve the boundary-value problem by shooting from a seed trajectory.
    Shoot {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV used as the seed, usually written by `solve`.
        #[arg(long)]
        seed: PathBuf,
    },
    /// Compare two trajectory files on a common time grid.
    Compare {
        #[command(flatten)]
        common: Common,
        a: PathBuf,
        b: PathBuf,
    },
    /// Write plot-ready CSV files from a trajectory file.
    Plotdata {
        #[command(flatten)]
        common: Common,
        trajectory: PathBuf,
    },
}

fn config(common: &Common) -> stackelberg_core::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => load_config(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> stackelberg_core::Result<i32> {
    match cli.command {
        Command::Solve { common, mesh, rule } => {
            let mut cfg = config(&common)?;
            if let Some(n) = mesh {
                cfg.mesh = n;
            }
            if let Some(r) = rule {
                cfg.rule = r;
            }
            let out = run_solve(&cfg)?;
            let d = &out.diagnostics;
            println!(
                "solve: {} tf = {:.10} (constraint norm {:.2e}, {} iterations) -> {}",
                out.status.status,
                d.terminal_time,
                d.constraint_norm,
                d.iterations,
                cfg.output_dir.display()
            );
            Ok(out.status.exit_code)
        }
        Command::Shoot { common, seed } => {
            let cfg = config(&common)?;
            let out = run_shoot(&cfg, &seed)?;
            let d = &out.diagnostics;
            println!(
                "shoot: {} tf = {:.10} (residual {:.2e}, {} iterations) -> {}",
                out.status.status,
                d.terminal_time,
                d.residual_norm,
                d.iterations,
                cfg.output_dir.display()
            );
            if out.status.exit_code != EXIT_OK {
                eprintln!("last residuals: {:?}", d.residual);
            }
            Ok(out.status.exit_code)
        }
        Command::Compare { common, a, b } => {
            let cfg = config(&common)?;
            let report = run_compare(&a, &b, &cfg.compare, &cfg.output_dir)?;
            println!(
                "compare: tf {:.10} vs {:.10}, relative difference {:.4e}",
                report.tf_a, report.tf_b, report.tf_relative_difference
            );
            for (name, dev) in &report.max_deviation {
                println!("  max |d {name}| = {dev:.4e}");
            }
            println!("compare: {}", if report.pass { "pass" } else { "fail" });
            Ok(if report.pass { EXIT_OK } else { EXIT_NOT_CONVERGED })
        }
        Command::Plotdata { common, trajectory } => {
            let cfg = config(&common)?;
            for path in emit_plot_data(&trajectory, &cfg.output_dir)? {
                println!("{}", path.display());
            }
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    };
    ExitCode::from(code as u8)
}
