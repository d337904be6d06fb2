use std::path::PathBuf;
use std::process::ExitCode;

use adaptscan_harness::config::load_scenario;
use adaptscan_harness::render::{render_file, RenderMode};
use adaptscan_harness::run::{run_to_files, RunError};
use adaptscan_harness::sweep::{load_spec, run_sweep, SweepError, TABLE};
use clap::{Parser, Subcommand, ValueEnum};

/// Adaptive-rate AFM scan simulator.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one scenario and write its trace plus a summary sidecar.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep every k-th row (the last row is always kept).
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        decimate: u64,
    },
    /// Run a parameter grid and tabulate duration against steady-state error.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Bin a trace into a 16-bit graymap and a CSV grid.
    Render {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Topo,
    Defl,
}

/// Exit status for configuration problems; simulation and IO failures use 1.
const CONFIG_ERROR: u8 = 2;

fn fail(code: u8, message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, decimate } => {
            let scenario = match load_scenario(&config) {
                Ok((_, s)) => s,
                Err(e) => return fail(CONFIG_ERROR, format_args!("{}: {e}", config.display())),
            };
            match run_to_files(&scenario, &out, decimate) {
                Ok(report) => {
                    let s = &report.summary;
                    println!(
                        "{}: {} steps, {:.6} s, final eps_hat {:.6}, {} clamp events",
                        report.name, s.steps, s.duration, s.final_eps_hat, s.clamp_events
                    );
                    ExitCode::SUCCESS
                }
                Err(e @ RunError::Simulation(_)) | Err(e @ RunError::Io { .. }) => fail(1, e),
            }
        }
        Command::Sweep { spec, out_dir, jobs } => {
            let (sweep, base) = match load_spec(&spec) {
                Ok(v) => v,
                Err(e @ (SweepError::Spec(_) | SweepError::Base { .. })) => {
                    return fail(CONFIG_ERROR, format_args!("{}: {e}", spec.display()))
                }
                Err(e) => return fail(1, e),
            };
            match run_sweep(&sweep, &base, &out_dir, jobs) {
                Ok(rows) => {
                    let failed = rows.iter().filter(|r| !r.ok()).count();
                    for r in rows.iter().filter(|r| !r.ok()) {
                        eprintln!("{} {}={}: {}", r.method, r.parameter, r.value, r.status);
                    }
                    println!("{} rows, {failed} failed -> {}", rows.len(), out_dir.join(TABLE).display());
                    if !rows.is_empty() && failed == rows.len() {
                        ExitCode::FAILURE
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(1, e),
            }
        }
        Command::Render { trace, mode, size, out } => {
            let mode = match mode {
                Mode::Topo => RenderMode::Topography,
                Mode::Defl => RenderMode::Deflection,
            };
            match render_file(&trace, mode, size, &out) {
                Ok(img) => {
                    let filled = img.bins.iter().flatten().count();
                    println!("{size}x{size} image, {filled} bins with data -> {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(1, e),
            }
        }
    }
}
