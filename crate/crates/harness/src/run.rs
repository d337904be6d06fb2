//! Single runs: scenario in, trace CSV and summary sidecar out.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use adaptscan_core::sim::{run_scan, NullSink, RunSummary, TraceSink};
use serde::{Deserialize, Serialize};

use crate::config::Scenario;
use crate::trace::CsvTrace;

/// Contents of the `.summary.json` sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub method: String,
    pub summary: RunSummary,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("simulation failed: {0}")]
    Simulation(adaptscan_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl RunError {
    fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Self + '_ {
        move |source| Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// `trace.csv` -> `trace.summary.json`.
pub fn summary_path(trace: &Path) -> PathBuf {
    let stem = trace.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    trace.with_file_name(format!("{stem}.summary.json"))
}

/// Runs `scenario`, streaming rows into `sink`.
pub fn simulate(scenario: &Scenario, sink: &mut dyn TraceSink) -> Result<RunReport, RunError> {
    let summary = run_scan(&scenario.setup, &scenario.law, &scenario.analysis, sink).map_err(RunError::Simulation)?;
    Ok(RunReport {
        name: scenario.name.clone(),
        method: scenario.method.to_string(),
        summary,
    })
}

/// Runs without keeping a trace.
pub fn simulate_summary(scenario: &Scenario) -> Result<RunReport, RunError> {
    simulate(scenario, &mut NullSink)
}

pub fn write_report(report: &RunReport, path: &Path) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(report).expect("run reports always serialize");
    text.push('\n');
    std::fs::write(path, text).map_err(RunError::io(path))
}

/// Writes the trace to `out` (every `decimate`-th row) and the summary
/// beside it. Summaries always see every step.
pub fn run_to_files(scenario: &Scenario, out: &Path, decimate: u64) -> Result<RunReport, RunError> {
    let file = File::create(out).map_err(RunError::io(out))?;
    let mut trace = CsvTrace::new(BufWriter::new(file), decimate).map_err(RunError::Simulation)?;
    let report = simulate(scenario, &mut trace)?;
    trace.into_inner().flush().map_err(RunError::io(out))?;
    write_report(&report, &summary_path(out))?;
    Ok(report)
}
