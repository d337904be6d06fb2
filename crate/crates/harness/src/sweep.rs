//! Parameter sweeps: a base scenario, grids of one varied key each, runs in
//! parallel and a deterministic table of results.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::config::{ConfigError, ScenarioConfig};
use crate::run::{simulate_summary, write_report, RunReport};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Scenario file, relative to the spec file.
    pub base: PathBuf,
    #[serde(default)]
    pub grid: Vec<GridSpec>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Dotted key into the scenario, e.g. `metric.e_z_star`.
    pub parameter: String,
    #[serde(default)]
    pub values: Vec<f64>,
    /// Takes the values from the durations of another method's rows.
    #[serde(default, rename = "match")]
    pub match_durations: Option<String>,
    /// Replaces the base scenario's `[method]` table.
    #[serde(default)]
    pub method: Option<toml::Table>,
    /// Further keys set to `coefficient * value` at every grid point.
    #[serde(default)]
    pub linked: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub method: String,
    pub parameter: String,
    pub value: f64,
    pub duration_s: Option<f64>,
    pub steady_max_error_nm: Option<f64>,
    pub status: String,
    /// Stem of the per-run files under `runs/`.
    pub run: String,
}

impl SweepRow {
    pub fn ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep spec: {0}")]
    Spec(ConfigError),
    #[error("base scenario {path}: {source}")]
    Base { path: PathBuf, source: ConfigError },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

pub const TABLE: &str = "sweep.csv";

struct Job {
    id: String,
    method: String,
    parameter: String,
    value: f64,
    config: Result<ScenarioConfig, String>,
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), String> {
    let mut parts = key.split('.').peekable();
    let mut t = table;
    while let Some(part) = parts.next() {
        if parts.peek().is_none() {
            t.insert(part.to_string(), value);
            return Ok(());
        }
        t = t
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("`{part}` in `{key}` is not a table"))?;
    }
    Err(format!("empty parameter key `{key}`"))
}

/// Applies one grid point to the base scenario. Integral values are retried
/// as integers for keys such as `lines`.
fn variant(base: &toml::Table, grid: &GridSpec, value: f64, name: &str) -> Result<ScenarioConfig, String> {
    let mut t = base.clone();
    if let Some(m) = &grid.method {
        t.insert("method".into(), toml::Value::Table(m.clone()));
    }
    t.insert("name".into(), toml::Value::String(name.to_string()));
    set_dotted(&mut t, &grid.parameter, toml::Value::Float(value))?;
    for (key, coefficient) in &grid.linked {
        set_dotted(&mut t, key, toml::Value::Float(coefficient * value))?;
    }
    let parsed = ScenarioConfig::deserialize(t.clone());
    let cfg = match parsed {
        Ok(cfg) => cfg,
        Err(e) if value.fract() == 0.0 && value.abs() < 9e15 => {
            set_dotted(&mut t, &grid.parameter, toml::Value::Integer(value as i64))?;
            ScenarioConfig::deserialize(t).map_err(|_| e.to_string())?
        }
        Err(e) => return Err(e.to_string()),
    };
    cfg.build().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn method_of(base: &toml::Table, grid: &GridSpec) -> String {
    grid.method
        .as_ref()
        .or_else(|| base.get("method").and_then(|m| m.as_table()))
        .and_then(|m| m.get("kind"))
        .and_then(|k| k.as_str())
        .unwrap_or("unknown")
        .to_string()
}

fn execute(jobs: Vec<Job>, runs: &Path) -> Vec<SweepRow> {
    jobs.into_par_iter()
        .map(|job| {
            let outcome = job.config.and_then(|cfg| {
                let path = runs.join(format!("{}.toml", job.id));
                std::fs::write(&path, cfg.to_toml()).map_err(|e| format!("{}: {e}", path.display()))?;
                let scenario = cfg.build().map_err(|e| e.to_string())?;
                let report = simulate_summary(&scenario).map_err(|e| e.to_string())?;
                write_report(&report, &runs.join(format!("{}.summary.json", job.id))).map_err(|e| e.to_string())?;
                Ok(report)
            });
            row(job.id, job.method, job.parameter, job.value, outcome)
        })
        .collect()
}

fn row(run: String, method: String, parameter: String, value: f64, outcome: Result<RunReport, String>) -> SweepRow {
    match outcome {
        Ok(report) => SweepRow {
            method,
            parameter,
            value,
            duration_s: Some(report.summary.duration),
            steady_max_error_nm: report.summary.steady.map(|s| s.q_e_max),
            status: "ok".into(),
            run,
        },
        Err(message) => SweepRow {
            method,
            parameter,
            value,
            duration_s: None,
            steady_max_error_nm: None,
            status: format!("error: {message}"),
            run,
        },
    }
}

pub fn load_spec(path: &Path) -> Result<(SweepSpec, toml::Table), SweepError> {
    let text = std::fs::read_to_string(path)?;
    let spec: SweepSpec = toml::from_str(&text).map_err(|e| {
        SweepError::Spec(ConfigError {
            field: String::new(),
            line: e.span().map(|s| crate::config::line_of(&text, s.start)),
            message: e.message().trim().to_string(),
        })
    })?;
    let base_path = path.parent().unwrap_or(Path::new(".")).join(&spec.base);
    let base_text = std::fs::read_to_string(&base_path)?;
    // Validate the base on its own so its errors point into its own file.
    crate::config::parse_scenario(&base_text).map_err(|source| SweepError::Base {
        path: base_path.clone(),
        source,
    })?;
    let base: toml::Table = toml::from_str(&base_text).expect("validated above");
    Ok((spec, base))
}

/// Runs every grid point, writes `runs/<id>.{toml,summary.json}` and the
/// table, and returns the rows sorted by method, then value.
pub fn run_sweep(spec: &SweepSpec, base: &toml::Table, out_dir: &Path, jobs: Option<usize>) -> Result<Vec<SweepRow>, SweepError> {
    let runs = out_dir.join("runs");
    std::fs::create_dir_all(&runs)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().map_err(|e| std::io::Error::other(e.to_string()))?;
    let base_name = base.get("name").and_then(|n| n.as_str()).unwrap_or("sweep").to_string();

    let plan = |stage_rows: &[SweepRow], matched: bool| -> Vec<Job> {
        let mut jobs = Vec::new();
        for (g, grid) in spec.grid.iter().enumerate() {
            if grid.match_durations.is_some() != matched {
                continue;
            }
            let method = method_of(base, grid);
            let values: Vec<f64> = match &grid.match_durations {
                Some(other) => stage_rows
                    .iter()
                    .filter(|r| &r.method == other && r.ok())
                    .filter_map(|r| r.duration_s)
                    .collect(),
                None => grid.values.clone(),
            };
            for (i, &value) in values.iter().enumerate() {
                let id = format!("{method}-{g}-{i}");
                let name = format!("{base_name}-{id}");
                jobs.push(Job {
                    config: variant(base, grid, value, &name),
                    id,
                    method: method.clone(),
                    parameter: grid.parameter.clone(),
                    value,
                });
            }
        }
        jobs
    };

    let mut rows = pool.install(|| execute(plan(&[], false), &runs));
    rows.sort_by(order);
    let matched = pool.install(|| execute(plan(&rows, true), &runs));
    rows.extend(matched);
    rows.sort_by(order);
    write_table(&rows, &out_dir.join(TABLE))?;
    Ok(rows)
}

fn order(a: &SweepRow, b: &SweepRow) -> std::cmp::Ordering {
    a.method
        .cmp(&b.method)
        .then(a.value.total_cmp(&b.value))
        .then(a.parameter.cmp(&b.parameter))
        .then(a.run.cmp(&b.run))
}

pub fn write_table(rows: &[SweepRow], path: &Path) -> Result<(), SweepError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(["method", "parameter", "value", "duration_s", "steady_max_error_nm", "status", "run"])?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
