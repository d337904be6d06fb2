//! Trace CSV writer.

use std::io::Write;

use adaptscan_core::sim::{TraceRow, TraceSink};
use adaptscan_core::{Error, Result};

pub const HEADER: &str = "t,tau,eps,eps_hat,r_x,r_y,p_x,p_y,e_x,e_y,p_z,e_z,q,q_e,gate,clamp";

/// Second line of every trace; readers treat it as a comment.
pub const UNITS: &str = "# units: s,1,1,1,um,um,um,um,um,um,nm,nm,nm^2,nm,flag,flag";

/// Streams rows as CSV, keeping every `every`-th row and always the last.
///
/// Floats use the shortest representation that round-trips, so equal runs
/// give byte-identical files.
pub struct CsvTrace<W: Write> {
    out: W,
    every: u64,
    last_written: Option<u64>,
    rows: u64,
}

impl<W: Write> CsvTrace<W> {
    pub fn new(mut out: W, every: u64) -> Result<Self> {
        writeln!(out, "{HEADER}\n{UNITS}").map_err(sink_error)?;
        Ok(Self {
            out,
            every: every.max(1),
            last_written: None,
            rows: 0,
        })
    }

    pub fn rows_written(&self) -> u64 {
        self.rows
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn write(&mut self, r: &TraceRow) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.tau,
            r.eps,
            r.eps_hat,
            r.r[0],
            r.r[1],
            r.p[0],
            r.p[1],
            r.e[0],
            r.e[1],
            r.p_z,
            r.e_z,
            r.q,
            r.q_e,
            u8::from(r.gate),
            u8::from(r.clamp),
        )
        .map_err(sink_error)?;
        self.last_written = Some(r.step);
        self.rows += 1;
        Ok(())
    }
}

fn sink_error(e: std::io::Error) -> Error {
    Error::Sink(e.to_string())
}

impl<W: Write> TraceSink for CsvTrace<W> {
    fn push(&mut self, row: &TraceRow) -> Result<()> {
        if row.step % self.every == 0 {
            self.write(row)?;
        }
        Ok(())
    }

    fn finish(&mut self, last: &TraceRow) -> Result<()> {
        if self.last_written != Some(last.step) {
            self.write(last)?;
        }
        self.out.flush().map_err(sink_error)
    }
}
