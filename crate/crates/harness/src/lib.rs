//! Configuration, trace output, rendering and sweeps for the scan simulator.

pub mod config;
pub mod render;
pub mod run;
pub mod sweep;
pub mod trace;
