//! Command-line front end: experiment configs, run execution and summaries,
//! random-search sweeps, sampler audits, and SVG plot export.

pub mod audit;
pub mod config;
pub mod runner;
pub mod svg;
pub mod sweep;
