//! File formats, artifacts, benchmarks and the command line for `rapgnn-core`.

pub mod artifact;
pub mod bench;
pub mod bundle;
pub mod cli;
pub mod config;
pub mod manifest;
pub mod parallel;
pub mod presets;
pub mod report;
