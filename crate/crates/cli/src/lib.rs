//! Library side of the `specact` command: configuration, metric records and
//! the subcommand bodies.

pub mod commands;
pub mod config;
pub mod metrics;

/// Overrides the output directory when set.
pub const OUT_DIR_ENV: &str = "SPECACT_OUT_DIR";
