//! File ingestion, run configuration and table exports behind the `mixfdr` binary.

pub mod commands;
pub mod error;
pub mod ingest;
pub mod output;

pub use commands::{analyze, simulate, AnalyzeConfig, SimulateConfig};
pub use error::CliError;
pub use ingest::{ingest, read_table, write_table, ColumnRoles};
