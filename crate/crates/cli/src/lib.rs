//! Batch scenario runner: configuration, execution, checks and reports.

pub mod config;
pub mod report;
pub mod scenario;
