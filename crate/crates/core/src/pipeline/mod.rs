//! Dataset generation, fold splits, training runs and reports.

pub mod dataset;
pub mod experiment;
pub mod report;
pub mod simulate;
pub mod splits;
