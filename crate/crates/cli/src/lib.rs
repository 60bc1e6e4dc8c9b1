//! Batch experiment runner: TOML sweep configs in, `results.jsonl` and
//! `summary.csv` out.

pub mod config;
pub mod runner;
pub mod summary;

pub use config::{cell_hash, Cell, ExperimentConfig, MethodId, MethodSpec, PricingSource, Source};
pub use runner::{read_records, run, CellArtifact, ResultRecord, RunOptions, RunReport, CELLS_DIR, RESULTS_FILE};
pub use summary::{summarize, summarize_records, SummaryRow, SUMMARY_FILE};
