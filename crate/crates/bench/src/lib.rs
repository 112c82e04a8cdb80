//! Experiment harness for the `spinetree` decoder: seeded corpora, engine
//! runs with losslessness checks, summary statistics and report files.
//!
//! The `spinetree` binary is a thin clap front end over this crate.

pub mod corpus;
pub mod run;
pub mod stats;
pub mod theory_cmd;

pub use corpus::{Corpus, CorpusSpec};
pub use run::{run_ablation, run_report, AblationReport, Divergence, RunReport};

/// Bad command-line parameters; the binary exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}
