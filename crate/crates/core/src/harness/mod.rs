//! Experiment orchestration: config loading, seeded runs and result files.
//!
//! Every (seed, suite) cell builds a fresh model pair per controller from the
//! same derived model seed, runs the fixed-length baseline once, and measures
//! every configured controller against it. Cells run in parallel; results
//! are collected in config order so output files are reproducible byte for
//! byte.
//!
//! Seeds are split by label with [`crate::rng::derive_seed`]:
//!
//! | stream | labels |
//! |---|---|
//! | synthetic model | `model`, suite tag |
//! | bandit sampling | `controller`, controller name, suite tag, `bandit` |

mod config;
mod experiment;
mod output;

pub use config::{baseline_name, ExperimentConfig, SuiteConfig, TableFormat, TraceSource};
pub use experiment::{run_experiment, ControllerRun, ExperimentResult, ResultRow};
pub use output::{
    emit_results, profile_table, results_table, summarize, SummaryRow, ARM_VALUES_FILE, MANIFEST_FILE, PROFILE_STEM,
    RESULTS_STEM, SESSIONS_FILE,
};
