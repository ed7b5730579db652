//! Config parsing, the backward-table cache and experiment orchestration
//! behind the command-line tool.

pub mod cache;
pub mod config;
pub mod run;

pub use cache::{cache_gc, CacheError, CacheStats, GcReport, TableCache};
pub use config::{build_law, parse_config, parse_config_str, ConfigError, ExperimentConfig, LawConfig, LawSpec, SuiteName};
pub use run::{
    all_suites, default_configs, run_experiment, run_suite, verify_all, RunError, RunMeta, RunOptions, RunOutcome,
    RunReport,
};
