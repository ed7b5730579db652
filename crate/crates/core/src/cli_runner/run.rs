use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::cache::{CacheError, CacheStats, TableCache};
use super::config::{parse_config_str, ConfigError, ExperimentConfig, SuiteName};
use crate::bridge_engine::{BackwardSource, BridgeError, BuildBackward};
use crate::exec::{self, Execution};
use crate::verify_harness::{
    constant_suite, dichotomy_suite, identity_suite, marginal_convergence_suite, tightness_suite, Cell, DataTable,
    ExperimentReport, SuiteCtx, SuiteError, SuiteOutput,
};
use crate::walk_laws::IncrementLaw;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("stage config: {0}")]
    Config(#[from] ConfigError),
    #[error("stage cache: {0}")]
    Cache(#[from] CacheError),
    #[error("stage {stage}: {source}")]
    Suite {
        stage: String,
        #[source]
        source: SuiteError,
    },
    #[error("stage output ({path}): {source}")]
    Output {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl RunError {
    pub fn stage(&self) -> String {
        match self {
            RunError::Config(_) => "config".into(),
            RunError::Cache(_) => "cache".into(),
            RunError::Suite { stage, .. } => stage.clone(),
            RunError::Output { .. } => "output".into(),
        }
    }

    /// Errors that come from the input rather than from the numerics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            RunError::Config(_)
                | RunError::Suite { source: SuiteError::Unsupported(_), .. }
                | RunError::Suite { source: SuiteError::Bridge(BridgeError::InvalidSpec(_)), .. }
        )
    }
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub case: String,
    pub config_hash: String,
    pub seed: u64,
    pub code_version: String,
    pub passed: bool,
    pub suites: Vec<ExperimentReport>,
}

/// Contents of `meta.json`: everything that legitimately differs between
/// two runs of the same config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub config_hash: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub elapsed_s: f64,
    pub threads: usize,
    pub cache: Option<CacheStats>,
    pub files: Vec<String>,
}

pub struct RunOptions<'a> {
    pub out_dir: PathBuf,
    pub report_name: String,
    pub cache: Option<&'a TableCache>,
    pub exec: Execution,
    /// Run these instead of the config's own list.
    pub suites: Option<Vec<SuiteName>>,
}

impl RunOptions<'_> {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        RunOptions { out_dir: out_dir.into(), report_name: "report.json".into(), cache: None, exec: Execution::default(), suites: None }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: RunReport,
    pub tables: Vec<DataTable>,
    pub meta: RunMeta,
    pub files: Vec<PathBuf>,
}

pub fn run_suite(name: SuiteName, cfg: &ExperimentConfig, law: &IncrementLaw, ctx: &SuiteCtx) -> Result<SuiteOutput, SuiteError> {
    match name {
        SuiteName::Marginal => marginal_convergence_suite(law, &cfg.marginal_params(), ctx),
        SuiteName::Dichotomy => dichotomy_suite(law, &cfg.dichotomy_params(), ctx),
        SuiteName::Constant => constant_suite(law, &cfg.constant_params(law), ctx),
        SuiteName::Tightness => tightness_suite(law, &cfg.tightness_params(), ctx),
        SuiteName::Identity => identity_suite(ctx),
    }
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis())
}

/// Integral values print as integers, everything else with 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 9.007_199_254_740_992e15 {
        format!("{}", v as i64)
    } else if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn output_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Output { path: path.display().to_string(), source }
}

/// Write `table` as CSV to any sink.
pub fn write_csv_to<W: io::Write>(sink: W, table: &DataTable) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| match c {
            Cell::Num(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(path: &Path, table: &DataTable) -> Result<(), RunError> {
    let f = fs::File::create(path).map_err(output_err(path))?;
    write_csv_to(io::BufWriter::new(f), table).map_err(|e| output_err(path)(e.into()))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), RunError> {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    fs::write(path, s).map_err(output_err(path))
}

/// Run the configured suites and write `report.json`, one CSV per data
/// table and the `meta.json` sidecar into `opts.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let started = unix_ms();
    let clock = Instant::now();
    let before = opts.cache.map(TableCache::stats);
    let law = cfg.law()?;
    let hash = cfg.hash();
    let source: &dyn BackwardSource = match opts.cache {
        Some(c) => c,
        None => &BuildBackward,
    };
    let ctx = SuiteCtx { exec: opts.exec, source, seed: cfg.seed };
    let names = opts.suites.clone().unwrap_or_else(|| cfg.suites.clone());
    let mut reports = Vec::new();
    let mut tables = Vec::new();
    for name in names {
        let out = run_suite(name, cfg, &law, &ctx).map_err(|source| RunError::Suite { stage: format!("suite {}", name.as_str()), source })?;
        let mut report = out.report;
        report.case = cfg.name.clone();
        report.provenance.config_hash = hash.clone();
        reports.push(report);
        tables.extend(out.tables);
    }
    let report = RunReport {
        case: cfg.name.clone(),
        config_hash: hash.clone(),
        seed: cfg.seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        passed: reports.iter().all(|r| r.passed),
        suites: reports,
    };

    let dir = &opts.out_dir;
    fs::create_dir_all(dir).map_err(output_err(dir))?;
    let mut files = Vec::new();
    let rp = dir.join(&opts.report_name);
    write_json(&rp, &report)?;
    files.push(rp);
    for t in &tables {
        let p = dir.join(format!("{}.csv", t.name));
        write_csv(&p, t)?;
        files.push(p);
    }
    let cache = match (before, opts.cache) {
        (Some(b), Some(c)) => {
            let a = c.stats();
            Some(CacheStats {
                hits: a.hits - b.hits,
                builds: a.builds - b.builds,
                quarantined: a.quarantined - b.quarantined,
                write_failures: a.write_failures - b.write_failures,
            })
        }
        _ => None,
    };
    let meta = RunMeta {
        config_hash: hash,
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
        elapsed_s: clock.elapsed().as_secs_f64(),
        threads: exec::threads(),
        cache,
        files: files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect(),
    };
    let mp = dir.join("meta.json");
    write_json(&mp, &meta)?;
    files.push(mp);
    Ok(RunOutcome { report, tables, meta, files })
}

const DEFAULT_CONFIGS: [(&str, &str); 3] = [
    ("lace", include_str!("../../../../configs/lace.toml")),
    ("heavy25", include_str!("../../../../configs/heavy25.toml")),
    ("beta3", include_str!("../../../../configs/beta3.toml")),
];

/// The shipped configurations (lace, `β = 2.5`, `β = 3`).
pub fn default_configs() -> Vec<ExperimentConfig> {
    DEFAULT_CONFIGS.iter().map(|(name, text)| parse_config_str(text).unwrap_or_else(|e| panic!("shipped config {name}: {e}"))).collect()
}

/// Every suite a config can run.
pub fn all_suites(cfg: &ExperimentConfig) -> Vec<SuiteName> {
    let mut v = Vec::new();
    if !cfg.big_n_list.is_empty() {
        v.extend([SuiteName::Marginal, SuiteName::Dichotomy, SuiteName::Tightness]);
    }
    if !cfg.n_list.is_empty() {
        v.push(SuiteName::Constant);
    }
    v.push(SuiteName::Identity);
    v.sort_unstable();
    v
}

/// `verify all`: each config into `out_dir/<name>`, then the identity
/// suite once into `out_dir/identity` when no config asked for it.
pub fn verify_all(configs: &[ExperimentConfig], out_dir: &Path, cache: Option<&TableCache>, exec: Execution) -> Result<Vec<RunOutcome>, RunError> {
    let mut outs = Vec::new();
    let mut identity_done = false;
    for cfg in configs {
        let mut opts = RunOptions::new(out_dir.join(&cfg.name));
        opts.cache = cache;
        opts.exec = exec;
        if configs.len() == 1 {
            opts.suites = Some(all_suites(cfg));
        }
        let out = run_experiment(cfg, &opts)?;
        identity_done |= out.report.suites.iter().any(|r| r.suite == "identity");
        outs.push(out);
    }
    if !identity_done {
        let cfg = configs.first().cloned().unwrap_or_else(|| default_configs().remove(0));
        let mut opts = RunOptions::new(out_dir.join("identity"));
        opts.cache = cache;
        opts.exec = exec;
        opts.suites = Some(vec![SuiteName::Identity]);
        outs.push(run_experiment(&cfg, &opts)?);
    }
    Ok(outs)
}
