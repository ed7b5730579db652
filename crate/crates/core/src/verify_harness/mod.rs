//! Quantitative pass/fail suites: exact DP laws and bridge samples against
//! the limit densities, plus the identity checks of the other modules.

mod identity;
mod suites;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bridge_engine::{BackwardSource, BridgeError, BuildBackward};
use crate::exec::Execution;
use crate::killed_kernel::KernelError;
use crate::limit_process::{LimitError, Mode};
use crate::stats::clopper_pearson;
use crate::walk_laws::{IncrementLaw, LawKind};

pub use identity::identity_suite;
pub use suites::{
    CheckKind, constant_suite, dichotomy_suite, marginal_convergence_suite, tightness_suite, ConstantParams, DichotomyParams,
    FractionCheck, FractionStat, MarginalParams, RatioKind, TightnessParams,
};

/// Confidence construction used for every Monte Carlo row.
pub const MC_BAND: &str = "Clopper-Pearson binomial, 99%";
const MC_LEVEL: f64 = 0.99;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "info")]
    Info,
}

impl Relation {
    fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Relation::Lt => value < threshold,
            Relation::Le => value <= threshold,
            Relation::Ge => value >= threshold,
            Relation::Gt => value > threshold,
            Relation::Info => true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Info,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    /// `N` (scaling parameter) or `n` (horizon), when the row has one.
    pub n: Option<u64>,
    pub statistic: String,
    pub value: f64,
    pub threshold: Option<f64>,
    pub relation: Relation,
    pub verdict: Verdict,
    pub seed: Option<u64>,
    /// Monte Carlo confidence band for `value`.
    pub band: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub columns: BTreeMap<String, f64>,
}

impl Row {
    pub fn check(n: Option<u64>, statistic: impl Into<String>, value: f64, relation: Relation, threshold: f64) -> Row {
        let ok = value.is_finite() && relation.holds(value, threshold);
        Row {
            n,
            statistic: statistic.into(),
            value,
            threshold: Some(threshold),
            relation,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            seed: None,
            band: None,
            columns: BTreeMap::new(),
        }
    }

    pub fn info(n: Option<u64>, statistic: impl Into<String>, value: f64) -> Row {
        Row {
            n,
            statistic: statistic.into(),
            value,
            threshold: None,
            relation: Relation::Info,
            verdict: Verdict::Info,
            seed: None,
            band: None,
            columns: BTreeMap::new(),
        }
    }

    /// Attach a seed and the binomial band of `hits / trials`.
    pub fn mc(mut self, seed: u64, hits: usize, trials: usize) -> Row {
        let (lo, hi) = clopper_pearson(hits, trials, MC_LEVEL);
        self.seed = Some(seed);
        self.band = Some([lo, hi]);
        self
    }

    pub fn with(mut self, key: &str, v: f64) -> Row {
        self.columns.insert(key.to_string(), v);
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict != Verdict::Fail
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub code_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub suite: String,
    /// Name of the configuration the suite ran under.
    pub case: String,
    pub rows: Vec<Row>,
    pub provenance: Provenance,
    pub mc_band: Option<String>,
    pub passed: bool,
}

impl ExperimentReport {
    pub fn new(suite: &str, rows: Vec<Row>) -> ExperimentReport {
        let mut seeds: Vec<u64> = rows.iter().filter_map(|r| r.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        let mc = !seeds.is_empty();
        ExperimentReport {
            suite: suite.to_string(),
            case: String::new(),
            passed: rows.iter().all(Row::passed),
            rows,
            provenance: Provenance { config_hash: String::new(), seeds, code_version: env!("CARGO_PKG_VERSION").to_string() },
            mc_band: mc.then(|| MC_BAND.to_string()),
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.passed())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Cell {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Cell {
        Cell::Text(v.to_string())
    }
}

/// Plot-ready table emitted next to a report.
#[derive(Clone, Debug, PartialEq)]
pub struct DataTable {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl DataTable {
    pub fn new(name: &str, header: &[&str]) -> DataTable {
        DataTable { name: name.to_string(), header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| Cell::Num(v)).collect());
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutput {
    pub report: ExperimentReport,
    pub tables: Vec<DataTable>,
}

/// Shared inputs of every suite.
#[derive(Clone, Copy)]
pub struct SuiteCtx<'a> {
    pub exec: Execution,
    pub source: &'a dyn BackwardSource,
    pub seed: u64,
}

impl Default for SuiteCtx<'_> {
    fn default() -> Self {
        SuiteCtx { exec: Execution::default(), source: &BuildBackward, seed: 1 }
    }
}

impl SuiteCtx<'_> {
    /// Seed for one Monte Carlo block, a hash of the master seed and `tag`.
    pub fn derive_seed(&self, tag: &str) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(tag.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
    }
}

/// Mode a law falls under by default: jump for a left tail with `β < 3`.
pub fn natural_mode(law: &IncrementLaw) -> Mode {
    match law.left_tail() {
        Some(t) if law.kind() == LawKind::Heavy && t.index < 3.0 => Mode::Jump,
        _ => Mode::Creep,
    }
}

/// `√(σ² N)`.
pub(crate) fn norm(law: &IncrementLaw, big_n: usize) -> f64 {
    (law.sigma2() * big_n as f64).sqrt()
}
