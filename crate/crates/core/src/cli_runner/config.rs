use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::limit_process::Mode;
use crate::verify_harness::{
    natural_mode, CheckKind, ConstantParams, DichotomyParams, FractionCheck, FractionStat, MarginalParams, RatioKind,
    TightnessParams,
};
use crate::walk_laws::{
    heavy_example, lace, make_heavy_tail_law, make_lattice_law, make_stable_domain_law, srw, HeavyTailParams,
    IncrementLaw, LawError, LawKind, SlowlyVarying, StableParams,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error at line {line}, column {col}: {msg}")]
    Parse { line: usize, col: usize, msg: String },
    #[error("unknown key `{key}` at line {line}, column {col}")]
    UnknownKey { key: String, line: usize, col: usize },
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("invalid law: {0}")]
    Law(#[from] LawError),
}

pub const PRESETS: [&str; 4] = ["lace", "srw", "heavy25", "heavy3"];

/// Either a preset name or an explicit law table.
#[derive(Clone, Debug, PartialEq)]
pub enum LawConfig {
    Preset(String),
    Spec(LawSpec),
}

/// Explicit law block. Pairs are `[z, p]` (pmf) or `[z, weight]` (shape).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawSpec {
    pub kind: LawKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pmf: Option<Vec<(i64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w0: Option<i64>,
    #[serde(rename = "L", default, skip_serializing_if = "Option::is_none")]
    pub l: Option<SlowlyVarying>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<(i64, f64)>>,
}

impl Serialize for LawConfig {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            LawConfig::Preset(name) => s.serialize_str(name),
            LawConfig::Spec(spec) => spec.serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for LawConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = LawConfig;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a preset name or a law table")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<LawConfig, E> {
                Ok(LawConfig::Preset(v.to_string()))
            }

            fn visit_map<A: MapAccess<'de>>(self, m: A) -> Result<LawConfig, A::Error> {
                LawSpec::deserialize(de::value::MapAccessDeserializer::new(m)).map(LawConfig::Spec)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteName {
    Marginal,
    Dichotomy,
    Constant,
    Tightness,
    Identity,
}

impl SuiteName {
    pub const ALL: [SuiteName; 5] =
        [SuiteName::Marginal, SuiteName::Dichotomy, SuiteName::Constant, SuiteName::Tightness, SuiteName::Identity];

    pub fn as_str(self) -> &'static str {
        match self {
            SuiteName::Marginal => "marginal",
            SuiteName::Dichotomy => "dichotomy",
            SuiteName::Constant => "constant",
            SuiteName::Tightness => "tightness",
            SuiteName::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<SuiteName> {
        SuiteName::ALL.into_iter().find(|n| n.as_str() == s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// TV distance at the last `N` of the marginal suite.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tv_final: Option<f64>,
    /// Relative spread of the constant-suite ratios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio_spread: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DichotomyConfig {
    #[serde(rename = "N_list", default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<Vec<f64>>,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<FractionCheck>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessConfig {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub big_n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclude_jump: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn origin() -> Vec<i64> {
    vec![0]
}

fn default_seed() -> u64 {
    1
}

fn default_samples() -> usize {
    10_000
}

fn default_name() -> String {
    "experiment".to_string()
}

/// One experiment: a law, the avoided set, the scaling and the suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub law: LawConfig,
    #[serde(rename = "A", default = "origin")]
    pub avoid: Vec<i64>,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(rename = "T", default = "one")]
    pub horizon: f64,
    /// Marginal time, in units of `N`.
    #[serde(default = "half")]
    pub t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(rename = "N_list", default)]
    pub big_n_list: Vec<usize>,
    #[serde(default)]
    pub n_list: Vec<usize>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub suites: Vec<SuiteName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dichotomy: Option<DichotomyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tightness: Option<TightnessConfig>,
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn convert(text: &str, e: toml::de::Error) -> ConfigError {
    let (line, col) = e.span().map_or((0, 0), |s| line_col(text, s.start));
    let msg = e.message().to_string();
    if let Some(rest) = msg.strip_prefix("unknown field `") {
        if let Some(end) = rest.find('`') {
            return ConfigError::UnknownKey { key: rest[..end].to_string(), line, col };
        }
    }
    ConfigError::Parse { line, col, msg }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config_str(&text)
}

/// Parse, fill defaults and validate.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let raw: ExperimentConfig = toml::from_str(text).map_err(|e| convert(text, e))?;
    raw.resolve()
}

fn violation(msg: impl Into<String>) -> ConfigError {
    ConfigError::ConstraintViolation(msg.into())
}

fn check_increasing(name: &str, v: &[usize]) -> Result<(), ConfigError> {
    if v.first() == Some(&0) || v.windows(2).any(|w| w[1] <= w[0]) {
        return Err(violation(format!("{name} must be positive and strictly increasing")));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(violation(format!("{name} = {v} must be positive")));
    }
    Ok(())
}

pub fn build_law(cfg: &LawConfig) -> Result<IncrementLaw, ConfigError> {
    match cfg {
        LawConfig::Preset(name) => match name.as_str() {
            "lace" => Ok(lace()),
            "srw" => Ok(srw()),
            "heavy25" => Ok(heavy_example(2.5, 1.0)),
            "heavy3" => Ok(heavy_example(3.0, 1.0)),
            other => Err(violation(format!("unknown law preset `{other}` (known: {})", PRESETS.join(", ")))),
        },
        LawConfig::Spec(s) => {
            let need = |v: Option<f64>, key: &str| v.ok_or_else(|| violation(format!("law kind needs `{key}`")));
            let shape = |v: &Option<Vec<(i64, f64)>>| v.clone().unwrap_or_default().into_iter().collect::<BTreeMap<_, _>>();
            let l = s.l.unwrap_or(SlowlyVarying::constant(1.0));
            let w0 = s.w0.unwrap_or(3);
            Ok(match s.kind {
                LawKind::Lattice => {
                    let pmf = s.pmf.as_ref().ok_or_else(|| violation("lattice law needs `pmf`"))?;
                    make_lattice_law(&pmf.iter().copied().collect())?
                }
                LawKind::Heavy => make_heavy_tail_law(&HeavyTailParams { beta: need(s.beta, "beta")?, l, w0, right_shape: shape(&s.shape) })?,
                LawKind::Stable => {
                    make_stable_domain_law(&StableParams { alpha: need(s.alpha, "alpha")?, l, w0, left_shape: shape(&s.shape) })?.0
                }
            })
        }
    }
}

impl LawSpec {
    fn fill(&mut self) {
        match self.kind {
            LawKind::Lattice => {}
            LawKind::Heavy | LawKind::Stable => {
                self.w0.get_or_insert(3);
                self.l.get_or_insert(SlowlyVarying::constant(1.0));
                let side = if self.kind == LawKind::Heavy { 1 } else { -1 };
                self.shape.get_or_insert_with(|| vec![(side, 1.0), (2 * side, 1.0)]);
            }
        }
    }
}

impl ExperimentConfig {
    pub fn law(&self) -> Result<IncrementLaw, ConfigError> {
        build_law(&self.law)
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Creep)
    }

    /// Fill every defaulted field and check constraints; idempotent.
    pub fn resolve(mut self) -> Result<ExperimentConfig, ConfigError> {
        if let LawConfig::Spec(s) = &mut self.law {
            s.fill();
        }
        let law = self.law()?;
        let mode = *self.mode.get_or_insert(natural_mode(&law));
        let beta = law.left_tail().map(|t| t.index);
        if mode == Mode::Jump && !beta.is_some_and(|b| b < 3.0) {
            let got = beta.map_or("no regularly varying left tail".to_string(), |b| format!("beta = {b}"));
            return Err(violation(format!("mode = jump needs a left tail index beta < 3, got {got}")));
        }
        if self.avoid.is_empty() {
            return Err(violation("A must not be empty"));
        }
        for (name, v) in [("b", self.b), ("c", self.c), ("T", self.horizon)] {
            positive(name, v)?;
        }
        if !(self.t > 0.0 && self.t < self.horizon) {
            return Err(violation(format!("t = {} must lie in (0, T)", self.t)));
        }
        if self.samples == 0 {
            return Err(violation("samples must be positive"));
        }
        check_increasing("N_list", &self.big_n_list)?;
        check_increasing("n_list", &self.n_list)?;
        if self.suites.is_empty() {
            if !self.big_n_list.is_empty() {
                self.suites.extend([SuiteName::Marginal, SuiteName::Dichotomy, SuiteName::Tightness]);
            }
            if !self.n_list.is_empty() {
                self.suites.push(SuiteName::Constant);
            }
        }
        self.suites.sort_unstable();
        self.suites.dedup();
        for s in &self.suites {
            let list_ok = match s {
                SuiteName::Marginal | SuiteName::Dichotomy | SuiteName::Tightness => !self.big_n_list.is_empty(),
                SuiteName::Constant => !self.n_list.is_empty(),
                SuiteName::Identity => true,
            };
            if !list_ok {
                return Err(violation(format!("suite `{}` needs a non-empty N_list or n_list", s.as_str())));
            }
            if law.kind() == LawKind::Stable && *s != SuiteName::Identity {
                return Err(violation(format!("suite `{}` is not available for stable-domain laws", s.as_str())));
            }
        }
        let ratio = RatioKind::for_law(&law);
        let tol = &mut self.tolerances;
        tol.tv_final.get_or_insert(match (mode, ratio) {
            (Mode::Jump, _) => 0.1,
            (Mode::Creep, RatioKind::C) => 0.15,
            _ => 0.05,
        });
        tol.ratio_spread.get_or_insert(if ratio == RatioKind::A { 0.1 } else { 0.15 });
        if self.suites.contains(&SuiteName::Dichotomy) {
            let d = self.dichotomy.get_or_insert_with(Default::default);
            d.n_list.get_or_insert_with(|| self.big_n_list.clone());
            d.eps.get_or_insert_with(|| vec![0.1]);
            d.k.get_or_insert_with(Vec::new);
            d.eta.get_or_insert_with(Vec::new);
            d.samples.get_or_insert(self.samples);
            d.checks.get_or_insert_with(|| default_checks(mode, ratio));
            check_increasing("dichotomy.N_list", d.n_list.as_deref().unwrap_or_default())?;
            if d.samples == Some(0) {
                return Err(violation("dichotomy.samples must be positive"));
            }
        }
        if self.suites.contains(&SuiteName::Tightness) {
            let jump = mode == Mode::Jump;
            let top = *self.big_n_list.last().expect("checked above");
            let tt = self.tightness.get_or_insert_with(Default::default);
            tt.big_n.get_or_insert(top);
            tt.deltas.get_or_insert_with(|| vec![0.25, 0.125, 0.0625, 0.03125, 0.015625]);
            tt.eps.get_or_insert(if jump { 1.0 } else { 0.5 });
            tt.threshold.get_or_insert(if jump { 0.1 } else { 0.05 });
            tt.exclude_jump.get_or_insert(jump);
            tt.samples.get_or_insert(self.samples);
            if tt.deltas.as_ref().is_some_and(|d| d.is_empty() || d.iter().any(|&x| x.is_nan() || x <= 0.0)) {
                return Err(violation("tightness.deltas must be positive and non-empty"));
            }
        }
        Ok(self)
    }

    /// Canonical TOML of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// sha256 of the canonical TOML.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn marginal_params(&self) -> MarginalParams {
        MarginalParams {
            avoid: self.avoid.clone(),
            b: self.b,
            c: self.c,
            horizon: self.horizon,
            t: self.t,
            n_list: self.big_n_list.clone(),
            mode: self.mode(),
            tv_final: self.tolerances.tv_final.unwrap_or(0.05),
        }
    }

    pub fn dichotomy_params(&self) -> DichotomyParams {
        let d = self.dichotomy.clone().unwrap_or_default();
        DichotomyParams {
            avoid: self.avoid.clone(),
            b: self.b,
            c: self.c,
            horizon: self.horizon,
            n_list: d.n_list.unwrap_or_else(|| self.big_n_list.clone()),
            eps: d.eps.unwrap_or_default(),
            k: d.k.unwrap_or_default(),
            eta: d.eta.unwrap_or_default(),
            samples: d.samples.unwrap_or(self.samples),
            checks: d.checks.unwrap_or_default(),
        }
    }

    pub fn constant_params(&self, law: &IncrementLaw) -> ConstantParams {
        ConstantParams {
            avoid: self.avoid.clone(),
            b: self.b,
            c: self.c,
            n_list: self.n_list.clone(),
            ratio: RatioKind::for_law(law),
            max_spread: self.tolerances.ratio_spread.unwrap_or(0.1),
        }
    }

    pub fn tightness_params(&self) -> TightnessParams {
        let t = self.tightness.clone().unwrap_or_default();
        TightnessParams {
            avoid: self.avoid.clone(),
            b: self.b,
            c: self.c,
            horizon: self.horizon,
            big_n: t.big_n.or(self.big_n_list.last().copied()).unwrap_or(1),
            deltas: t.deltas.unwrap_or_default(),
            eps: t.eps.unwrap_or(0.5),
            samples: t.samples.unwrap_or(self.samples),
            threshold: t.threshold.unwrap_or(0.05),
            exclude_jump: t.exclude_jump.unwrap_or(false),
        }
    }
}

fn default_checks(mode: Mode, ratio: RatioKind) -> Vec<FractionCheck> {
    let check = |statistic, param, relation, threshold| FractionCheck { statistic, param, relation, threshold };
    match (mode, ratio) {
        (Mode::Jump, _) => vec![check(FractionStat::I, 0.1, CheckKind::AtLeast, Some(0.9))],
        (Mode::Creep, RatioKind::C) => vec![check(FractionStat::Iii, 0.2, CheckKind::Increasing, None)],
        _ => vec![check(FractionStat::I, 0.1, CheckKind::AtMost, Some(0.05))],
    }
}
