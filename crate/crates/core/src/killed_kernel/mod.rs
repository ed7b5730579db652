//! Killed transition kernels `p^k_B(x, y)` on a finite lattice window.
//!
//! Mass leaving the window is not tracked further; it is accumulated per
//! step as `leaked` so that `alive + killed + leaked = 1` holds exactly up
//! to rounding.

pub mod hitting;
pub mod potential;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::walk_laws::{IncrementLaw, NormingSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("killing set is empty")]
    EmptyKillingSet,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("window too small: leaked mass {leaked:e} exceeds bound {bound:e}")]
    WindowTooSmall { leaked: f64, bound: f64 },
    #[error("window [{lo}, {hi}] does not cover {what}")]
    WindowMissesPoint { lo: i64, hi: i64, what: String },
    #[error("table of {entries} entries exceeds the memory guard of {limit}")]
    TooLarge { entries: usize, limit: usize },
    #[error("point {0} is outside the computed range")]
    OutOfRange(i64),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("no stabilization: {0}")]
    NoStabilization(String),
    #[error("unsupported law: {0}")]
    Unsupported(String),
    #[error("singular linear system")]
    Singular,
}

/// The killing set `B`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KillingSet {
    /// Finite set of sites, sorted and deduplicated.
    Finite(Vec<i64>),
    /// The half-line `(-∞, m]`.
    HalfLine(i64),
}

impl KillingSet {
    pub fn finite(points: &[i64]) -> KillingSet {
        let mut v = points.to_vec();
        v.sort_unstable();
        v.dedup();
        KillingSet::Finite(v)
    }

    pub fn origin() -> KillingSet {
        KillingSet::Finite(vec![0])
    }

    pub fn contains(&self, x: i64) -> bool {
        match self {
            KillingSet::Finite(v) => v.binary_search(&x).is_ok(),
            KillingSet::HalfLine(m) => x <= *m,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, KillingSet::Finite(v) if v.is_empty())
    }

    pub fn max(&self) -> Option<i64> {
        match self {
            KillingSet::Finite(v) => v.last().copied(),
            KillingSet::HalfLine(m) => Some(*m),
        }
    }

    pub fn translate(&self, by: i64) -> KillingSet {
        match self {
            KillingSet::Finite(v) => KillingSet::Finite(v.iter().map(|x| x + by).collect()),
            KillingSet::HalfLine(m) => KillingSet::HalfLine(m + by),
        }
    }

    /// `{-x : x ∈ B}` for finite sets.
    pub fn reflect(&self) -> Option<KillingSet> {
        match self {
            KillingSet::Finite(v) => Some(KillingSet::finite(&v.iter().map(|x| -x).collect::<Vec<_>>())),
            KillingSet::HalfLine(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            KillingSet::Finite(v) => {
                let parts: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                format!("{{{}}}", parts.join(","))
            }
            KillingSet::HalfLine(m) => format!("(-inf,{m}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub lo: i64,
    pub hi: i64,
}

impl Window {
    pub fn new(lo: i64, hi: i64) -> Window {
        assert!(lo <= hi, "empty window");
        Window { lo, hi }
    }

    pub fn len(&self) -> usize {
        (self.hi - self.lo + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: i64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub fn index(&self, x: i64) -> usize {
        debug_assert!(self.contains(x));
        (x - self.lo) as usize
    }
}

/// How the lattice window is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WindowPolicy {
    /// `±((m+3)λ_n + span)`, stretched to cover the points of interest.
    Auto { m: f64 },
    Fixed(Window),
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy::Auto { m: 4.0 }
    }
}

impl WindowPolicy {
    pub fn resolve(&self, law: &IncrementLaw, b: &KillingSet, n: usize, points: &[i64]) -> Window {
        let w = match *self {
            WindowPolicy::Fixed(w) => w,
            WindowPolicy::Auto { m } => {
                let lam = NormingSequence::for_law(law).value(n as f64);
                let span = law.span();
                let margin = ((m + 3.0) * lam).ceil() as i64 + span;
                let mut lo = -margin;
                let mut hi = margin;
                for &p in points.iter().chain(b.max().iter()) {
                    lo = lo.min(p - margin);
                    hi = hi.max(p + margin);
                }
                if let KillingSet::Finite(v) = b {
                    if let Some(&first) = v.first() {
                        lo = lo.min(first - span);
                    }
                }
                Window { lo, hi }
            }
        };
        match b {
            KillingSet::HalfLine(m) => Window { lo: w.lo.max(m + 1), hi: w.hi.max(m + 1) },
            KillingSet::Finite(_) => w,
        }
    }
}

/// One-step probabilities restricted to the differences a window can see.
#[derive(Clone, Debug)]
pub struct DenseKernel {
    pub d_lo: i64,
    pub p: Vec<f64>,
}

impl DenseKernel {
    pub fn new(law: &IncrementLaw, window: Window) -> DenseKernel {
        let reach = window.hi - window.lo;
        let lo = law.min_step().map_or(-reach, |s| s.max(-reach));
        let hi = law.max_step().map_or(reach, |s| s.min(reach));
        let p = (lo..=hi).map(|d| law.pmf(d)).collect();
        DenseKernel { d_lo: lo, p }
    }

    pub fn d_hi(&self) -> i64 {
        self.d_lo + self.p.len() as i64 - 1
    }

    pub fn get(&self, d: i64) -> f64 {
        if d < self.d_lo || d > self.d_hi() {
            0.0
        } else {
            self.p[(d - self.d_lo) as usize]
        }
    }
}

const RESCALE_BELOW: f64 = 1e-150;

/// A nonnegative vector on a window stored as `v · e^{log_scale}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScaledVec {
    pub v: Vec<f64>,
    pub log_scale: f64,
}

impl ScaledVec {
    pub fn get(&self, i: usize) -> f64 {
        self.v[i] * self.log_scale.exp()
    }

    fn renormalize(&mut self) {
        let m = self.v.iter().fold(0.0f64, |a, &b| a.max(b));
        if m > 0.0 && !(RESCALE_BELOW..=1.0 / RESCALE_BELOW).contains(&m) {
            let inv = 1.0 / m;
            for x in &mut self.v {
                *x *= inv;
            }
            self.log_scale += m.ln();
        }
    }

    pub fn values(&self) -> Vec<f64> {
        let s = self.log_scale.exp();
        self.v.iter().map(|x| x * s).collect()
    }
}

/// Killed dynamics on a window: the shared machinery behind every table.
#[derive(Clone, Debug)]
pub struct KilledWalk {
    pub window: Window,
    pub killing: KillingSet,
    kernel: DenseKernel,
    mask: Vec<bool>,
    below: Vec<f64>,
    above: Vec<f64>,
    exec: Execution,
}

impl KilledWalk {
    pub fn new(law: &IncrementLaw, killing: &KillingSet, window: Window, exec: Execution) -> KilledWalk {
        let kernel = DenseKernel::new(law, window);
        let xs = window.lo..=window.hi;
        let mask = xs.clone().map(|x| killing.contains(x)).collect();
        let below = xs.clone().map(|x| law.cdf(window.lo - 1 - x)).collect();
        let above = xs.map(|x| law.sf(window.hi + 1 - x)).collect();
        KilledWalk {
            window,
            killing: killing.clone(),
            kernel,
            mask,
            below,
            above,
            exec,
        }
    }

    pub fn kernel(&self) -> &DenseKernel {
        &self.kernel
    }

    pub fn is_killed(&self, i: usize) -> bool {
        self.mask[i]
    }

    pub fn delta(&self, x: i64) -> ScaledVec {
        let mut v = vec![0.0; self.window.len()];
        v[self.window.index(x)] = 1.0;
        ScaledVec { v, log_scale: 0.0 }
    }

    /// One forward step of the killed walk. Returns the new vector and the
    /// (unscaled) killed and leaked masses of the step.
    pub fn forward(&self, f: &ScaledVec) -> (ScaledVec, f64, f64) {
        let w = self.window.len() as i64;
        let k = &self.kernel;
        let (d_lo, d_hi) = (k.d_lo, k.d_hi());
        let mut out = vec![0.0; w as usize];
        let src = &f.v;
        self.exec.fill(&mut out, |yi| {
            let yi = yi as i64;
            let a = d_lo.max(yi - (w - 1));
            let b = d_hi.min(yi);
            let mut s = 0.0;
            for d in a..=b {
                s += k.p[(d - d_lo) as usize] * src[(yi - d) as usize];
            }
            s
        });
        let mut killed = 0.0;
        for (i, o) in out.iter_mut().enumerate() {
            if self.mask[i] {
                killed += *o;
                *o = 0.0;
            }
        }
        let (mut below, mut above) = (0.0, 0.0);
        for (i, &x) in src.iter().enumerate() {
            below += x * self.below[i];
            above += x * self.above[i];
        }
        let leaked = match self.killing {
            KillingSet::HalfLine(m) if m + 1 >= self.window.lo => {
                killed += below;
                above
            }
            _ => below + above,
        };
        let scale = f.log_scale.exp();
        let mut next = ScaledVec { v: out, log_scale: f.log_scale };
        next.renormalize();
        (next, killed * scale, leaked * scale)
    }

    /// One backward step: `g'(x) = Σ_d p(d) ḡ(x + d)` with `ḡ = g` masked on `B`.
    pub fn backward(&self, g: &ScaledVec) -> ScaledVec {
        let w = self.window.len() as i64;
        let k = &self.kernel;
        let (d_lo, d_hi) = (k.d_lo, k.d_hi());
        let masked: Vec<f64> = g
            .v
            .iter()
            .zip(&self.mask)
            .map(|(&x, &m)| if m { 0.0 } else { x })
            .collect();
        let mut out = vec![0.0; w as usize];
        self.exec.fill(&mut out, |xi| {
            let xi = xi as i64;
            let a = d_lo.max(-xi);
            let b = d_hi.min(w - 1 - xi);
            let mut s = 0.0;
            for d in a..=b {
                s += k.p[(d - d_lo) as usize] * masked[(xi + d) as usize];
            }
            s
        });
        let mut next = ScaledVec { v: out, log_scale: g.log_scale };
        next.renormalize();
        next
    }
}

/// Forward rows `p^k_B(x, ·)` for `k = 0..=n` from a fixed source `x`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ForwardRow {
    pub source: i64,
    pub steps: Vec<ScaledVec>,
    pub killed: Vec<f64>,
    pub leaked: Vec<f64>,
}

impl ForwardRow {
    /// Cumulative leaked mass up to step `k`.
    pub fn leaked_upto(&self, k: usize) -> f64 {
        self.leaked[..=k].iter().sum()
    }

    pub fn killed_upto(&self, k: usize) -> f64 {
        self.killed[..=k].iter().sum()
    }

    pub fn alive(&self, k: usize) -> f64 {
        let s = &self.steps[k];
        s.v.iter().sum::<f64>() * s.log_scale.exp()
    }
}

pub fn forward_row(walk: &KilledWalk, x: i64, n: usize) -> ForwardRow {
    let mut steps = Vec::with_capacity(n + 1);
    let mut killed = vec![0.0];
    let mut leaked = vec![0.0];
    steps.push(walk.delta(x));
    for _ in 0..n {
        let (next, k, l) = walk.forward(steps.last().expect("nonempty"));
        steps.push(next);
        killed.push(k);
        leaked.push(l);
    }
    ForwardRow { source: x, steps, killed, leaked }
}

/// Backward vectors `g_k(·) = p^k_B(·, y)` for `k = 0..=n` and fixed target.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BackwardTable {
    pub target: i64,
    pub window: Window,
    pub steps: Vec<ScaledVec>,
}

impl BackwardTable {
    pub fn build(walk: &KilledWalk, y: i64, n: usize) -> BackwardTable {
        let mut steps = Vec::with_capacity(n + 1);
        steps.push(walk.delta(y));
        for _ in 0..n {
            let next = walk.backward(steps.last().expect("nonempty"));
            steps.push(next);
        }
        BackwardTable { target: y, window: walk.window, steps }
    }

    /// `p^k_B(x, target)`; zero outside the window.
    pub fn get(&self, k: usize, x: i64) -> f64 {
        if !self.window.contains(x) {
            return 0.0;
        }
        self.steps[k].get(self.window.index(x))
    }

    /// `ln p^k_B(x, target)` (−∞ for zero).
    pub fn ln_get(&self, k: usize, x: i64) -> f64 {
        if !self.window.contains(x) {
            return f64::NEG_INFINITY;
        }
        let s = &self.steps[k];
        s.v[self.window.index(x)].ln() + s.log_scale
    }

    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Which rows a [`KernelTable`] stores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Sources {
    All,
    List(Vec<i64>),
}

/// Memory guard for dense tables (number of f64 entries).
pub const TABLE_ENTRY_LIMIT: usize = 40_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    pub window: WindowPolicy,
    /// Upper bound on the per-row leaked mass; `None` disables the check.
    pub max_leak: Option<f64>,
    pub exec: Execution,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            window: WindowPolicy::default(),
            max_leak: Some(1e-6),
            exec: Execution::default(),
        }
    }
}

/// Exact killed kernel `p^k_B(x, y)`, `0 ≤ k ≤ n`, for the stored sources
/// and every `y` in the window.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KernelTable {
    pub killing: KillingSet,
    pub horizon: usize,
    pub window: Window,
    pub rows: Vec<ForwardRow>,
}

impl KernelTable {
    fn row(&self, x: i64) -> Option<&ForwardRow> {
        self.rows.iter().find(|r| r.source == x)
    }

    /// `p^k_B(x, y)` (zero for `y` outside the window).
    pub fn p(&self, k: usize, x: i64, y: i64) -> Result<f64, KernelError> {
        let row = self.row(x).ok_or(KernelError::OutOfRange(x))?;
        if !self.window.contains(y) {
            return Ok(0.0);
        }
        Ok(row.steps[k].get(self.window.index(y)))
    }

    pub fn killed_mass(&self, k: usize, x: i64) -> Result<f64, KernelError> {
        Ok(self.row(x).ok_or(KernelError::OutOfRange(x))?.killed_upto(k))
    }

    pub fn leaked_mass(&self, k: usize, x: i64) -> Result<f64, KernelError> {
        Ok(self.row(x).ok_or(KernelError::OutOfRange(x))?.leaked_upto(k))
    }

    pub fn alive_mass(&self, k: usize, x: i64) -> Result<f64, KernelError> {
        Ok(self.row(x).ok_or(KernelError::OutOfRange(x))?.alive(k))
    }

    pub fn sources(&self) -> impl Iterator<Item = i64> + '_ {
        self.rows.iter().map(|r| r.source)
    }

    pub fn max_leaked(&self) -> f64 {
        self.rows.iter().map(|r| r.leaked_upto(self.horizon)).fold(0.0, f64::max)
    }
}

/// Build `p^k_B(x, ·)` for `k ≤ n`.
pub fn killed_transition_table(
    law: &IncrementLaw,
    killing: &KillingSet,
    n: usize,
    sources: &Sources,
    opts: &TableOptions,
) -> Result<KernelTable, KernelError> {
    if killing.is_empty() {
        return Err(KernelError::EmptyKillingSet);
    }
    if n == 0 {
        return Err(KernelError::ZeroHorizon);
    }
    let points: Vec<i64> = match sources {
        Sources::All => vec![],
        Sources::List(v) => v.clone(),
    };
    let window = opts.window.resolve(law, killing, n, &points);
    if let KillingSet::Finite(v) = killing {
        if let Some(&p) = v.iter().find(|&&p| !window.contains(p)) {
            return Err(KernelError::WindowMissesPoint { lo: window.lo, hi: window.hi, what: format!("killing site {p}") });
        }
    }
    let xs: Vec<i64> = match sources {
        Sources::All => (window.lo..=window.hi).collect(),
        Sources::List(v) => v.clone(),
    };
    if let Some(&p) = xs.iter().find(|&&p| !window.contains(p)) {
        return Err(KernelError::WindowMissesPoint { lo: window.lo, hi: window.hi, what: format!("source {p}") });
    }
    let entries = xs.len() * (n + 1) * window.len();
    if entries > TABLE_ENTRY_LIMIT {
        return Err(KernelError::TooLarge { entries, limit: TABLE_ENTRY_LIMIT });
    }
    // Rows are independent; parallelism lives inside each step.
    let walk = KilledWalk::new(law, killing, window, opts.exec);
    let rows: Vec<ForwardRow> = xs.iter().map(|&x| forward_row(&walk, x, n)).collect();
    let table = KernelTable { killing: killing.clone(), horizon: n, window, rows };
    if let Some(bound) = opts.max_leak {
        let leaked = table.max_leaked();
        if leaked > bound {
            return Err(KernelError::WindowTooSmall { leaked, bound });
        }
    }
    Ok(table)
}
