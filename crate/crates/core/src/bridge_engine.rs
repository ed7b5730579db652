//! Exact marginals and exact sequential sampling of walk bridges that avoid
//! a finite set `A` on `1..=n` and end at `-c_N`.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Execution;
use crate::killed_kernel::{forward_row, BackwardTable, ForwardRow, KernelError, KilledWalk, KillingSet, WindowPolicy};
use crate::walk_laws::{IncrementLaw, NormingSequence};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BridgeError {
    #[error("the conditioning event has probability {0:e}")]
    NullEvent(f64),
    #[error("conditional weights underflowed at step {0}")]
    NumericalUnderflow(usize),
    #[error("invalid bridge spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Start `b_N`, end `-c_N`, horizon `n`, avoided set `A` (as given; the
/// engine shifts everything so that `max A = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub avoid: Vec<i64>,
    pub start: i64,
    pub end: i64,
    pub n: usize,
    /// Scaling parameter `N` (used for rescaled paths).
    pub big_n: usize,
}

impl BridgeSpec {
    /// `b_N = ⌊b λ_N⌋`, `c_N = ⌊c λ_N⌋`, `n = ⌊N T⌋`.
    pub fn scaled(law: &IncrementLaw, avoid: &[i64], b: f64, c: f64, t: f64, big_n: usize) -> Result<BridgeSpec, BridgeError> {
        let lam = NormingSequence::for_law(law).value(big_n as f64);
        let bn = (b * lam).floor() as i64;
        let cn = (c * lam).floor() as i64;
        let n = (big_n as f64 * t).floor() as usize;
        if bn < 1 || cn < 1 || n == 0 {
            return Err(BridgeError::InvalidSpec(format!("b_N = {bn}, c_N = {cn}, n = {n}")));
        }
        Ok(BridgeSpec { avoid: avoid.to_vec(), start: bn, end: -cn, n, big_n })
    }

    pub fn shift(&self) -> i64 {
        self.avoid.iter().copied().max().unwrap_or(0)
    }
}

/// Crossing statistics of one path (original coordinates).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathStats {
    /// First `k` with `S_k ≤ 0`.
    pub zeta: usize,
    /// Last `k` with `S_k ≥ 1`.
    pub zeta_prime: usize,
    pub overshoot: i64,
    pub prejump: i64,
    pub max_down_step: i64,
}

impl PathStats {
    pub fn crossing_step(&self) -> i64 {
        self.prejump - self.overshoot
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgePath {
    pub values: Vec<i64>,
}

impl BridgePath {
    pub fn stats(&self) -> Option<PathStats> {
        path_statistics(&self.values)
    }
}

/// Crossing variables. `None` if the path never reaches `(-∞, 0]` or
/// starts there.
pub fn path_statistics(s: &[i64]) -> Option<PathStats> {
    if s.first().is_none_or(|&x| x <= 0) {
        return None;
    }
    let zeta = s.iter().position(|&x| x <= 0)?;
    let zeta_prime = s.iter().rposition(|&x| x >= 1).unwrap_or(0);
    let max_down_step = s.windows(2).map(|w| w[0] - w[1]).max().unwrap_or(0);
    Some(PathStats { zeta, zeta_prime, overshoot: s[zeta], prejump: s[zeta - 1], max_down_step })
}

/// How a path is embedded in continuous time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    /// Piecewise linear through `(k/N, S_k/norm)`.
    Linear,
    /// `S_{⌊tN⌋}/norm`.
    Step,
}

/// `X^{(N)}` on `[0, n/N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledPath {
    pub nodes: Vec<f64>,
    pub big_n: f64,
    pub mode: Interpolation,
}

impl ScaledPath {
    pub fn new(values: &[i64], big_n: usize, norm: f64, mode: Interpolation) -> ScaledPath {
        ScaledPath { nodes: values.iter().map(|&v| v as f64 / norm).collect(), big_n: big_n as f64, mode }
    }

    pub fn for_law(path: &BridgePath, spec: &BridgeSpec, law: &IncrementLaw) -> ScaledPath {
        let ns = NormingSequence::for_law(law);
        let mode = if ns.is_stable() { Interpolation::Step } else { Interpolation::Linear };
        ScaledPath::new(&path.values, spec.big_n, ns.value(spec.big_n as f64), mode)
    }

    pub fn horizon(&self) -> f64 {
        (self.nodes.len() - 1) as f64 / self.big_n
    }

    pub fn eval(&self, t: f64) -> f64 {
        let u = (t * self.big_n).clamp(0.0, (self.nodes.len() - 1) as f64);
        let k = u.floor() as usize;
        if k + 1 >= self.nodes.len() {
            return self.nodes[self.nodes.len() - 1];
        }
        match self.mode {
            Interpolation::Step => self.nodes[k],
            Interpolation::Linear => {
                let f = u - k as f64;
                self.nodes[k] * (1.0 - f) + self.nodes[k + 1] * f
            }
        }
    }

    /// `Λ_{j,k}(δ)`: sup of `|X_t - X_s|` over `j/N ≤ s < t ≤ k/N`,
    /// `t - s < δ`.
    pub fn modulus(&self, j: usize, k: usize, delta: f64) -> f64 {
        let k = k.min(self.nodes.len() - 1);
        if j >= k || delta <= 0.0 {
            return 0.0;
        }
        let h = delta * self.big_n;
        let x = &self.nodes[j..=k];
        match self.mode {
            Interpolation::Linear => {
                // Extremes sit at node pairs with gap ≤ h, or at a node and
                // the point exactly h away.
                let mut best = window_range(x, h.floor() as usize);
                let len = (x.len() - 1) as f64;
                for (i, &xi) in x.iter().enumerate() {
                    for p in [i as f64 - h, i as f64 + h] {
                        if (0.0..=len).contains(&p) {
                            best = best.max((xi - lerp(x, p)).abs());
                        }
                    }
                }
                best
            }
            // s, t in cells i, m: t - s can be made < δ iff m - i - 1 < h.
            Interpolation::Step => {
                let gap = if h.fract() == 0.0 { h as usize } else { h.ceil() as usize };
                window_range(x, gap)
            }
        }
    }
}

fn lerp(x: &[f64], p: f64) -> f64 {
    let k = p.floor() as usize;
    if k + 1 >= x.len() {
        return x[x.len() - 1];
    }
    let f = p - k as f64;
    x[k] * (1.0 - f) + x[k + 1] * f
}

/// `max |x_i - x_m|` over `0 < m - i ≤ gap`, by monotone deques.
fn window_range(x: &[f64], gap: usize) -> f64 {
    use std::collections::VecDeque;
    if gap == 0 {
        return 0.0;
    }
    let mut best: f64 = 0.0;
    let mut hi: VecDeque<usize> = VecDeque::new();
    let mut lo: VecDeque<usize> = VecDeque::new();
    for m in 0..x.len() {
        while hi.front().is_some_and(|&i| i + gap < m) {
            hi.pop_front();
        }
        while lo.front().is_some_and(|&i| i + gap < m) {
            lo.pop_front();
        }
        if let (Some(&a), Some(&b)) = (hi.front(), lo.front()) {
            best = best.max(x[a] - x[m]).max(x[m] - x[b]);
        }
        while hi.back().is_some_and(|&i| x[i] <= x[m]) {
            hi.pop_back();
        }
        hi.push_back(m);
        while lo.back().is_some_and(|&i| x[i] >= x[m]) {
            lo.pop_back();
        }
        lo.push_back(m);
    }
    best
}

/// Exact conditioned pmf of `S_k` on the window.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    pub k: usize,
    pub lo: i64,
    pub probs: Vec<f64>,
}

impl Marginal {
    pub fn get(&self, z: i64) -> f64 {
        if z < self.lo || z >= self.lo + self.probs.len() as i64 {
            0.0
        } else {
            self.probs[(z - self.lo) as usize]
        }
    }

    pub fn support(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.probs.iter().enumerate().map(move |(i, &p)| (self.lo + i as i64, p))
    }
}

const LOG_FALLBACK_BELOW: f64 = 1e-280;

/// Where backward tables come from (built on the spot or loaded from a
/// cache).
pub trait BackwardSource: Sync {
    fn backward(&self, law: &IncrementLaw, walk: &KilledWalk, target: i64, n: usize) -> Result<BackwardTable, BridgeError>;
}

/// Always runs the DP.
pub struct BuildBackward;

impl BackwardSource for BuildBackward {
    fn backward(&self, _law: &IncrementLaw, walk: &KilledWalk, target: i64, n: usize) -> Result<BackwardTable, BridgeError> {
        Ok(BackwardTable::build(walk, target, n))
    }
}

/// Backward table towards `-c_N` plus the conditioning constant.
#[derive(Debug)]
pub struct BridgeEngine {
    pub spec: BridgeSpec,
    law: IncrementLaw,
    walk: KilledWalk,
    back: BackwardTable,
    forward: OnceLock<ForwardRow>,
    shift: i64,
    /// `ln p^n_A(b_N, -c_N)`.
    pub ln_prob: f64,
}

impl BridgeEngine {
    pub fn new(law: &IncrementLaw, spec: &BridgeSpec, window: WindowPolicy, exec: Execution) -> Result<BridgeEngine, BridgeError> {
        BridgeEngine::with_source(law, spec, window, exec, &BuildBackward)
    }

    /// As [`BridgeEngine::new`], taking the backward table from `source`.
    pub fn with_source(
        law: &IncrementLaw,
        spec: &BridgeSpec,
        window: WindowPolicy,
        exec: Execution,
        source: &dyn BackwardSource,
    ) -> Result<BridgeEngine, BridgeError> {
        if spec.avoid.is_empty() {
            return Err(BridgeError::InvalidSpec("avoided set is empty".into()));
        }
        if spec.n == 0 {
            return Err(BridgeError::Kernel(KernelError::ZeroHorizon));
        }
        let shift = spec.shift();
        let killing = KillingSet::finite(&spec.avoid).translate(-shift);
        let (b, c) = (spec.start - shift, spec.end - shift);
        let w = window.resolve(law, &killing, spec.n, &[b, c]);
        let walk = KilledWalk::new(law, &killing, w, exec);
        let back = source.backward(law, &walk, c, spec.n)?;
        if back.target != c || back.window != w || back.horizon() != spec.n {
            return Err(BridgeError::InvalidSpec("backward table does not match the spec".into()));
        }
        let ln_prob = back.ln_get(spec.n, b);
        if killing.contains(c) || !ln_prob.is_finite() || ln_prob < f64::MIN_POSITIVE.ln() {
            return Err(BridgeError::NullEvent(ln_prob.exp()));
        }
        Ok(BridgeEngine { spec: spec.clone(), law: law.clone(), walk, back, forward: OnceLock::new(), shift, ln_prob })
    }

    pub fn law(&self) -> &IncrementLaw {
        &self.law
    }

    /// `p^n_A(b_N, -c_N)`.
    pub fn probability(&self) -> f64 {
        self.ln_prob.exp()
    }

    pub fn window(&self) -> (i64, i64) {
        (self.walk.window.lo + self.shift, self.walk.window.hi + self.shift)
    }

    fn forward(&self) -> &ForwardRow {
        self.forward.get_or_init(|| forward_row(&self.walk, self.spec.start - self.shift, self.spec.n))
    }

    /// Unconditioned mass that left the window during the `n` steps.
    pub fn leaked_mass(&self) -> f64 {
        self.forward().leaked_upto(self.spec.n)
    }

    /// `P*[S_k = z] = p^k_A(b, z) p^{n-k}_A(z, -c) / p^n_A(b, -c)`.
    pub fn marginal(&self, k: usize) -> Result<Marginal, BridgeError> {
        let n = self.spec.n;
        if k > n {
            return Err(BridgeError::InvalidSpec(format!("time {k} beyond horizon {n}")));
        }
        let f = &self.forward().steps[k];
        let g = &self.back.steps[n - k];
        let ln_s = f.log_scale + g.log_scale - self.ln_prob;
        let probs = f
            .v
            .iter()
            .zip(&g.v)
            .map(|(&a, &b)| if a == 0.0 || b == 0.0 { 0.0 } else { (a.ln() + b.ln() + ln_s).exp() })
            .collect();
        Ok(Marginal { k, lo: self.walk.window.lo + self.shift, probs })
    }

    /// One exact draw of the conditioned path.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<BridgePath, BridgeError> {
        let n = self.spec.n;
        let w = self.walk.window;
        let kern = self.walk.kernel();
        let (d_lo, d_hi) = (kern.d_lo, kern.d_hi());
        let mut s = self.spec.start - self.shift;
        let mut values = Vec::with_capacity(n + 1);
        values.push(s + self.shift);
        for k in 0..n {
            let rem = n - k - 1;
            let g = &self.back.steps[rem];
            let top = (s + d_hi).min(w.hi);
            let bottom = (s + d_lo).max(w.lo);
            let weight = |z: i64| -> f64 {
                if self.walk.killing.contains(z) {
                    0.0
                } else {
                    kern.get(z - s) * g.v[w.index(z)]
                }
            };
            let cur = &self.back.steps[rem + 1];
            let v_cur = cur.v[w.index(s)];
            let total = v_cur * (cur.log_scale - g.log_scale).exp();
            let next = if v_cur > LOG_FALLBACK_BELOW && total.is_finite() && total > 0.0 {
                let target = rng.random::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = None;
                let mut last = None;
                // Scan from the top: light upward steps end the scan early.
                for z in (bottom..=top).rev() {
                    let p = weight(z);
                    if p > 0.0 {
                        acc += p;
                        last = Some(z);
                        if acc > target {
                            pick = Some(z);
                            break;
                        }
                    }
                }
                pick.or(last)
            } else {
                self.sample_log(rng, s, rem, bottom, top)
            };
            s = next.ok_or(BridgeError::NumericalUnderflow(k))?;
            values.push(s + self.shift);
        }
        Ok(BridgePath { values })
    }

    fn sample_log<R: Rng + ?Sized>(&self, rng: &mut R, s: i64, rem: usize, bottom: i64, top: i64) -> Option<i64> {
        let g = &self.back.steps[rem];
        let w = self.walk.window;
        let kern = self.walk.kernel();
        let lw: Vec<(i64, f64)> = (bottom..=top)
            .filter(|&z| !self.walk.killing.contains(z))
            .filter_map(|z| {
                let p = kern.get(z - s);
                let v = g.v[w.index(z)];
                (p > 0.0 && v > 0.0).then(|| (z, p.ln() + v.ln()))
            })
            .collect();
        let m = lw.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return None;
        }
        let total: f64 = lw.iter().map(|x| (x.1 - m).exp()).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for &(z, l) in &lw {
            acc += (l - m).exp();
            if acc > target {
                return Some(z);
            }
        }
        lw.last().map(|x| x.0)
    }

    /// Sample `i` uses the ChaCha8 stream `i` of `seed`, so results do not
    /// depend on scheduling.
    pub fn sample_many(&self, count: usize, seed: u64, exec: Execution) -> Result<Vec<BridgePath>, BridgeError> {
        exec.map_range(count, |i| self.sample(&mut sample_rng(seed, i as u64))).into_iter().collect()
    }
}

/// Stream `stream` of the ChaCha8 generator seeded by `seed`.
pub fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk_laws::{lace, srw};

    fn spec(b: i64, c: i64, n: usize) -> BridgeSpec {
        BridgeSpec { avoid: vec![0], start: b, end: -c, n, big_n: n }
    }

    #[test]
    fn unique_short_bridge() {
        let e = BridgeEngine::new(&lace(), &spec(2, 1, 2), WindowPolicy::default(), Execution::Sequential).unwrap();
        let m = e.marginal(1).unwrap();
        assert!((m.get(1) - 1.0).abs() < 1e-12);
        let mut rng = sample_rng(1, 0);
        for _ in 0..50 {
            assert_eq!(e.sample(&mut rng).unwrap().values, vec![2, 1, -1]);
        }
    }

    #[test]
    fn srw_cannot_cross() {
        let e = BridgeEngine::new(&srw(), &spec(3, 1, 10), WindowPolicy::default(), Execution::Sequential);
        assert!(matches!(e, Err(BridgeError::NullEvent(_))));
    }

    #[test]
    fn statistics_of_short_path() {
        let st = path_statistics(&[2, 1, -1]).unwrap();
        assert_eq!((st.zeta, st.overshoot, st.prejump, st.max_down_step), (2, -1, 1, 2));
        assert_eq!(st.zeta_prime, 1);
        assert_eq!(path_statistics(&[3, 2, 1, 1, 0]).unwrap().zeta, 4);
    }

    #[test]
    fn modulus_of_linear_path() {
        let p = ScaledPath::new(&[0, 2, 0, 0], 1, 1.0, Interpolation::Linear);
        assert!((p.modulus(0, 3, 0.5) - 1.0).abs() < 1e-12);
        assert!((p.modulus(0, 3, 1.0) - 2.0).abs() < 1e-12);
        assert!((p.eval(0.5) - 1.0).abs() < 1e-12);
        let q = ScaledPath::new(&[0, 2, 0, 0], 1, 1.0, Interpolation::Step);
        assert_eq!(q.eval(1.7), 2.0);
        assert_eq!(q.modulus(0, 3, 0.5), 2.0);
    }

    #[test]
    fn translated_avoid_set() {
        let s = BridgeSpec { avoid: vec![5], start: 7, end: 4, n: 2, big_n: 2 };
        let e = BridgeEngine::new(&lace(), &s, WindowPolicy::default(), Execution::Sequential).unwrap();
        let p = e.sample(&mut sample_rng(3, 0)).unwrap();
        assert_eq!(p.values, vec![7, 6, 4]);
    }
}
