//! Entrance law of `(-∞, 0]`.
//!
//! The walk from 1 is solved exactly on `[1, R]` (Green row of the walk
//! killed outside `[1, R]`); excursions above `R` are closed through the
//! strong Markov property, `H^1 = H^1_R + Σ_v E_R(v) H^v`, where `H^v` is
//! expressed through the strict descending ladder height `|Ẑ| = 1 - Y`,
//! `Y ~ H^1`, and its renewal sequence. The resulting fixed point is
//! iterated to machine precision. `H^{+∞}(-z) = P[|Ẑ| > z] / E|Ẑ|`.

use nalgebra::{DMatrix, DVector};

use super::potential::PotentialData;
use super::{forward_row, KernelError, KilledWalk, KillingSet, Window};
use crate::exec::Execution;
use crate::walk_laws::IncrementLaw;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HittingOptions {
    /// Upper end `R` of the exactly solved strip `[1, R]`.
    pub strip: i64,
    /// Entry points are resolved individually on `[-depth, 0]`.
    pub depth: Option<i64>,
    /// Start used for the stabilization check against `2 x*`.
    pub x_star: i64,
    pub stabilization_tol: f64,
}

impl Default for HittingOptions {
    fn default() -> Self {
        HittingOptions { strip: 400, depth: None, x_star: 200, stabilization_tol: 1e-3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HitSource {
    At(i64),
    Infinity,
}

/// `probs[i] = H^x(-i)` for `0 ≤ i ≤ depth`; `tail` is the mass below `-depth`.
#[derive(Clone, Debug)]
pub struct HittingLaw {
    pub source: HitSource,
    pub probs: Vec<f64>,
    pub tail: f64,
    /// TV distance between `H^{x*}` and `H^{2x*}` (for `Infinity` only).
    pub stabilization: Option<f64>,
}

impl HittingLaw {
    pub fn depth(&self) -> i64 {
        self.probs.len() as i64 - 1
    }

    /// `H(y)` for `y ≤ 0`; zero below the resolved depth.
    pub fn at(&self, y: i64) -> f64 {
        if y > 0 || -y > self.depth() {
            0.0
        } else {
            self.probs[(-y) as usize]
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum::<f64>() + self.tail
    }

    pub fn tv(&self, other: &HittingLaw) -> f64 {
        let d = self.depth().max(other.depth());
        let mut s = 0.0;
        for i in 0..=d {
            s += (self.at(-i) - other.at(-i)).abs();
        }
        0.5 * (s + (self.tail - other.tail).abs())
    }
}

/// Strict descending ladder height and its renewal sequence.
#[derive(Clone, Debug)]
pub struct LadderData {
    /// `q[k] = P[|Ẑ| = k]`, `q[0] = 0`.
    pub q: Vec<f64>,
    /// `P[|Ẑ| ≥ q.len()]`.
    pub q_tail: f64,
    /// `E|Ẑ|`.
    pub mean: f64,
    /// `u[m]` = probability that the ladder walk visits `-m`.
    pub u: Vec<f64>,
    /// Probability that the walk from 1 leaves `[1, R]` upwards first.
    pub exit_mass: f64,
    pub depth: i64,
    pub iterations: usize,
}

fn renewal(q: &[f64], len: usize) -> Vec<f64> {
    let mut u = vec![0.0; len];
    if len == 0 {
        return u;
    }
    u[0] = 1.0;
    for m in 1..len {
        let mut s = 0.0;
        for k in 1..=m.min(q.len() - 1) {
            s += q[k] * u[m - k];
        }
        u[m] = s;
    }
    u
}

pub fn default_depth(law: &IncrementLaw) -> i64 {
    match law.min_step() {
        Some(s) => (-s - 1).max(0),
        None => 2048,
    }
}

/// Ladder-height law for starts up to `max_start`.
pub fn ladder_data(law: &IncrementLaw, max_start: i64, opts: &HittingOptions) -> Result<LadderData, KernelError> {
    let rmax = law
        .max_step()
        .ok_or_else(|| KernelError::Unsupported("hitting laws need bounded upward steps".into()))?;
    if !law.sigma2().is_finite() {
        return Err(KernelError::Unsupported("hitting laws need finite variance".into()));
    }
    let r = opts.strip.max(2 * rmax);
    let depth = opts.depth.unwrap_or_else(|| default_depth(law));
    // q is needed up to max_start + depth, and up to R + rmax + depth for
    // the closure term.
    let kq = (max_start.max(r + rmax) + depth + 1) as usize;
    let kfar = kq + (r + rmax) as usize;

    // Green row of the walk from 1, killed outside [1, R].
    let n = r as usize;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for z in 1..=r {
        for w in 1..=r {
            let p = law.pmf(z - w);
            if p != 0.0 {
                m[((z - 1) as usize, (w - 1) as usize)] -= p;
            }
        }
        m[((z - 1) as usize, (z - 1) as usize)] += 1.0;
    }
    let mut e1 = DVector::<f64>::zeros(n);
    e1[0] = 1.0;
    let g = m.lu().solve(&e1).ok_or(KernelError::Singular)?;

    // Direct part q_R(k) = Σ_w g(w) p(1 - k - w).
    let mut q_direct = vec![0.0; kfar];
    for (k, slot) in q_direct.iter_mut().enumerate().skip(1) {
        let mut s = 0.0;
        for w in 1..=r {
            s += g[(w - 1) as usize] * law.pmf(1 - k as i64 - w);
        }
        *slot = s;
    }
    let mut far_tail = 0.0;
    let mut far_mean = 0.0;
    let kf = kfar as i64;
    for w in 1..=r {
        let gw = g[(w - 1) as usize];
        // |Ẑ| = 1 - (w + S) ≥ kf  ⇔  S ≤ 1 - kf - w.
        let u = kf + w - 1;
        let p = law.cdf(-u);
        far_tail += gw * p;
        far_mean += gw * ((1 - w) as f64 * p + law.left_partial_mean(u));
    }
    let exits: Vec<(i64, f64)> = (r + 1..=r + rmax)
        .map(|v| {
            let s: f64 = (1..=r).map(|w| g[(w - 1) as usize] * law.pmf(v - w)).sum();
            (v, s)
        })
        .collect();
    let exit_mass: f64 = exits.iter().map(|e| e.1).sum();

    let mut q = q_direct.clone();
    let total: f64 = q.iter().sum::<f64>() + far_tail;
    for x in &mut q {
        *x /= total;
    }
    let mut iterations = 0;
    for it in 0..200 {
        iterations = it + 1;
        let u = renewal(&q, (r + rmax + 1) as usize);
        let mut next = q_direct.clone();
        for &(v, e) in &exits {
            // H^v(1 - k) = Σ_{v'=1}^{v} u(v - v') q(v' - 1 + k).
            for (k, slot) in next.iter_mut().enumerate().skip(1) {
                let mut s = 0.0;
                for vp in 1..=v {
                    let idx = (vp - 1) as usize + k;
                    if idx < q.len() {
                        s += u[(v - vp) as usize] * q[idx];
                    }
                }
                *slot += e * s;
            }
        }
        let change = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if change < 1e-17 {
            break;
        }
    }
    // The walk is recurrent, so the ladder law has total mass one. With a
    // bounded left support the remaining deficit is rounding and is
    // renormalized away; otherwise it is mass truncated beyond `kq`.
    let resolved: f64 = q[..kq].iter().sum();
    let far_est = far_tail * (1.0 + exit_mass) + q[kq..].iter().sum::<f64>();
    q.truncate(kq);
    let q_tail = if law.min_step().is_some() {
        let s = resolved + far_est;
        for x in &mut q {
            *x /= s;
        }
        far_est / s
    } else {
        (1.0 - resolved).max(far_est)
    };
    let tail_scale = if far_tail > 0.0 { q_tail / far_tail } else { 0.0 };
    let mean = q.iter().enumerate().map(|(k, &p)| k as f64 * p).sum::<f64>() + far_mean * tail_scale;
    let u = renewal(&q, (max_start + 1) as usize);
    Ok(LadderData { q, q_tail, mean, u, exit_mass, depth, iterations })
}

impl LadderData {
    fn q_at(&self, k: i64) -> f64 {
        if k < 0 || k as usize >= self.q.len() {
            0.0
        } else {
            self.q[k as usize]
        }
    }

    /// `P[|Ẑ| > z]`.
    pub fn survival(&self, z: i64) -> f64 {
        let start = (z + 1).max(0) as usize;
        self.q.get(start..).map_or(0.0, |s| s.iter().sum::<f64>()) + self.q_tail
    }

    /// `H^x` for `1 ≤ x < u.len()`.
    pub fn from_start(&self, x: i64) -> Result<HittingLaw, KernelError> {
        if x < 1 || x as usize >= self.u.len() {
            return Err(KernelError::OutOfRange(x));
        }
        let mut probs = vec![0.0; (self.depth + 1) as usize];
        for (i, slot) in probs.iter_mut().enumerate() {
            let mut s = 0.0;
            for v in 1..=x {
                s += self.u[(x - v) as usize] * self.q_at(v + i as i64);
            }
            *slot = s;
        }
        let mut tail = 0.0;
        for v in 1..=x {
            tail += self.u[(x - v) as usize] * self.survival(v + self.depth);
        }
        Ok(HittingLaw { source: HitSource::At(x), probs, tail, stabilization: None })
    }

    /// `H^{+∞}(-z) = P[|Ẑ| > z] / E|Ẑ|`.
    pub fn from_infinity(&self) -> HittingLaw {
        let probs: Vec<f64> = (0..=self.depth).map(|z| self.survival(z) / self.mean).collect();
        let tail = (1.0 - probs.iter().sum::<f64>()).max(0.0);
        HittingLaw { source: HitSource::Infinity, probs, tail, stabilization: None }
    }
}

/// Hitting distribution of `(-∞, 0]` from `x ≥ 1` or from `+∞`.
pub fn hitting_distribution_halfline(
    law: &IncrementLaw,
    source: HitSource,
    opts: &HittingOptions,
) -> Result<HittingLaw, KernelError> {
    match source {
        HitSource::At(x) => ladder_data(law, x, opts)?.from_start(x),
        HitSource::Infinity => {
            let xs = opts.x_star;
            let lad = ladder_data(law, 2 * xs, opts)?;
            let a = lad.from_start(xs)?;
            let b = lad.from_start(2 * xs)?;
            let tv = a.tv(&b);
            if tv > opts.stabilization_tol {
                return Err(KernelError::NoStabilization(format!(
                    "TV(H^{xs}, H^{}) = {tv:e} exceeds {:e}",
                    2 * xs,
                    opts.stabilization_tol
                )));
            }
            let mut h = lad.from_infinity();
            h.stabilization = Some(tv);
            Ok(h)
        }
    }
}

/// `h_x(k, y)` for `1 ≤ k ≤ n`, `-depth ≤ y ≤ 0`: `rows[k-1][-y]`.
#[derive(Clone, Debug)]
pub struct TimeResolved {
    pub x: i64,
    pub rows: Vec<Vec<f64>>,
    /// Probability of not having entered by time `n`.
    pub survival: f64,
    pub leaked: f64,
}

impl TimeResolved {
    /// `Σ_k h_x(k, y)`.
    pub fn marginal(&self) -> Vec<f64> {
        let d = self.rows.first().map_or(0, |r| r.len());
        let mut out = vec![0.0; d];
        for row in &self.rows {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }
}

pub fn hitting_time_resolved(law: &IncrementLaw, x: i64, n: usize, depth: i64) -> TimeResolved {
    let hi = x + (8.0 * (law.sigma2() * n as f64).sqrt()).ceil() as i64 + 4 * law.span();
    let window = Window::new(1, hi);
    let walk = KilledWalk::new(law, &KillingSet::HalfLine(0), window, Execution::default());
    let row = forward_row(&walk, x, n);
    let mut rows = Vec::with_capacity(n);
    for k in 1..=n {
        let prev = &row.steps[k - 1];
        let s = prev.log_scale.exp();
        let mut r = vec![0.0; (depth + 1) as usize];
        for (i, slot) in r.iter_mut().enumerate() {
            let y = -(i as i64);
            let mut acc = 0.0;
            for (zi, &f) in prev.v.iter().enumerate() {
                if f != 0.0 {
                    acc += f * law.pmf(y - (window.lo + zi as i64));
                }
            }
            *slot = acc * s;
        }
        rows.push(r);
    }
    TimeResolved { x, rows, survival: row.alive(n), leaked: row.leaked_upto(n) }
}

/// One row of the harmonic-functional check.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaRow {
    pub x: i64,
    pub expectation: f64,
    pub lambda: f64,
    pub residual: f64,
    /// Hitting mass below the resolved depth (not included above).
    pub unresolved: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LambdaReport {
    pub rows: Vec<LambdaRow>,
    /// `Σ_y H^{+∞}(y) λ(y)` when `E[|S₁|³; S₁ < 0] < ∞`.
    pub limit: Option<f64>,
    pub limit_divergent: bool,
}

/// Residuals `|Σ_y H^x(y) λ(y) - λ(x)|` and the limit of `λ(x)`.
pub fn lambda_identity_check(
    law: &IncrementLaw,
    pot: &PotentialData,
    xs: &[i64],
    opts: &HittingOptions,
) -> Result<LambdaReport, KernelError> {
    let max_x = xs.iter().copied().max().unwrap_or(1).max(opts.x_star);
    let lad = ladder_data(law, max_x, opts)?;
    let mut rows = Vec::new();
    for &x in xs {
        let h = lad.from_start(x)?;
        let e: f64 = h.probs.iter().enumerate().map(|(i, p)| p * pot.lambda(-(i as i64))).sum();
        let l = pot.lambda(x);
        rows.push(LambdaRow { x, expectation: e, lambda: l, residual: (e - l).abs(), unresolved: h.tail });
    }
    let divergent = law.left_third_moment_infinite();
    let limit = if divergent {
        None
    } else {
        let h = lad.from_infinity();
        Some(h.probs.iter().enumerate().map(|(i, p)| p * pot.lambda(-(i as i64))).sum())
    };
    Ok(LambdaReport { rows, limit, limit_divergent: divergent })
}
