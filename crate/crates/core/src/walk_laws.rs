//! Integer increment laws: finite lattice laws, laws with a regularly
//! varying left tail, and laws in the domain of a spectrally positive
//! stable law.
//!
//! A parametric tail of index `κ` above the cutoff `w0` is described by its
//! survival function `G(w) = L(w)·w^{-κ}`, i.e. `P[|S| ≥ w] = G(w)` on the
//! tail side for integer `w ≥ w0`. Point masses are `G(w) - G(w+1)`. All
//! tail masses and moments are evaluated analytically (Euler–Maclaurin on
//! top of a direct partial sum), never by truncating the support.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::quad::{self, Tol};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawError {
    #[error("mean is {0:e}, expected 0")]
    NonzeroMean(f64),
    #[error("total mass is {0:.15}, expected 1")]
    NotNormalized(f64),
    #[error("support generates the proper sublattice {0}Z")]
    Reducible(i64),
    #[error("probability at step {0} is negative or not finite")]
    BadProbability(i64),
    #[error("beta = {0} is outside [2, 3]")]
    BetaOutOfRange(f64),
    #[error("alpha = {0} is outside (1, 2)")]
    AlphaOutOfRange(f64),
    #[error("tail cutoff w0 = {0} must be at least 2")]
    CutoffTooSmall(i64),
    #[error("cannot balance the mean: {0}")]
    CannotBalanceMean(String),
    #[error("left tail is not lighter than the right tail")]
    LeftTailTooHeavy,
    #[error("the tail has infinite variance (beta = 2 needs gamma < -1)")]
    InfiniteVariance,
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("slowly varying proxy must have a positive finite scale")]
    BadProxy,
}

/// `L(u) = scale · (ln(e + u))^gamma`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowlyVarying {
    pub scale: f64,
    #[serde(default)]
    pub gamma: f64,
}

impl SlowlyVarying {
    pub fn constant(scale: f64) -> Self {
        SlowlyVarying { scale, gamma: 0.0 }
    }

    pub fn log_power(scale: f64, gamma: f64) -> Self {
        SlowlyVarying { scale, gamma }
    }

    pub fn eval(&self, u: f64) -> f64 {
        if self.gamma == 0.0 {
            self.scale
        } else {
            self.scale * (std::f64::consts::E + u).ln().powf(self.gamma)
        }
    }

    fn ln_eval(&self, u: f64) -> f64 {
        if self.gamma == 0.0 {
            self.scale.ln()
        } else {
            self.scale.ln() + self.gamma * (std::f64::consts::E + u).ln().ln()
        }
    }

    /// `u · d/du ln L(u)`.
    fn log_slope(&self, u: f64) -> f64 {
        if self.gamma == 0.0 {
            0.0
        } else {
            let e = std::f64::consts::E + u;
            self.gamma * u / (e * e.ln())
        }
    }
}

/// Parametric tail on one side of the origin with survival
/// `G(w) = L(w)·w^{-index}` for `w ≥ w0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoTail {
    pub index: f64,
    pub l: SlowlyVarying,
    pub w0: i64,
}

/// Number of terms summed directly before switching to Euler–Maclaurin.
const DIRECT_TERMS: i64 = 2000;

impl ParetoTail {
    /// `G(u)` on the real half-line `u ≥ w0`.
    pub fn survival(&self, u: f64) -> f64 {
        self.l.eval(u) * u.powf(-self.index)
    }

    fn ln_survival(&self, u: f64) -> f64 {
        self.l.ln_eval(u) - self.index * u.ln()
    }

    /// `P[|S| ≥ w]` restricted to the tail.
    pub fn survival_int(&self, w: i64) -> f64 {
        self.survival(w.max(self.w0) as f64)
    }

    pub fn mass(&self) -> f64 {
        self.survival(self.w0 as f64)
    }

    /// `P[|S| = w]` for `w ≥ w0` (zero below the cutoff).
    pub fn point(&self, w: i64) -> f64 {
        if w < self.w0 {
            return 0.0;
        }
        let a = self.ln_survival(w as f64);
        let b = self.ln_survival((w + 1) as f64);
        -(b - a).exp_m1() * a.exp()
    }

    /// `Σ_{w ≥ from} f(w)` for a smooth, eventually power-decaying `f` with
    /// decay exponent `p > 1` (`f(u) ≈ u^{-p}` up to log factors).
    fn series(&self, from: i64, p: f64, f: impl Fn(f64) -> f64) -> f64 {
        let m = from + DIRECT_TERMS;
        let mut direct = 0.0;
        // Small terms first.
        for w in (from..m).rev() {
            direct += f(w as f64);
        }
        let mf = m as f64;
        let integral = if self.l.gamma == 0.0 {
            // f(u) = c·u^{-p} exactly on the tail for the plain power proxy
            // when f is a monomial; otherwise fall through to quadrature.
            let c = f(mf) * mf.powf(p);
            let probe = f(2.0 * mf) * (2.0 * mf).powf(p);
            if ((probe - c) / c).abs() < 1e-12 {
                c * mf.powf(1.0 - p) / (p - 1.0)
            } else {
                log_quadrature(&f, mf)
            }
        } else {
            log_quadrature(&f, mf)
        };
        let h = 1e-3 * mf;
        let deriv = (f(mf + h) - f(mf - h)) / (2.0 * h);
        direct + integral + 0.5 * f(mf) - deriv / 12.0
    }

    /// `E[|S|; |S| ≥ u]` restricted to the tail, `u ≥ w0`.
    pub fn first_moment_from(&self, u: i64) -> f64 {
        let u = u.max(self.w0);
        u as f64 * self.survival(u as f64) + self.series(u + 1, self.index, |w| self.survival(w))
    }

    /// `E[|S|²; |S| ≥ u]`; infinite when the series diverges.
    pub fn second_moment_from(&self, u: i64) -> f64 {
        if !self.second_moment_finite() {
            return f64::INFINITY;
        }
        let u = u.max(self.w0);
        let uf = u as f64;
        uf * uf * self.survival(uf)
            + self.series(u + 1, self.index - 1.0, |w| (2.0 * w - 1.0) * self.survival(w))
    }

    pub fn second_moment_finite(&self) -> bool {
        self.index > 2.0 || (self.index == 2.0 && self.l.gamma < -1.0)
    }

    pub fn third_moment_finite(&self) -> bool {
        self.index > 3.0 || (self.index == 3.0 && self.l.gamma < -1.0)
    }

    /// Largest `w ≥ w0` with `G(w) ≥ v`, for `0 < v ≤ G(w0)`.
    pub fn invert_survival(&self, v: f64) -> i64 {
        if v >= self.mass() {
            return self.w0;
        }
        let lv = v.ln();
        // Newton on ln G(u) = ln v in ln u.
        let mut lu = ((self.l.ln_eval(self.w0 as f64) - lv) / self.index).max((self.w0 as f64).ln());
        for _ in 0..60 {
            let u = lu.exp();
            let g = self.ln_survival(u) - lv;
            let slope = self.l.log_slope(u) - self.index;
            let step = g / slope;
            lu -= step;
            if step.abs() < 1e-13 {
                break;
            }
        }
        let cap = 4.0e15_f64;
        let mut w = lu.exp().min(cap).floor() as i64;
        w = w.max(self.w0);
        while w > self.w0 && self.survival(w as f64) < v {
            w -= 1;
        }
        while (w as f64) < cap && self.survival((w + 1) as f64) >= v {
            w += 1;
        }
        w
    }
}

fn log_quadrature(f: &impl Fn(f64) -> f64, m: f64) -> f64 {
    // u = m·e^v maps [m, ∞) to [0, ∞) and turns power decay into
    // exponential decay.
    quad::integrate_to_inf(|v| f(m * v.exp()) * m * v.exp(), 0.0, Tol::new(1e-300, 1e-13)).value
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LawKind {
    Lattice,
    Heavy,
    Stable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawFlags {
    pub aperiodic: bool,
    pub irreducible: bool,
    pub can_overshoot_down: bool,
}

/// A validated mean-zero increment law.
#[derive(Clone)]
pub struct IncrementLaw {
    kind: LawKind,
    core_lo: i64,
    core: Vec<f64>,
    core_cum: Vec<f64>,
    left: Option<ParetoTail>,
    right: Option<ParetoTail>,
    mean: f64,
    sigma2: f64,
    flags: LawFlags,
    alias: WeightedAliasIndex<f64>,
    core_mass: f64,
}

impl fmt::Debug for IncrementLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IncrementLaw")
            .field("kind", &self.kind)
            .field("core_lo", &self.core_lo)
            .field("core", &self.core)
            .field("left", &self.left)
            .field("right", &self.right)
            .field("sigma2", &self.sigma2)
            .field("flags", &self.flags)
            .finish()
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl IncrementLaw {
    fn assemble(
        kind: LawKind,
        pmf: &BTreeMap<i64, f64>,
        left: Option<ParetoTail>,
        right: Option<ParetoTail>,
    ) -> Result<Self, LawError> {
        for (&k, &p) in pmf {
            if !(p.is_finite() && p >= 0.0) {
                return Err(LawError::BadProbability(k));
            }
        }
        let support: Vec<i64> = pmf.iter().filter(|(_, &p)| p > 0.0).map(|(&k, _)| k).collect();
        let (core_lo, core_hi) = match (support.first(), support.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => (0, 0),
        };
        if let Some(t) = left {
            if core_lo <= -t.w0 {
                return Err(LawError::InvalidShape(format!(
                    "explicit step {core_lo} overlaps the left tail starting at -{}",
                    t.w0
                )));
            }
        }
        if let Some(t) = right {
            if core_hi >= t.w0 {
                return Err(LawError::InvalidShape(format!(
                    "explicit step {core_hi} overlaps the right tail starting at {}",
                    t.w0
                )));
            }
        }
        let mut core = vec![0.0; (core_hi - core_lo + 1) as usize];
        for (&k, &p) in pmf {
            if p > 0.0 {
                core[(k - core_lo) as usize] = p;
            }
        }
        let core_cum: Vec<f64> = core
            .iter()
            .scan(0.0, |s, &p| {
                *s += p;
                Some(*s)
            })
            .collect();
        let core_mass: f64 = core.iter().sum();
        let left_mass = left.map_or(0.0, |t| t.mass());
        let right_mass = right.map_or(0.0, |t| t.mass());
        let total = core_mass + left_mass + right_mass;
        if (total - 1.0).abs() > 1e-12 {
            return Err(LawError::NotNormalized(total));
        }

        let core_mean: f64 = core
            .iter()
            .enumerate()
            .map(|(i, &p)| (core_lo + i as i64) as f64 * p)
            .sum();
        let mean = core_mean - left.map_or(0.0, |t| t.first_moment_from(t.w0))
            + right.map_or(0.0, |t| t.first_moment_from(t.w0));
        if mean.abs() > 1e-12 {
            return Err(LawError::NonzeroMean(mean));
        }
        let core_m2: f64 = core
            .iter()
            .enumerate()
            .map(|(i, &p)| ((core_lo + i as i64) as f64).powi(2) * p)
            .sum();
        let sigma2 = core_m2
            + left.map_or(0.0, |t| t.second_moment_from(t.w0))
            + right.map_or(0.0, |t| t.second_moment_from(t.w0));

        let mut g = 0;
        for &k in &support {
            g = gcd(g, k);
        }
        for t in left.iter().chain(right.iter()) {
            g = gcd(g, t.w0);
            g = gcd(g, t.w0 + 1);
        }
        if g == 0 {
            return Err(LawError::InvalidShape("law is a point mass at 0".into()));
        }
        if g > 1 {
            return Err(LawError::Reducible(g));
        }

        let mut reach_steps: Vec<i64> = support.clone();
        if let Some(t) = left {
            reach_steps.push(-t.w0);
            reach_steps.push(-t.w0 - 1);
        }
        if let Some(t) = right {
            reach_steps.push(t.w0);
            reach_steps.push(t.w0 + 1);
        }
        let aperiodic = return_time_gcd(&reach_steps, 50) == 1;
        let can_overshoot_down = left.is_some() || support.iter().any(|&k| k < -1);

        let weights: Vec<f64> = if core.iter().any(|&p| p > 0.0) {
            core.clone()
        } else {
            vec![1.0]
        };
        let alias = WeightedAliasIndex::new(weights).expect("alias weights are valid");

        Ok(IncrementLaw {
            kind,
            core_lo,
            core,
            core_cum,
            left,
            right,
            mean,
            sigma2,
            flags: LawFlags {
                aperiodic,
                irreducible: true,
                can_overshoot_down,
            },
            alias,
            core_mass,
        })
    }

    pub fn kind(&self) -> LawKind {
        self.kind
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn flags(&self) -> LawFlags {
        self.flags
    }

    pub fn left_tail(&self) -> Option<&ParetoTail> {
        self.left.as_ref()
    }

    pub fn right_tail(&self) -> Option<&ParetoTail> {
        self.right.as_ref()
    }

    /// True when `E[|S₁|³; S₁ < 0] = ∞`.
    pub fn left_third_moment_infinite(&self) -> bool {
        self.left.is_some_and(|t| !t.third_moment_finite())
    }

    /// Range `[lo, hi]` of the explicitly stored steps.
    pub fn explicit_range(&self) -> (i64, i64) {
        (self.core_lo, self.core_lo + self.core.len() as i64 - 1)
    }

    /// Width of the explicit support plus the tail cutoffs.
    pub fn span(&self) -> i64 {
        let (lo, hi) = self.explicit_range();
        let lo = self.left.map_or(lo, |t| lo.min(-t.w0));
        let hi = self.right.map_or(hi, |t| hi.max(t.w0));
        hi - lo
    }

    pub fn min_step(&self) -> Option<i64> {
        match self.left {
            Some(_) => None,
            None => Some(self.core_lo),
        }
    }

    pub fn max_step(&self) -> Option<i64> {
        match self.right {
            Some(_) => None,
            None => Some(self.explicit_range().1),
        }
    }

    pub fn pmf(&self, d: i64) -> f64 {
        let (lo, hi) = self.explicit_range();
        if d >= lo && d <= hi {
            return self.core[(d - lo) as usize];
        }
        if d < 0 {
            if let Some(t) = self.left {
                return t.point(-d);
            }
        } else if let Some(t) = self.right {
            return t.point(d);
        }
        0.0
    }

    /// `F(d) = P[S ≤ d]`.
    pub fn cdf(&self, d: i64) -> f64 {
        if let Some(t) = self.left {
            if d <= -t.w0 {
                return t.survival_int(-d);
            }
        } else if d < self.core_lo {
            return 0.0;
        }
        let left_mass = self.left.map_or(0.0, |t| t.mass());
        let (lo, hi) = self.explicit_range();
        let core_part = if d < lo {
            0.0
        } else if d >= hi {
            self.core_mass
        } else {
            self.core_cum[(d - lo) as usize]
        };
        let right_part = match self.right {
            Some(t) if d >= t.w0 => t.mass() - t.survival_int(d + 1),
            _ => 0.0,
        };
        left_mass + core_part + right_part
    }

    /// `P[S ≥ d]`, accurate deep in the right tail.
    pub fn sf(&self, d: i64) -> f64 {
        if let Some(t) = self.right {
            if d >= t.w0 {
                return t.survival_int(d);
            }
        } else if d > self.explicit_range().1 {
            return 0.0;
        }
        let right_mass = self.right.map_or(0.0, |t| t.mass());
        let (lo, hi) = self.explicit_range();
        let core_part = if d <= lo {
            self.core_mass
        } else if d > hi {
            0.0
        } else {
            self.core_mass - self.core_cum[(d - 1 - lo) as usize]
        };
        let left_part = match self.left {
            Some(t) if d <= -t.w0 => t.mass() - t.survival_int(-d + 1),
            _ => 0.0,
        };
        right_mass + core_part + left_part
    }

    /// `E[-S; S ≤ -u]` for `u ≥ 1`.
    pub fn left_partial_mean(&self, u: i64) -> f64 {
        let (lo, _) = self.explicit_range();
        let mut s = 0.0;
        for d in lo..=(-u).min(-1) {
            s += -(d as f64) * self.pmf(d);
        }
        if let Some(t) = self.left {
            s += t.first_moment_from(u);
        }
        s
    }

    /// `E[S; S ≥ u]` for `u ≥ 1`.
    pub fn right_partial_mean(&self, u: i64) -> f64 {
        let (_, hi) = self.explicit_range();
        let mut s = 0.0;
        for d in u.max(1)..=hi {
            s += d as f64 * self.pmf(d);
        }
        if let Some(t) = self.right {
            s += t.first_moment_from(u);
        }
        s
    }

    /// The law of `-S`.
    pub fn reflected(&self) -> IncrementLaw {
        let mut r = self.clone();
        let (_, hi) = self.explicit_range();
        r.core_lo = -hi;
        r.core.reverse();
        r.core_cum = r
            .core
            .iter()
            .scan(0.0, |s, &p| {
                *s += p;
                Some(*s)
            })
            .collect();
        std::mem::swap(&mut r.left, &mut r.right);
        r.flags.can_overshoot_down = r.left.is_some() || r.core_lo < -1;
        let weights = if r.core.iter().any(|&p| p > 0.0) { r.core.clone() } else { vec![1.0] };
        r.alias = WeightedAliasIndex::new(weights).expect("alias weights are valid");
        r
    }

    /// Exact draw: one uniform picks the component, the alias table or the
    /// tail inverse handles the rest.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        let u: f64 = rng.random();
        let lm = self.left.map_or(0.0, |t| t.mass());
        if let Some(t) = self.left {
            if u < lm {
                return -t.invert_survival(lm - u);
            }
        }
        if let Some(t) = self.right {
            let rm = t.mass();
            if u < lm + rm {
                return t.invert_survival(rm - (u - lm));
            }
        }
        self.core_lo + self.alias.sample(rng) as i64
    }

    /// Stable digest of the law, used as a cache key.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.kind).as_bytes());
        h.update(self.core_lo.to_le_bytes());
        for p in &self.core {
            h.update(p.to_bits().to_le_bytes());
        }
        for t in [self.left, self.right] {
            match t {
                Some(t) => {
                    h.update([1u8]);
                    h.update(t.index.to_bits().to_le_bytes());
                    h.update(t.l.scale.to_bits().to_le_bytes());
                    h.update(t.l.gamma.to_bits().to_le_bytes());
                    h.update(t.w0.to_le_bytes());
                }
                None => h.update([0u8]),
            }
        }
        hex::encode(h.finalize())
    }
}

/// gcd of `{n ≤ nmax : P[S_n = 0] > 0}` using only the listed steps.
fn return_time_gcd(steps: &[i64], nmax: usize) -> i64 {
    let reach = steps.iter().map(|s| s.abs()).max().unwrap_or(0) * nmax as i64;
    let width = (2 * reach + 1) as usize;
    let mut cur = vec![false; width];
    cur[reach as usize] = true;
    let mut g = 0;
    for n in 1..=nmax {
        let mut next = vec![false; width];
        for (i, &on) in cur.iter().enumerate() {
            if !on {
                continue;
            }
            for &s in steps {
                let j = i as i64 + s;
                if j >= 0 && (j as usize) < width {
                    next[j as usize] = true;
                }
            }
        }
        if next[reach as usize] {
            g = gcd(g, n as i64);
        }
        cur = next;
    }
    g
}

/// Finite lattice law from an explicit pmf.
pub fn make_lattice_law(pmf: &BTreeMap<i64, f64>) -> Result<IncrementLaw, LawError> {
    IncrementLaw::assemble(LawKind::Lattice, pmf, None, None)
}

/// `{±1: 1/3, ±2: 1/6}`, variance 2.
pub fn lace() -> IncrementLaw {
    let pmf = BTreeMap::from([(-2, 1.0 / 6.0), (-1, 1.0 / 3.0), (1, 1.0 / 3.0), (2, 1.0 / 6.0)]);
    make_lattice_law(&pmf).expect("lace law is valid")
}

/// Simple random walk.
pub fn srw() -> IncrementLaw {
    make_lattice_law(&BTreeMap::from([(-1, 0.5), (1, 0.5)])).expect("srw is valid")
}

/// Parameters of a law with a regularly varying left tail.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeavyTailParams {
    pub beta: f64,
    pub l: SlowlyVarying,
    pub w0: i64,
    pub right_shape: BTreeMap<i64, f64>,
}

/// Left tail `P[S ≤ -w] = L(w) w^{-β}` for `w ≥ w0`, no other negative
/// steps; the right shape is rescaled so the mean vanishes and the rest of
/// the mass sits at 0.
pub fn make_heavy_tail_law(params: &HeavyTailParams) -> Result<IncrementLaw, LawError> {
    let HeavyTailParams { beta, l, w0, ref right_shape } = *params;
    if !(2.0..=3.0).contains(&beta) {
        return Err(LawError::BetaOutOfRange(beta));
    }
    if w0 < 2 {
        return Err(LawError::CutoffTooSmall(w0));
    }
    if !(l.scale.is_finite() && l.scale > 0.0 && l.gamma.is_finite()) {
        return Err(LawError::BadProxy);
    }
    let tail = ParetoTail { index: beta, l, w0 };
    if !tail.second_moment_finite() {
        return Err(LawError::InfiniteVariance);
    }
    if tail.mass() >= 1.0 {
        return Err(LawError::CannotBalanceMean(format!(
            "tail mass {} leaves no room for the right side",
            tail.mass()
        )));
    }
    let (shape_mass, shape_mean) = shape_moments(right_shape, true)?;
    let r = tail.first_moment_from(w0) / shape_mean;
    let zero = 1.0 - tail.mass() - r * shape_mass;
    if zero < 0.0 {
        return Err(LawError::CannotBalanceMean(format!(
            "right side needs mass {} but only {} is available",
            r * shape_mass,
            1.0 - tail.mass()
        )));
    }
    let mut pmf: BTreeMap<i64, f64> = right_shape.iter().map(|(&k, &v)| (k, r * v)).collect();
    pmf.insert(0, zero);
    IncrementLaw::assemble(LawKind::Heavy, &pmf, Some(tail), None)
}

fn shape_moments(shape: &BTreeMap<i64, f64>, positive: bool) -> Result<(f64, f64), LawError> {
    let mut mass = 0.0;
    let mut mean = 0.0;
    for (&k, &v) in shape {
        if !(v.is_finite() && v >= 0.0) {
            return Err(LawError::BadProbability(k));
        }
        if (positive && k <= 0) || (!positive && k >= 0) {
            return Err(LawError::InvalidShape(format!("step {k} is on the wrong side")));
        }
        mass += v;
        mean += (k as f64).abs() * v;
    }
    if mass <= 0.0 {
        return Err(LawError::CannotBalanceMean("shape has no mass".into()));
    }
    Ok((mass, mean))
}

/// Norming sequence `λ_n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum NormingSequence {
    SqrtVariance { sigma2: f64 },
    Stable { alpha: f64, l: SlowlyVarying },
}

impl NormingSequence {
    pub fn for_law(law: &IncrementLaw) -> NormingSequence {
        match law.right_tail() {
            Some(t) if t.index < 2.0 => NormingSequence::Stable { alpha: t.index, l: t.l },
            _ => NormingSequence::SqrtVariance { sigma2: law.sigma2() },
        }
    }

    pub fn value(&self, n: f64) -> f64 {
        match *self {
            NormingSequence::SqrtVariance { sigma2 } => (sigma2 * n).sqrt(),
            NormingSequence::Stable { alpha, l } => {
                // Solve α ln λ - ln L(λ) = ln n by Newton in ln λ.
                let ln_n = n.ln();
                let mut x = ln_n / alpha;
                for _ in 0..100 {
                    let lam = x.exp();
                    let f = alpha * x - l.ln_eval(lam) - ln_n;
                    let df = alpha - l.log_slope(lam);
                    let step = f / df;
                    x -= step;
                    if step.abs() < 1e-15 {
                        break;
                    }
                }
                x.exp()
            }
        }
    }

    pub fn is_stable(&self) -> bool {
        matches!(self, NormingSequence::Stable { .. })
    }
}

/// Parameters of a law in the domain of a spectrally positive stable law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub l: SlowlyVarying,
    pub w0: i64,
    pub left_shape: BTreeMap<i64, f64>,
}

/// Right tail `P[S ≥ w] = L(w) w^{-α}` for `w ≥ w0`; the light left shape
/// is rescaled so the mean vanishes, the rest of the mass sits at 0.
pub fn make_stable_domain_law(
    params: &StableParams,
) -> Result<(IncrementLaw, NormingSequence), LawError> {
    let StableParams { alpha, l, w0, ref left_shape } = *params;
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(LawError::AlphaOutOfRange(alpha));
    }
    if w0 < 2 {
        return Err(LawError::CutoffTooSmall(w0));
    }
    if !(l.scale.is_finite() && l.scale > 0.0 && l.gamma.is_finite()) {
        return Err(LawError::BadProxy);
    }
    let tail = ParetoTail { index: alpha, l, w0 };
    let (shape_mass, shape_mean) = shape_moments(left_shape, false)?;
    let r = tail.first_moment_from(w0) / shape_mean;
    let zero = 1.0 - tail.mass() - r * shape_mass;
    if zero < 0.0 {
        return Err(LawError::CannotBalanceMean(format!(
            "left side needs mass {} but only {} is available",
            r * shape_mass,
            1.0 - tail.mass()
        )));
    }
    let mut pmf: BTreeMap<i64, f64> = left_shape.iter().map(|(&k, &v)| (k, r * v)).collect();
    pmf.insert(0, zero);
    let law = IncrementLaw::assemble(LawKind::Stable, &pmf, None, Some(tail))?;
    // The explicit left side is finite, so this only guards the cutoff.
    let u = 10_000;
    if law.cdf(-u) / law.sf(u + 1) >= 1e-3 {
        return Err(LawError::LeftTailTooHeavy);
    }
    let norming = NormingSequence::for_law(&law);
    Ok((law, norming))
}

/// The default β-tailed law: `L = scale`, `w0 = 3`, right shape `{1: 1, 2: 1}`.
pub fn heavy_example(beta: f64, scale: f64) -> IncrementLaw {
    make_heavy_tail_law(&HeavyTailParams {
        beta,
        l: SlowlyVarying::constant(scale),
        w0: 3,
        right_shape: BTreeMap::from([(1, 1.0), (2, 1.0)]),
    })
    .expect("default heavy law is valid")
}
