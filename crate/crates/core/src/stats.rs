//! Distances between exact lattice laws, limit densities and samples.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;
use statrs::distribution::{Beta, ContinuousCDF};

/// A lattice pmf on `z/norm` against a density `f` on ℝ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LatticeDistance {
    /// `½ Σ_z |p_z - f(z/norm)/norm| + ½ |1 - Σ_z f(z/norm)/norm|`.
    pub tv: f64,
    /// `sup_z |norm p_z - f(z/norm)|`.
    pub sup: f64,
    /// `1 - Σ p_z`.
    pub pmf_deficit: f64,
    /// Riemann-sum error estimate: full grid against every other point.
    pub quad_error: f64,
}

/// Compare `pmf` (pairs `(z, p_z)`, consecutive `z`) with the density
/// `f` evaluated at the lattice points.
pub fn lattice_vs_density(pmf: &[(i64, f64)], norm: f64, density: &[f64]) -> LatticeDistance {
    assert_eq!(pmf.len(), density.len());
    let h = 1.0 / norm;
    let mut abs = 0.0;
    let mut sup: f64 = 0.0;
    let mut pm = 0.0;
    let mut fine = 0.0;
    let mut coarse = [0.0; 2];
    for (&(z, p), &f) in pmf.iter().zip(density) {
        let q = f * h;
        abs += (p - q).abs();
        sup = sup.max((p * norm - f).abs());
        pm += p;
        fine += q;
        coarse[z.rem_euclid(2) as usize] += 2.0 * q;
    }
    let quad_error = coarse.iter().map(|c| (c - fine).abs()).fold(0.0, f64::max);
    LatticeDistance { tv: 0.5 * (abs + (1.0 - fine).abs()), sup, pmf_deficit: 1.0 - pm, quad_error }
}

/// One-sample Kolmogorov–Smirnov statistic; sorts `xs`.
pub fn ks_statistic<F: Fn(f64) -> f64>(xs: &mut [f64], cdf: F) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let c = cdf(x);
        d = d.max((i as f64 + 1.0) / n - c).max(c - i as f64 / n);
    }
    d
}

/// KS distance between integer samples and an integer pmf.
pub fn ks_lattice(samples: &[i64], pmf: &[(i64, f64)]) -> f64 {
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for &s in samples {
        *counts.entry(s).or_default() += 1;
    }
    let mut pts: Vec<i64> = pmf.iter().map(|x| x.0).chain(counts.keys().copied()).collect();
    pts.sort_unstable();
    pts.dedup();
    let probs: HashMap<i64, f64> = pmf.iter().copied().collect();
    let n = samples.len() as f64;
    let (mut fe, mut fp, mut d) = (0.0, 0.0, 0.0f64);
    for z in pts {
        fe += counts.get(&z).copied().unwrap_or(0) as f64 / n;
        fp += probs.get(&z).copied().unwrap_or(0.0);
        d = d.max((fe - fp).abs());
    }
    d
}

/// Total variation between an empirical count table and a pmf.
pub fn tv_counts<K: Eq + Hash + Clone>(counts: &HashMap<K, usize>, probs: &HashMap<K, f64>) -> f64 {
    let n: usize = counts.values().sum();
    let mut d = 0.0;
    for (k, &p) in probs {
        d += (counts.get(k).copied().unwrap_or(0) as f64 / n as f64 - p).abs();
    }
    for (k, &c) in counts {
        if !probs.contains_key(k) {
            d += c as f64 / n as f64;
        }
    }
    0.5 * d
}

/// Clopper–Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: usize, n: usize, level: f64) -> (f64, f64) {
    let a = 0.5 * (1.0 - level);
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 { 0.0 } else { Beta::new(kf, nf - kf + 1.0).expect("valid beta").inverse_cdf(a) };
    let hi = if k == n { 1.0 } else { Beta::new(kf + 1.0, nf - kf).expect("valid beta").inverse_cdf(1.0 - a) };
    (lo, hi)
}

/// `(max - min) / mean`.
pub fn relative_spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (max - min) / mean
}

pub fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn nondecreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] >= w[0])
}
