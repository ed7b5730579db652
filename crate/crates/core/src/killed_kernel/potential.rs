//! Potential function `a(x)`, the Green function of the walk killed at the
//! origin, and series oracles for both.

use nalgebra::{DMatrix, DVector};

use super::{forward_row, KernelError, KilledWalk, KillingSet, Window};
use crate::exec::Execution;
use crate::walk_laws::IncrementLaw;

/// `a(x)` on `[-half_width, half_width]`, linearly extrapolated outside.
#[derive(Clone, Debug)]
pub struct PotentialData {
    pub half_width: i64,
    pub range: i64,
    values: Vec<f64>,
    pub sigma2: f64,
    /// Estimated accuracy on `[-range, range]`.
    pub tol: f64,
    /// Largest harmonicity residual on `[-range, range] \ {0}`.
    pub residual: f64,
}

impl PotentialData {
    pub fn a(&self, x: i64) -> f64 {
        let l = self.half_width;
        if x > l {
            self.values[(2 * l) as usize] + (x - l) as f64 / self.sigma2
        } else if x < -l {
            self.values[0] + (-l - x) as f64 / self.sigma2
        } else {
            self.values[(x + l) as usize]
        }
    }

    pub fn a_dagger(&self, x: i64) -> f64 {
        self.a(x) + if x == 0 { 1.0 } else { 0.0 }
    }

    /// `λ(x) = a(x) - x/σ²`.
    pub fn lambda(&self, x: i64) -> f64 {
        self.a(x) - x as f64 / self.sigma2
    }
}

/// Solve the harmonicity system on `[-l, l]` with slopes `±1/σ²` outside.
fn solve_harmonic(law: &IncrementLaw, l: i64) -> Result<Vec<f64>, KernelError> {
    let s2 = law.sigma2();
    let n = (2 * l + 1) as usize;
    let d_lo = law.min_step().map_or(-2 * l, |s| s.max(-2 * l));
    let d_hi = law.max_step().map_or(2 * l, |s| s.min(2 * l));
    let pmf: Vec<f64> = (d_lo..=d_hi).map(|d| law.pmf(d)).collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for x in -l..=l {
        let i = (x + l) as usize;
        if x == 0 {
            m[(i, i)] = 1.0;
            continue;
        }
        m[(i, i)] -= 1.0;
        let a = d_lo.max(-l - x);
        let b = d_hi.min(l - x);
        for d in a..=b {
            m[(i, (x + d + l) as usize)] += pmf[(d - d_lo) as usize];
        }
        // Jumps past the right edge: a(L) + (x + d - L)/σ².
        let r = l - x + 1;
        let pr = law.sf(r);
        if pr > 0.0 {
            m[(i, n - 1)] += pr;
            let excess = law.right_partial_mean(r) - (r - 1) as f64 * pr;
            rhs[i] -= excess / s2;
        }
        // Jumps past the left edge: a(-L) + (-L - x - d)/σ².
        let u = l + x + 1;
        let pl = law.cdf(-u);
        if pl > 0.0 {
            m[(i, 0)] += pl;
            let excess = law.left_partial_mean(u) - (u - 1) as f64 * pl;
            rhs[i] -= excess / s2;
        }
    }
    let sol = m.lu().solve(&rhs).ok_or(KernelError::Singular)?;
    Ok(sol.iter().copied().collect())
}

fn default_pad(law: &IncrementLaw, range: i64) -> i64 {
    let base = (16 * law.span()).max(64);
    if law.left_tail().is_some() || law.right_tail().is_some() {
        base.max(range)
    } else {
        base
    }
}

/// `a(x)` for `|x| ≤ range`: two solves with padding `p` and `2p` must agree
/// within `tol`.
pub fn potential_function(law: &IncrementLaw, range: i64, tol: f64) -> Result<PotentialData, KernelError> {
    if !law.sigma2().is_finite() {
        return Err(KernelError::Unsupported("potential needs finite variance".into()));
    }
    let pad = default_pad(law, range);
    let l1 = range + pad;
    let l2 = range + 2 * pad;
    let v1 = solve_harmonic(law, l1)?;
    let v2 = solve_harmonic(law, l2)?;
    let mut diff: f64 = 0.0;
    for x in -range..=range {
        diff = diff.max((v1[(x + l1) as usize] - v2[(x + l2) as usize]).abs());
    }
    let data = PotentialData { half_width: l2, range, values: v2, sigma2: law.sigma2(), tol: diff, residual: 0.0 };
    let residual = harmonic_residual(law, &data, range);
    let data = PotentialData { residual, tol: diff.max(residual), ..data };
    if data.tol > tol {
        return Err(KernelError::NoConvergence(format!(
            "potential solves disagree by {:e} (> {tol:e})",
            data.tol
        )));
    }
    Ok(data)
}

/// `max_{0<|x|≤r} |Σ_y p(y-x) a(y) - a(x)|`, exact inside the solved window.
pub fn harmonic_residual(law: &IncrementLaw, pot: &PotentialData, r: i64) -> f64 {
    let l = pot.half_width;
    let mut worst: f64 = 0.0;
    for x in -r..=r {
        if x == 0 {
            continue;
        }
        let mut s = 0.0;
        for y in -l..=l {
            let p = law.pmf(y - x);
            if p > 0.0 {
                s += p * pot.a(y);
            }
        }
        let rp = law.sf(l - x + 1);
        s += rp * pot.a(l) + (law.right_partial_mean(l - x + 1) - (l - x) as f64 * rp) / pot.sigma2;
        let u = l + x + 1;
        let lp = law.cdf(-u);
        s += lp * pot.a(-l) + (law.left_partial_mean(u) - (u - 1) as f64 * lp) / pot.sigma2;
        worst = worst.max((s - pot.a(x)).abs());
    }
    worst
}

/// Richardson elimination of `m^{-1/2}` and `m^{-3/2}` terms from values at
/// `m, 4m, 16m`.
pub fn richardson_half_powers(v: [f64; 3]) -> f64 {
    let r1a = 2.0 * v[1] - v[0];
    let r1b = 2.0 * v[2] - v[1];
    (8.0 * r1b - r1a) / 7.0
}

fn free_window(law: &IncrementLaw, steps: usize) -> Window {
    let w = (8.0 * (law.sigma2() * steps as f64).sqrt()).ceil() as i64 + 4 * law.span();
    Window::new(-w, w)
}

/// Partial-sum oracle for `a(x) = lim Σ_{k≤n} [p^k(0) - p^k(-x)]`, with a
/// two-term average against period two and Richardson acceleration over
/// `n, 4n, 16n`.
pub fn potential_oracle(law: &IncrementLaw, xs: &[i64], n: usize) -> Vec<f64> {
    let nmax = 16 * n + 1;
    let window = free_window(law, nmax);
    let walk = KilledWalk::new(law, &KillingSet::Finite(vec![]), window, Execution::default());
    let mut f = walk.delta(0);
    let mut partial = vec![0.0; xs.len()];
    let checkpoints = [n, 4 * n, 16 * n];
    let mut at: Vec<[f64; 2]> = vec![[0.0; 2]; 3 * xs.len()];
    for k in 0..=nmax {
        let s = f.log_scale.exp();
        let p0 = f.v[window.index(0)] * s;
        for (j, &x) in xs.iter().enumerate() {
            partial[j] += p0 - f.v[window.index(-x)] * s;
        }
        for (c, &cp) in checkpoints.iter().enumerate() {
            if k == cp || k == cp + 1 {
                for j in 0..xs.len() {
                    at[c * xs.len() + j][k - cp] = partial[j];
                }
            }
        }
        if k < nmax {
            f = walk.forward(&f).0;
        }
    }
    (0..xs.len())
        .map(|j| {
            let v = [0, 1, 2].map(|c| {
                let [a, b] = at[c * xs.len() + j];
                0.5 * (a + b)
            });
            richardson_half_powers(v)
        })
        .collect()
}

/// `g_{{0}}(x, y) = a†(x) + a(-y) - a(x - y)`.
pub fn green_function_origin(pot: &PotentialData, x: i64, y: i64) -> Result<f64, KernelError> {
    let r = pot.range;
    for z in [x, -y, x - y] {
        if z.abs() > r {
            return Err(KernelError::OutOfRange(z));
        }
    }
    Ok(pot.a_dagger(x) + pot.a(-y) - pot.a(x - y))
}

/// Partial sums `Σ_{k≤m} p^k_{{0}}(x, y)` at `m ∈ {n, 4n, 16n}` and their
/// Richardson limit.
pub fn green_series_oracle(law: &IncrementLaw, x: i64, y: i64, n: usize) -> ([f64; 3], f64) {
    let nmax = 16 * n + 1;
    let mut window = free_window(law, nmax);
    window.lo = window.lo.min(x.min(y) - 1);
    window.hi = window.hi.max(x.max(y) + 1);
    let walk = KilledWalk::new(law, &KillingSet::origin(), window, Execution::default());
    let row = forward_row(&walk, x, nmax);
    let iy = window.index(y);
    let mut partial = 0.0;
    let mut sums = [[0.0; 2]; 3];
    let cps = [n, 4 * n, 16 * n];
    for (k, s) in row.steps.iter().enumerate() {
        partial += s.get(iy);
        for (c, &cp) in cps.iter().enumerate() {
            if k == cp || k == cp + 1 {
                sums[c][k - cp] = partial;
            }
        }
    }
    let raw = [sums[0][0], sums[1][0], sums[2][0]];
    let avg = sums.map(|[a, b]| 0.5 * (a + b));
    (raw, richardson_half_powers(avg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::walk_laws::{lace, srw};

    #[test]
    fn srw_potential_is_abs() {
        let p = potential_function(&srw(), 20, 1e-9).unwrap();
        for x in -20..=20 {
            assert!((p.a(x) - x.abs() as f64).abs() < 1e-9, "x={x}: {}", p.a(x));
        }
        assert_eq!(p.a(0), 0.0);
        assert!((green_function_origin(&p, 1, 1).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn lace_potential_slope() {
        let p = potential_function(&lace(), 45, 1e-8).unwrap();
        assert!(p.residual < 1e-10);
        let slope = p.a(41) - p.a(40);
        assert!((slope - 0.5).abs() < 0.05);
        assert!((p.a(-41) - p.a(-40) - 0.5).abs() < 0.05);
    }

    #[test]
    fn lace_potential_against_partial_sums() {
        let p = potential_function(&lace(), 10, 1e-8).unwrap();
        let xs = [1, 2, 5, 10];
        let o = potential_oracle(&lace(), &xs, 500);
        for (x, v) in xs.iter().zip(o) {
            assert!((p.a(*x) - v).abs() < 5e-5, "x={x}: {} vs {v}", p.a(*x));
        }
    }
}
