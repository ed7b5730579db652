//! Samplers for the limit processes on a time grid.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{gauss_killed, passage, LimitError, LimitLaw, Mode};
use super::jump::{time_convolution, JKernel};
use crate::quad;

/// Tabulated inverse CDF: panels with exact (Kronrod) masses and a linear
/// density inside each panel.
#[derive(Clone, Debug)]
pub struct InverseCdf {
    knots: Vec<f64>,
    dens: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

impl InverseCdf {
    /// Refine `knots` until the trapezoid mass of every panel is within
    /// `eps · total` of its Kronrod mass.
    pub fn build<F: FnMut(f64) -> f64>(mut f: F, knots: &[f64], eps: f64) -> Result<InverseCdf, LimitError> {
        let mut f = |x: f64| {
            let v = f(x);
            if v.is_finite() {
                v.max(0.0)
            } else {
                0.0
            }
        };
        let mut pan: Vec<(f64, f64, f64)> = Vec::new();
        let mut total = 0.0;
        for w in knots.windows(2) {
            if w[1] > w[0] {
                let (m, _) = quad::gauss_kronrod(&mut f, w[0], w[1]);
                total += m;
                pan.push((w[0], w[1], m));
            }
        }
        if !(total > 0.0 && total.is_finite()) {
            return Err(LimitError::InverseCdfFailure(format!("density has total mass {total}")));
        }
        let mut out_k = vec![knots[0]];
        let mut out_d = vec![f(knots[0])];
        let mut out_m: Vec<f64> = Vec::new();
        let mut stack: Vec<(f64, f64, f64, u32)> = Vec::new();
        for &(a, b, m) in pan.iter().rev() {
            stack.push((a, b, m, 0));
        }
        while let Some((a, b, m, depth)) = stack.pop() {
            let fa = *out_d.last().expect("nonempty");
            let fb = f(b);
            let trap = 0.5 * (fa + fb) * (b - a);
            if m < 0.0 || ((trap - m).abs() > eps * total && depth < 40) {
                let mid = 0.5 * (a + b);
                let (m1, _) = quad::gauss_kronrod(&mut f, a, mid);
                let (m2, _) = quad::gauss_kronrod(&mut f, mid, b);
                stack.push((mid, b, m2, depth + 1));
                stack.push((a, mid, m1, depth + 1));
                continue;
            }
            out_k.push(b);
            out_d.push(fb);
            out_m.push(m.max(0.0));
        }
        let mut cum = Vec::with_capacity(out_m.len() + 1);
        cum.push(0.0);
        let mut acc = 0.0;
        for m in &out_m {
            acc += m;
            cum.push(acc);
        }
        Ok(InverseCdf { knots: out_k, dens: out_d, cum, total: acc })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn panels(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn quantile(&self, v: f64) -> f64 {
        let target = v.clamp(0.0, 1.0) * self.total;
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&target)) {
            Ok(i) => i.min(self.panels() - 1),
            Err(i) => i.saturating_sub(1).min(self.panels() - 1),
        };
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let m = self.cum[i + 1] - self.cum[i];
        if m <= 0.0 {
            return a;
        }
        let p = ((target - self.cum[i]) / m).clamp(0.0, 1.0);
        let (fa, fb) = (self.dens[i], self.dens[i + 1]);
        let s = if fa + fb <= 0.0 {
            p
        } else {
            let disc = (fa * fa + (fb - fa) * (fa + fb) * p).max(0.0);
            let den = fa + disc.sqrt();
            if den > 0.0 {
                p * (fa + fb) / den
            } else {
                p
            }
        };
        a + s.clamp(0.0, 1.0) * (b - a)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }

    /// CDF of the tabulated law.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.knots[0] {
            return 0.0;
        }
        if x >= self.knots[self.knots.len() - 1] {
            return 1.0;
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        let (a, b) = (self.knots[i], self.knots[i + 1]);
        let (fa, fb) = (self.dens[i], self.dens[i + 1]);
        let m = self.cum[i + 1] - self.cum[i];
        let s = (x - a) / (b - a);
        let frac = if fa + fb > 0.0 { (fa * s + 0.5 * (fb - fa) * s * s) / (0.5 * (fa + fb)) } else { s };
        (self.cum[i] + m * frac.clamp(0.0, 1.0)) / self.total
    }
}

/// Interior-time density of the Bessel-3 bridge from 0 to `c` of length `T`:
/// `ρ_t(z) 𝔤⁰_{T-t}(z, c) / ρ_T(c)`.
pub fn bessel_bridge_density(t: f64, z: f64, c: f64, horizon: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    passage(t, z) * gauss_killed(horizon - t, z, c) / passage(horizon, c)
}

/// Uniform direction on the sphere, tilted towards `e_1` with
/// von Mises–Fisher concentration `kappa`.
fn vmf_direction<R: Rng + ?Sized>(rng: &mut R, kappa: f64) -> [f64; 3] {
    let u = 1.0 - rng.random::<f64>();
    let w = if kappa < 1e-12 {
        2.0 * u - 1.0
    } else {
        (1.0 + (u + (1.0 - u) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0)
    };
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let r = (1.0 - w * w).max(0.0).sqrt();
    [w, r * phi.cos(), r * phi.sin()]
}

/// Bessel-3 bridge from `x` to `y` of the given length, at increasing
/// `times` in `(0, length]`: the norm of a 3-d Brownian bridge from
/// `(x, 0, 0)` to a point of norm `y` whose direction is drawn from the
/// conditional (von Mises–Fisher) law.
pub fn bessel3_bridge<R: Rng + ?Sized>(x: f64, y: f64, length: f64, times: &[f64], rng: &mut R) -> Vec<f64> {
    let d = vmf_direction(rng, x * y / length);
    let end = d.map(|c| c * y);
    let mut p = [x, 0.0, 0.0];
    let mut s = 0.0;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        if t >= length {
            out.push(y);
            continue;
        }
        let h = t - s;
        if h > 0.0 {
            let rem = length - s;
            let var = h * (length - t) / rem;
            for i in 0..3 {
                let z: f64 = rng.sample(StandardNormal);
                p[i] += (end[i] - p[i]) * h / rem + var.sqrt() * z;
            }
            s = t;
        }
        out.push((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    out
}

/// Bessel-3 bridge on the uniform grid `k · length / m`, `k = 0..=m`.
pub fn bessel3_bridge_sample<R: Rng + ?Sized>(x: f64, y: f64, length: f64, m: usize, rng: &mut R) -> Vec<f64> {
    let times: Vec<f64> = (1..=m).map(|k| k as f64 * length / m as f64).collect();
    let mut v = vec![x];
    v.extend(bessel3_bridge(x, y, length, &times, rng));
    v
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Last index before the sign change (jump mode).
    pub jump_index: Option<usize>,
}

impl GridPath {
    /// Indices `k` with `values[k] > 0 > values[k+1]`.
    pub fn sign_changes(&self) -> Vec<usize> {
        self.values.windows(2).enumerate().filter(|(_, w)| w[0] > 0.0 && w[1] < 0.0).map(|(k, _)| k).collect()
    }

    pub fn max_increment(&self) -> f64 {
        self.values.windows(2).map(|w| (w[1] - w[0]).abs()).fold(0.0, f64::max)
    }

    /// Size of the step across zero.
    pub fn crossing_step(&self) -> Option<f64> {
        self.sign_changes().first().map(|&k| self.values[k] - self.values[k + 1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// One-step inverse-CDF draws from the transition density.
    Sequential,
    /// Crossing time (and jump) first, then Bessel-3 bridges.
    Constructive,
}

/// Refinement tolerance of per-step tables.
const TABLE_EPS: f64 = 1e-6;

/// Sampler for one limit law on a uniform grid of `m` steps.
#[derive(Clone, Debug)]
pub struct LimitSampler {
    law: LimitLaw,
    m: usize,
    kind: SamplerKind,
    crossing: Option<InverseCdf>,
    /// Jump mode: mass below the radial cutoff and the radial table.
    core: f64,
    radial: Option<(f64, InverseCdf)>,
}

impl LimitSampler {
    pub fn new(law: &LimitLaw, m: usize, kind: SamplerKind) -> Result<LimitSampler, LimitError> {
        if m < 16 {
            return Err(LimitError::GridTooCoarse(m));
        }
        let spec = law.spec;
        let (b, c, big_t) = (spec.b, spec.c, spec.horizon);
        let mut s = LimitSampler { law: law.clone(), m, kind, crossing: None, core: 0.0, radial: None };
        if kind == SamplerKind::Constructive {
            match spec.mode {
                Mode::Creep => {
                    let knots = time_knots(big_t, 64);
                    s.crossing = Some(InverseCdf::build(|t| passage(t, b) * passage(big_t - t, c), &knots, TABLE_EPS)?);
                }
                Mode::Jump => {
                    let jk = *law.jump_kernel().expect("jump mode has a kernel");
                    let mut knots = JKernel::radial_knots(big_t, b, c);
                    let r0 = knots[0];
                    let top = b + c + 12.0 * big_t.sqrt();
                    let mut extra: Vec<f64> = (1..=48).map(|i| r0 * (knots[1] / r0).powf(i as f64 / 48.0)).collect();
                    extra.extend((1..=64).map(|i| knots[knots.len() - 1] + (top - knots[knots.len() - 1]) * i as f64 / 64.0));
                    knots.extend(extra);
                    knots.sort_by(f64::total_cmp);
                    knots.dedup();
                    let beta = jk.beta;
                    let core = 4.0 * passage(big_t, b + c) * beta / 6.0 * r0.powf(3.0 - beta) / (3.0 - beta);
                    let table = InverseCdf::build(|r| jk.radial(big_t, b, c, r), &knots, TABLE_EPS)?;
                    s.core = core / (core + table.total());
                    s.radial = Some((r0, table));
                }
            }
        }
        Ok(s)
    }

    pub fn law(&self) -> &LimitLaw {
        &self.law
    }

    pub fn times(&self) -> Vec<f64> {
        let h = self.law.spec.horizon / self.m as f64;
        (0..=self.m).map(|k| k as f64 * h).collect()
    }

    /// Inverse-CDF table of `y ↦ density(s, x; t, y)`.
    pub fn step_table(&self, s: f64, x: f64, t: f64, eps: f64) -> Result<InverseCdf, LimitError> {
        let spec = self.law.spec;
        let x0 = if s == 0.0 { spec.b } else { x };
        let scale = (t - s).sqrt().max((spec.horizon - t).sqrt());
        let mut pts = vec![0.0, x0, -spec.c];
        pts.sort_by(f64::total_cmp);
        let (lo, hi) = (pts[0] - 12.0 * scale, pts[2] + 12.0 * scale);
        let mut knots = vec![lo];
        for &p in &pts {
            for i in 1..=8 {
                let off = scale * (i as f64 - 4.5) / 2.0;
                knots.push(p + off);
            }
            knots.push(p);
        }
        knots.push(hi);
        knots.retain(|&k| k >= lo && k <= hi);
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        if x0 < 0.0 {
            knots.retain(|&k| k <= 0.0);
        }
        let mut err = None;
        let table = InverseCdf::build(
            |y| match self.law.density(s, x0, t, y) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            &knots,
            eps,
        );
        match err {
            Some(e) => Err(e),
            None => table,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GridPath, LimitError> {
        match self.kind {
            SamplerKind::Sequential => self.sample_sequential(rng),
            SamplerKind::Constructive => match self.law.spec.mode {
                Mode::Creep => Ok(self.sample_creep(rng)),
                Mode::Jump => self.sample_jump(rng),
            },
        }
    }

    fn sample_sequential<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GridPath, LimitError> {
        let times = self.times();
        let spec = self.law.spec;
        let mut values = vec![spec.b];
        for k in 0..self.m - 1 {
            let x = values[k];
            let table = self.step_table(times[k], x, times[k + 1], TABLE_EPS)?;
            values.push(table.sample(rng));
        }
        values.push(-spec.c);
        let jump_index = match spec.mode {
            Mode::Jump => values.windows(2).position(|w| w[0] > 0.0 && w[1] <= 0.0),
            Mode::Creep => None,
        };
        Ok(GridPath { times, values, jump_index })
    }

    fn sample_creep<R: Rng + ?Sized>(&self, rng: &mut R) -> GridPath {
        let spec = self.law.spec;
        let (b, c, big_t) = (spec.b, spec.c, spec.horizon);
        let tau = self.crossing.as_ref().expect("constructive table").sample(rng);
        let times = self.times();
        let split = times.partition_point(|&t| t < tau);
        // Before τ: time-reversed Bessel-3 bridge from 0 to b of length τ.
        let rev: Vec<f64> = times[..split].iter().rev().map(|&t| tau - t).collect();
        let pre = bessel3_bridge(0.0, b, tau, &rev, rng);
        let post_t: Vec<f64> = times[split..].iter().map(|&t| t - tau).collect();
        let post = if post_t.first() == Some(&0.0) {
            let mut v = vec![0.0];
            v.extend(bessel3_bridge(0.0, c, big_t - tau, &post_t[1..], rng));
            v
        } else {
            bessel3_bridge(0.0, c, big_t - tau, &post_t, rng)
        };
        let mut values: Vec<f64> = pre.into_iter().rev().collect();
        values.extend(post.into_iter().map(|v| -v));
        if let Some(v) = values.first_mut() {
            *v = b;
        }
        GridPath { times, values, jump_index: None }
    }

    fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GridPath, LimitError> {
        let spec = self.law.spec;
        let (b, c, big_t) = (spec.b, spec.c, spec.horizon);
        let (r0, table) = self.radial.as_ref().expect("constructive table");
        let r = if rng.random::<f64>() < self.core {
            r0 * rng.random::<f64>().powf(1.0 / (3.0 - self.law.jump_kernel().expect("jump").beta))
        } else {
            table.sample(rng)
        };
        // Position of the jump: W_τ = r u, landing depth η = r (1 - u).
        let mut uk = vec![0.0, 1.0];
        for k in [b / r, 1.0 - c / r] {
            if k > 0.0 && k < 1.0 {
                uk.push(k);
            }
        }
        uk.extend((1..16).map(|i| i as f64 / 16.0));
        uk.sort_by(f64::total_cmp);
        uk.dedup();
        let ut = InverseCdf::build(|u| time_convolution(big_t, b, r * u, r * (1.0 - u), c), &uk, 1e-5)?;
        let u = ut.sample(rng);
        let (w, eta) = ((r * u).max(1e-300), (r * (1.0 - u)).max(1e-300));
        let tt = InverseCdf::build(
            |t| if t <= 0.0 || t >= big_t { 0.0 } else { gauss_killed(t, b, w) * gauss_killed(big_t - t, eta, c) },
            &time_knots(big_t, 32),
            1e-5,
        )?;
        let tau = tt.sample(rng);
        let times = self.times();
        let split = times.partition_point(|&t| t < tau);
        let mut values = vec![b];
        values.extend(bessel3_bridge(b, w, tau, &times[1..split], rng));
        let post_t: Vec<f64> = times[split..].iter().map(|&t| t - tau).collect();
        let post = if post_t.first() == Some(&0.0) {
            let mut v = vec![eta];
            v.extend(bessel3_bridge(eta, c, big_t - tau, &post_t[1..], rng));
            v
        } else {
            bessel3_bridge(eta, c, big_t - tau, &post_t, rng)
        };
        values.extend(post.into_iter().map(|v| -v));
        Ok(GridPath { times, values, jump_index: Some(split - 1) })
    }
}

/// Knots on `[0, T]` clustered at both ends.
fn time_knots(big_t: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            let s = i as f64 / n as f64;
            big_t * 0.5 * (1.0 - (std::f64::consts::PI * s).cos())
        })
        .collect()
}
