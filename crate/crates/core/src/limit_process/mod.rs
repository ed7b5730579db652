//! Limit laws of the conditioned bridges in natural (unit-variance)
//! coordinates: Gaussian kernels, the creeping law `q`, the jumping law `q̆`,
//! finite-dimensional densities, and the local-time killing kernel.

pub mod jump;
pub mod sampler;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quad::{self, Estimate, Tol};
pub use jump::JKernel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimitError {
    #[error("time {0} is not positive")]
    NonpositiveTime(f64),
    #[error("times out of order: s = {s}, t = {t}, T = {horizon}")]
    TimeOrder { s: f64, t: f64, horizon: f64 },
    #[error("beta = {0}: the jump kernel is finite only for 2 <= beta < 3")]
    BetaNotIntegrable(f64),
    #[error("quadrature reached {achieved:e}, requested {requested:e}")]
    TolNotMet { achieved: f64, requested: f64 },
    #[error("positive value after a negative one in the fdd pattern")]
    SignPattern,
    #[error("grid with {0} steps is too coarse (need at least 16)")]
    GridTooCoarse(usize),
    #[error("inverse cdf failed: {0}")]
    InverseCdfFailure(String),
    #[error("invalid limit spec: {0}")]
    InvalidSpec(String),
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// `𝔤_t(x)`.
pub fn gauss(t: f64, x: f64) -> f64 {
    (-x * x / (2.0 * t)).exp() / (SQRT_2PI * t.sqrt())
}

/// `𝔤⁰_t(x, y) = 𝔤_t(y - x) - 𝔤_t(x + y)`, evaluated without cancellation.
pub fn gauss_killed(t: f64, x: f64, y: f64) -> f64 {
    -gauss(t, y - x) * (-2.0 * x * y / t).exp_m1()
}

/// `ρ_t(x) = |x| 𝔤_t(x) / t`.
pub fn passage(t: f64, x: f64) -> f64 {
    x.abs() / t * gauss(t, x)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseKernels {
    pub gauss: f64,
    pub killed: f64,
    pub passage: f64,
}

/// `(𝔤_t(x), 𝔤⁰_t(x, y), ρ_t(x))`.
pub fn base_kernels(t: f64, x: f64, y: f64) -> Result<BaseKernels, LimitError> {
    if t.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(LimitError::NonpositiveTime(t));
    }
    Ok(BaseKernels { gauss: gauss(t, x), killed: gauss_killed(t, x, y), passage: passage(t, x) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Creep,
    Jump,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitLawSpec {
    pub b: f64,
    pub c: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub mode: Mode,
    #[serde(default)]
    pub beta: Option<f64>,
}

impl LimitLawSpec {
    pub fn creep(b: f64, c: f64, horizon: f64) -> Self {
        LimitLawSpec { b, c, horizon, mode: Mode::Creep, beta: None }
    }

    pub fn jump(b: f64, c: f64, horizon: f64, beta: f64) -> Self {
        LimitLawSpec { b, c, horizon, mode: Mode::Jump, beta: Some(beta) }
    }

    pub fn validate(&self) -> Result<(), LimitError> {
        for (name, v) in [("b", self.b), ("c", self.c), ("T", self.horizon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(LimitError::InvalidSpec(format!("{name} = {v} must be positive")));
            }
        }
        if self.mode == Mode::Jump {
            let beta = self.beta.ok_or_else(|| LimitError::InvalidSpec("jump mode needs beta".into()))?;
            if !(2.0..3.0).contains(&beta) {
                return Err(LimitError::BetaNotIntegrable(beta));
            }
        }
        Ok(())
    }
}

/// Evaluator for `q` (creep) or `q̆` (jump) with the normalizer cached.
#[derive(Clone, Debug)]
pub struct LimitLaw {
    pub spec: LimitLawSpec,
    jk: Option<JKernel>,
    norm: f64,
}

impl LimitLaw {
    pub fn new(spec: LimitLawSpec) -> Result<LimitLaw, LimitError> {
        spec.validate()?;
        let jk = match spec.mode {
            Mode::Creep => None,
            Mode::Jump => Some(JKernel::new(spec.beta.unwrap_or(2.5), 1e-8)?),
        };
        let mut law = LimitLaw { spec, jk, norm: 1.0 };
        law.norm = law.transit(spec.horizon, spec.b, -spec.c)?;
        Ok(law)
    }

    pub fn jump_kernel(&self) -> Option<&JKernel> {
        self.jk.as_ref()
    }

    /// Crossing kernel: `ρ_t(x - y)` (creep) or `J_t(x, y)` (jump), `y ≤ 0 ≤ x`.
    pub fn transit(&self, t: f64, x: f64, y: f64) -> Result<f64, LimitError> {
        match &self.jk {
            None => Ok(passage(t, x - y)),
            Some(j) => {
                if x <= 0.0 || y >= 0.0 {
                    Ok(0.0)
                } else {
                    j.eval(t, x, y)
                }
            }
        }
    }

    /// `ρ_T(b + c)` or `J_T(b, -c)`.
    pub fn normalizer(&self) -> f64 {
        self.norm
    }

    /// Transition density from `(s, x)` to `(t, y)`; `s = 0` means the
    /// start `b` (the value of `x` is ignored there).
    pub fn density(&self, s: f64, x: f64, t: f64, y: f64) -> Result<f64, LimitError> {
        let big_t = self.spec.horizon;
        let c = self.spec.c;
        if !(0.0 <= s && s < t && t < big_t) {
            return Err(LimitError::TimeOrder { s, t, horizon: big_t });
        }
        let (x, den) = if s == 0.0 { (self.spec.b, self.norm) } else { (x, f64::NAN) };
        if x < 0.0 && y > 0.0 {
            return Ok(0.0);
        }
        let h = t - s;
        let v = if x >= 0.0 {
            let den = if den.is_nan() { self.transit(big_t - s, x, -c)? } else { den };
            if den == 0.0 {
                return Ok(0.0);
            }
            if y > 0.0 {
                gauss_killed(h, x, y) * self.transit(big_t - t, y, -c)? / den
            } else {
                self.transit(h, x, y)? * gauss_killed(big_t - t, y, -c) / den
            }
        } else {
            let den = gauss_killed(big_t - s, x, -c);
            if den == 0.0 {
                return Ok(0.0);
            }
            gauss_killed(h, x, y) * gauss_killed(big_t - t, y, -c) / den
        };
        Ok(v.max(0.0))
    }

    /// `X_t` marginal density `q(0, b; t, x)`.
    pub fn marginal(&self, t: f64, x: f64) -> Result<f64, LimitError> {
        self.density(0.0, self.spec.b, t, x)
    }

    /// Density of `(X_{t_1}, ..., X_{t_k})` as a product of transition
    /// densities.
    pub fn fdd_density(&self, times: &[f64], values: &[f64]) -> Result<f64, LimitError> {
        if times.len() != values.len() || times.is_empty() {
            return Err(LimitError::InvalidSpec("times and values must be nonempty and equally long".into()));
        }
        let mut seen_negative = false;
        for &v in values {
            if v == 0.0 {
                return Err(LimitError::SignPattern);
            }
            if v > 0.0 && seen_negative {
                return Err(LimitError::SignPattern);
            }
            seen_negative |= v < 0.0;
        }
        let (mut s, mut x) = (0.0, self.spec.b);
        let mut p = 1.0;
        for (&t, &y) in times.iter().zip(values) {
            p *= self.density(s, x, t, y)?;
            s = t;
            x = y;
        }
        Ok(p)
    }

    /// Knots of the transition density in `y` and its natural scale.
    pub fn knots(&self, s: f64, x: f64, t: f64) -> (Vec<f64>, f64) {
        let x = if s == 0.0 { self.spec.b } else { x };
        let mut k = vec![0.0, x, -self.spec.c];
        k.sort_by(f64::total_cmp);
        k.dedup();
        let scale = (t - s).sqrt().max((self.spec.horizon - t).sqrt().min(1.0) * 0.25);
        (k, scale)
    }

    /// `∫ density(s, x; t, y) dy`.
    pub fn total_mass(&self, s: f64, x: f64, t: f64, tol: Tol) -> Result<Estimate, LimitError> {
        let (knots, scale) = self.knots(s, x, t);
        let mut err = None;
        let e = integrate_line(
            |y| match self.density(s, x, t, y) {
                Ok(v) => v,
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            },
            &knots,
            scale,
            tol,
        );
        err.map_or(Ok(e), Err)
    }

    /// `∫ q(s,x;u,z) q(u,z;t,y) dz - q(s,x;t,y)`.
    pub fn chapman_kolmogorov_residual(&self, s: f64, x: f64, u: f64, t: f64, y: f64, tol: Tol) -> Result<f64, LimitError> {
        let (knots, scale) = self.knots(s, x, u);
        let mut knots = knots;
        knots.push(y);
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let mut err = None;
        let lhs = integrate_line(
            |z| {
                if z == 0.0 {
                    return 0.0;
                }
                match self.density(s, x, u, z).and_then(|a| Ok(a * self.density(u, z, t, y)?)) {
                    Ok(v) => v,
                    Err(e) => {
                        err.get_or_insert(e);
                        0.0
                    }
                }
            },
            &knots,
            scale,
            tol,
        );
        if let Some(e) = err {
            return Err(e);
        }
        Ok(lhs.value - self.density(s, x, t, y)?)
    }
}

/// `∫_ℝ f`, with kinks at `knots` and tails decaying on `scale`.
pub fn integrate_line<F: FnMut(f64) -> f64>(mut f: F, knots: &[f64], scale: f64, tol: Tol) -> Estimate {
    let lo = knots[0];
    let hi = knots[knots.len() - 1];
    let part = Tol { abs: tol.abs / 3.0, ..tol };
    let left = quad::integrate_to_inf_scaled(|u| f(2.0 * lo - u), lo, 4.0 * scale, part);
    let mid = quad::integrate_panels(&mut f, knots, part);
    let right = quad::integrate_to_inf_scaled(&mut f, hi, 4.0 * scale, part);
    left.plus(mid).plus(right)
}

/// `|∫_0^∞ ρ_t(z) 𝔤⁰_s(z, y) dz - ρ_{t+s}(y)|`.
pub fn entrance_identity_residual(t: f64, s: f64, y: f64) -> f64 {
    let tol = Tol::new(1e-14, 1e-13);
    let scale = t.sqrt().max(s.sqrt());
    let mut knots = vec![0.0, y, t.sqrt()];
    knots.sort_by(f64::total_cmp);
    let lo = quad::integrate_panels(|z| passage(t, z) * gauss_killed(s, z, y), &knots, tol);
    let hi = quad::integrate_to_inf_scaled(|z| passage(t, z) * gauss_killed(s, z, y), knots[2], 8.0 * scale, tol);
    (lo.value + hi.value - passage(t + s, y)).abs()
}

/// `|∫_0^t ρ_{t-s}(x) ρ_s(y) ds - ρ_t(x + y)|`.
pub fn passage_identity_residual(t: f64, x: f64, y: f64) -> f64 {
    let tol = Tol::new(1e-14, 1e-13);
    let e = quad::integrate(|s| if s <= 0.0 || s >= t { 0.0 } else { passage(t - s, x) * passage(s, y) }, 0.0, t, tol);
    (e.value - passage(t, x + y)).abs()
}

/// Local-time killing kernel against its two limits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LocalTimeCheck {
    pub q_lambda: f64,
    /// `λ q^{(λ)}` when the endpoints straddle zero, `q^{(λ)}` otherwise.
    pub compared: f64,
    pub target: f64,
    pub rel_error: f64,
}

/// `∫_0^∞ ρ_t(a + u) e^{-λu} du`.
fn laplace_passage(lambda: f64, t: f64, a: f64) -> f64 {
    let tol = Tol::new(1e-16, 1e-12);
    let scale = (40.0 / lambda).min(a + 10.0 * t.sqrt());
    quad::integrate_to_inf_scaled(|u| passage(t, a + u) * (-lambda * u).exp(), 0.0, scale, tol).value
}

/// `q^{(λ)}_t(ξ, η)` for Brownian motion killed at rate `λ ℓ(t)`.
pub fn local_time_kernel(lambda: f64, t: f64, xi: f64, eta: f64) -> f64 {
    let through_zero = laplace_passage(lambda, t, xi.abs() + eta.abs());
    if xi * eta > 0.0 {
        gauss_killed(t, xi.abs(), eta.abs()) + through_zero
    } else {
        through_zero
    }
}

pub fn local_time_kill_check(lambda: f64, t: f64, xi: f64, eta: f64) -> Result<LocalTimeCheck, LimitError> {
    if t <= 0.0 {
        return Err(LimitError::NonpositiveTime(t));
    }
    if xi == 0.0 || lambda <= 0.0 {
        return Err(LimitError::InvalidSpec(format!("need xi != 0 and lambda > 0 (xi = {xi}, lambda = {lambda})")));
    }
    let q = local_time_kernel(lambda, t, xi, eta);
    let (compared, target) = if xi * eta > 0.0 {
        (q, gauss_killed(t, xi.abs(), eta.abs()))
    } else {
        (lambda * q, passage(t, xi.abs() + eta.abs()))
    };
    Ok(LocalTimeCheck { q_lambda: q, compared, target, rel_error: (compared - target).abs() / target })
}
