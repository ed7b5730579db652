//! Jump kernel `J_t(x, y)`.
//!
//! The time integral of `𝔤⁰_s(x, w) 𝔤⁰_{t-s}(-z, y)` has the closed form
//! [`time_convolution`]; what remains is a two-dimensional integral over
//! `w, z > 0`, done in the coordinates `r = w + z`, `u = w / r`. Near the
//! origin the integrand is `4 w z ρ_t(x + |y|)` to second order, which is
//! integrated analytically below `r0`.

use super::{passage, LimitError};
use crate::quad::{self, Tol};

/// 10-point Gauss-Legendre nodes and weights on `[-1, 1]` (positive half).
const GL_X: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_W: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_4,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// Gauss-Legendre on `[m - h, m + h]`.
fn gauss_legendre<F: Fn(f64) -> f64>(f: F, m: f64, h: f64) -> f64 {
    h * GL_X.iter().zip(GL_W).map(|(&x, w)| w * (f(m - h * x) + f(m + h * x))).sum::<f64>()
}

/// `∫_0^t 𝔤⁰_s(x, w) 𝔤⁰_{t-s}(z, η) ds` for `x, w, z, η > 0`.
///
/// With `G(u) = erfc(u / √(2t))` this is the mixed difference
/// `½ ∫_a^p ∫_b^q G''(u + v) dv du`. Short ranges are integrated directly,
/// since the erfc differences cancel there.
pub fn time_convolution(t: f64, x: f64, w: f64, z: f64, eta: f64) -> f64 {
    let s = (2.0 * t).sqrt();
    let a = (w - x).abs();
    let b = (z - eta).abs();
    let p = w + x;
    let q = z + eta;
    // Centers and half-widths of [a, p] and [b, q], exact in floating point.
    let (mu, hu) = (w.max(x), w.min(x));
    let (mv, hv) = (z.max(eta), z.min(eta));
    let short = 0.25 * s;
    let c1 = 2.0 / (s * std::f64::consts::PI.sqrt());
    // -G'(u) and G''(u)
    let d1 = |u: f64| c1 * (-(u / s) * (u / s)).exp();
    let d2 = |u: f64| c1 * 2.0 * u / (s * s) * (-(u / s) * (u / s)).exp();
    // K(u) = G(u + b) - G(u + q)
    let k = |u: f64| {
        if hv <= short {
            gauss_legendre(|v| d1(u + v), mv, hv)
        } else {
            libm::erfc((u + b) / s) - libm::erfc((u + q) / s)
        }
    };
    if hu <= short {
        // -K'(u) = G'(u + q) - G'(u + b)
        let h = |u: f64| {
            if hv <= short {
                gauss_legendre(|v| d2(u + v), mv, hv)
            } else {
                d1(u + b) - d1(u + q)
            }
        };
        0.5 * gauss_legendre(h, mu, hu)
    } else {
        0.5 * (k(a) - k(p))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JKernel {
    pub beta: f64,
    /// Relative tolerance of each evaluation.
    pub rel_tol: f64,
}

impl JKernel {
    pub fn new(beta: f64, rel_tol: f64) -> Result<JKernel, LimitError> {
        if !(2.0..3.0).contains(&beta) {
            return Err(LimitError::BetaNotIntegrable(beta));
        }
        Ok(JKernel { beta, rel_tol })
    }

    /// Cutoff below which the second-order expansion is used.
    fn r0(t: f64, x: f64, eta: f64) -> f64 {
        (1e-3 * x.min(eta).min(t.sqrt())).max(1e-12)
    }

    /// `∫_0^1 I(r u, r (1 - u)) du`.
    pub fn angular(&self, t: f64, x: f64, eta: f64, r: f64) -> f64 {
        let mut pts = vec![0.0];
        for k in [x / r, 1.0 - eta / r] {
            if k > 0.0 && k < 1.0 {
                pts.push(k);
            }
        }
        pts.push(1.0);
        pts.sort_by(f64::total_cmp);
        let tol = Tol::new(1e-300, 0.01 * self.rel_tol);
        quad::integrate_panels(|u| time_convolution(t, x, r * u, r * (1.0 - u), eta), &pts, tol).value
    }

    /// `β r^{-β} ∫_0^1 I du`, the density in `r` of the jump law (up to `J`).
    pub fn radial(&self, t: f64, x: f64, eta: f64, r: f64) -> f64 {
        self.beta * r.powf(-self.beta) * self.angular(t, x, eta, r)
    }

    /// Mass of `r < r0` from the expansion.
    fn core(&self, t: f64, x: f64, eta: f64, r0: f64) -> f64 {
        let b = self.beta;
        4.0 * passage(t, x + eta) * b / 6.0 * r0.powf(3.0 - b) / (3.0 - b)
    }

    /// Radial knots: cutoff, kinks at `x`, `η`, `x + η`.
    pub fn radial_knots(t: f64, x: f64, eta: f64) -> Vec<f64> {
        let mut k = vec![Self::r0(t, x, eta), x.min(eta), x.max(eta), x + eta];
        k.dedup();
        k
    }

    /// `J_t(x, y)` for `y < 0 < x`.
    pub fn eval(&self, t: f64, x: f64, y: f64) -> Result<f64, LimitError> {
        if t <= 0.0 {
            return Err(LimitError::NonpositiveTime(t));
        }
        if !(x > 0.0 && y < 0.0) {
            return Err(LimitError::InvalidSpec(format!("J needs y < 0 < x, got x = {x}, y = {y}")));
        }
        let eta = -y;
        let knots = Self::radial_knots(t, x, eta);
        let r0 = knots[0];
        let core = self.core(t, x, eta, r0);
        let tol = Tol::new(1e-300, self.rel_tol);
        // Log scale up to the first kink, where the r^{2-β} growth lives.
        let near = quad::integrate(
            |v| {
                let r = v.exp();
                r * self.radial(t, x, eta, r)
            },
            r0.ln(),
            knots[1].ln(),
            tol,
        );
        let mid = quad::integrate_panels(|r| self.radial(t, x, eta, r), &knots[1..], tol);
        let last = knots[knots.len() - 1];
        let far = quad::integrate_to_inf_scaled(|r| self.radial(t, x, eta, r), last, 8.0 * t.sqrt() + last, tol);
        let total = core + near.value + mid.value + far.value;
        let err = near.error + mid.error + far.error;
        if err > 1e3 * self.rel_tol * total.abs() {
            return Err(LimitError::TolNotMet { achieved: err / total.abs(), requested: self.rel_tol });
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::limit_process::gauss_killed;

    #[test]
    fn convolution_matches_quadrature() {
        let (t, x, w, z, eta) = (1.3, 0.8, 0.5, 1.7, 0.6);
        let direct = quad::integrate(
            |s| if s <= 0.0 || s >= t { 0.0 } else { gauss_killed(s, x, w) * gauss_killed(t - s, z, eta) },
            0.0,
            t,
            Tol::new(1e-15, 1e-13),
        );
        assert!((direct.value - time_convolution(t, x, w, z, eta)).abs() < 1e-12);
    }

    #[test]
    fn convolution_small_arguments_relative() {
        // For small w, z the convolution is 4 w z ρ_t(x + η) to leading order.
        let (t, x, eta) = (0.7, 1.1, 0.4);
        for h in [1e-3, 1e-6, 1e-9] {
            let v = time_convolution(t, x, h, 2.0 * h, eta);
            let lead = 8.0 * h * h * passage(t, x + eta);
            assert!((v / lead - 1.0).abs() < 50.0 * h, "h={h}: {v} vs {lead}");
        }
    }

    #[test]
    fn beta_three_rejected() {
        assert!(matches!(JKernel::new(3.0, 1e-8), Err(LimitError::BetaNotIntegrable(_))));
    }

    #[test]
    fn rises_then_decays_in_time() {
        // The integrand depends on t, so J_t is not monotone: it vanishes
        // as t -> 0 and as t -> infinity.
        let j = JKernel::new(2.5, 1e-9).unwrap();
        let v: Vec<f64> = [0.05, 0.25, 1.0, 4.0, 64.0].iter().map(|&t| j.eval(t, 1.0, -1.0).unwrap()).collect();
        assert!(v[0] < v[1] && v[1] < v[2]);
        assert!(v[2] > v[3] && v[3] > v[4]);
    }
}
