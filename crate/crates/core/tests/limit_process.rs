use avoidbridge::bridge_engine::sample_rng;
use avoidbridge::limit_process::jump::time_convolution;
use avoidbridge::limit_process::sampler::{bessel3_bridge, bessel_bridge_density, InverseCdf, LimitSampler, SamplerKind};
use avoidbridge::limit_process::{
    base_kernels, gauss, gauss_killed, local_time_kernel, passage, JKernel, LimitError, LimitLaw, LimitLawSpec, Mode,
};
use avoidbridge::quad::{integrate, integrate_panels, integrate_to_inf, Tol};
use avoidbridge::stats::ks_statistic;
use proptest::prelude::*;

const TIGHT: Tol = Tol { abs: 1e-14, rel: 1e-12, max_intervals: 2000 };

fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

#[test]
fn passage_density_integrates_to_the_erfc_law() {
    for x in [0.3, 1.0, 2.5] {
        for t in [0.2, 1.0, 4.0] {
            let cdf = integrate(|s| if s <= 0.0 { 0.0 } else { passage(s, x) }, 0.0, t, TIGHT).value;
            assert!((cdf - erfc(x / (2.0 * t).sqrt())).abs() < 1e-10, "x={x} t={t}");
        }
        let all = integrate_to_inf(|s| if s <= 0.0 { 0.0 } else { passage(s, x) }, 0.0, TIGHT).value;
        // Heavy s^{-3/2} tail; the quadrature still gets within 1e-6.
        assert!((all - 1.0).abs() < 1e-6);
    }
}

#[test]
fn killed_gaussian_is_the_reflection_difference() {
    for (t, x, y) in [(0.5, 0.2, 0.7), (2.0, 3.0, 0.1), (1e-3, 1.0, 1.01)] {
        let direct = gauss(t, y - x) - gauss(t, x + y);
        assert!((gauss_killed(t, x, y) - direct).abs() < 1e-14 * gauss(t, y - x).max(1.0));
    }
    // Survival probability of killed BM: erf(x / √(2t)).
    let surv = integrate_to_inf(|y| gauss_killed(0.8, 0.6, y), 0.0, TIGHT).value;
    assert!((surv - libm::erf(0.6 / 1.6f64.sqrt())).abs() < 1e-12);
    assert_eq!(base_kernels(0.0, 1.0, 1.0), Err(LimitError::NonpositiveTime(0.0)));
}

fn total_mass(law: &LimitLaw, t: f64, tol: Tol) -> f64 {
    let (knots, scale) = law.knots(0.0, law.spec.b, t);
    avoidbridge::limit_process::integrate_line(|y| law.marginal(t, y).unwrap_or(f64::NAN), &knots, scale, tol).value
}

#[test]
fn marginals_are_probability_densities() {
    for spec in [LimitLawSpec::creep(1.0, 1.0, 1.0), LimitLawSpec::creep(0.4, 1.5, 2.0)] {
        let law = LimitLaw::new(spec).expect("law");
        for t in [0.1, 0.5, 0.9 * spec.horizon] {
            let m = total_mass(&law, t, TIGHT);
            assert!((m - 1.0).abs() < 1e-9, "{spec:?} t={t}: mass {m}");
        }
    }
    let law = LimitLaw::new(LimitLawSpec::jump(1.0, 1.0, 1.0, 2.5)).expect("law");
    let m = total_mass(&law, 0.5, Tol::new(1e-8, 1e-6));
    assert!((m - 1.0).abs() < 1e-5, "jump t=0.5: mass {m}");
}

#[test]
fn creep_normalizer_is_a_passage_density() {
    let law = LimitLaw::new(LimitLawSpec::creep(0.7, 1.1, 1.5)).expect("law");
    assert!((law.normalizer() - passage(1.5, 1.8)).abs() < 1e-15);
    assert!(matches!(law.density(0.6, 0.1, 0.5, 0.2), Err(LimitError::TimeOrder { .. })));
    assert!(matches!(LimitLaw::new(LimitLawSpec::creep(-1.0, 1.0, 1.0)), Err(LimitError::InvalidSpec(_))));
    assert!(LimitLaw::new(LimitLawSpec::jump(1.0, 1.0, 1.0, 3.0)).is_err());
}

#[test]
fn fdd_of_one_time_is_the_marginal() {
    let law = LimitLaw::new(LimitLawSpec::creep(1.0, 1.0, 1.0)).expect("law");
    for y in [-0.8, -0.1, 0.3, 1.4] {
        let a = law.fdd_density(&[0.4], &[y]).expect("fdd");
        assert!((a - law.marginal(0.4, y).expect("marginal")).abs() < 1e-15);
    }
    assert_eq!(law.fdd_density(&[0.3, 0.6], &[-0.5, 0.5]), Err(LimitError::SignPattern));
}

#[test]
fn jump_kernel_rejects_bad_inputs() {
    assert!(matches!(JKernel::new(3.0, 1e-8), Err(LimitError::BetaNotIntegrable(_))));
    assert!(matches!(JKernel::new(1.9, 1e-8), Err(LimitError::BetaNotIntegrable(_))));
    let j = JKernel::new(2.5, 1e-8).expect("kernel");
    assert!(j.eval(1.0, -1.0, -1.0).is_err());
    assert!(j.eval(0.0, 1.0, -1.0).is_err());
    let v = j.eval(1.0, 1.0, -1.0).expect("value");
    assert!(v.is_finite() && v > 0.0);
}

#[test]
fn local_time_kernel_without_killing_is_gaussian() {
    for (xi, eta) in [(0.5, 1.0), (-0.5, 1.2), (1.0, -0.3), (-0.7, -0.2)] {
        let q = local_time_kernel(1e-12, 1.0, xi, eta);
        assert!((q - gauss(1.0, eta - xi)).abs() < 1e-9, "({xi}, {eta}): {q}");
    }
}

#[test]
fn local_time_kernel_integrates_to_the_laplace_transform() {
    // From 0, L_t has the law of |B_t|: E e^{-λ L_t} = e^{λ²t/2} erfc(λ √(t/2)).
    for (lambda, t) in [(0.5, 1.0), (2.0, 0.7), (10.0, 1.0)] {
        let f = |e: f64| local_time_kernel(lambda, t, 0.0, e);
        let mass = 2.0 * integrate_to_inf(f, 0.0, Tol::new(1e-13, 1e-10)).value;
        let want = (lambda * lambda * t / 2.0).exp() * erfc(lambda * (t / 2.0).sqrt());
        assert!((mass - want).abs() < 1e-7, "lambda={lambda}: {mass} vs {want}");
    }
}

#[test]
fn bessel_bridge_density_moments() {
    let (t, c, big_t) = (0.5, 1.0, 1.0);
    let f = |z: f64| bessel_bridge_density(t, z, c, big_t);
    let mass = integrate_to_inf(f, 0.0, TIGHT).value;
    assert!((mass - 1.0).abs() < 1e-10);
    let mean = integrate_to_inf(|z| z * f(z), 0.0, TIGHT).value;
    let n = 200_000;
    let draws: Vec<f64> = (0..n).map(|i| bessel3_bridge(0.0, c, big_t, &[t], &mut sample_rng(9, i))[0]).collect();
    let m = draws.iter().sum::<f64>() / n as f64;
    let sd = (draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
    assert!((m - mean).abs() < 5.0 * sd / (n as f64).sqrt(), "{m} vs {mean}");
}

#[test]
fn bessel_bridges_hit_their_endpoints() {
    let mut rng = sample_rng(2, 0);
    let v = bessel3_bridge(0.5, 2.0, 1.5, &[0.3, 0.9, 1.5], &mut rng);
    assert_eq!(v.len(), 3);
    assert_eq!(v[2], 2.0);
    assert!(v.iter().all(|&x| x > 0.0));
}

#[test]
fn samplers_follow_the_exact_marginal() {
    for spec in [LimitLawSpec::creep(1.0, 1.0, 1.0), LimitLawSpec::jump(1.0, 1.0, 1.0, 2.5)] {
        let law = LimitLaw::new(spec).expect("law");
        let m = 16;
        let k = m / 2;
        let draw = |kind| {
            let s = LimitSampler::new(&law, m, kind).expect("sampler");
            (0..1500).map(|i| s.sample(&mut sample_rng(77, i)).expect("path").values[k]).collect::<Vec<f64>>()
        };
        let mut runs = vec![("constructive", draw(SamplerKind::Constructive))];
        // Stepwise tables of the jump law cost a J evaluation per node.
        if spec.mode == Mode::Creep {
            runs.push(("sequential", draw(SamplerKind::Sequential)));
        }
        // Both against the exact marginal at t = 1/2.
        let (knots, _) = law.knots(0.0, spec.b, 0.5);
        let mut grid: Vec<f64> = (0..=120).map(|i| -6.0 + 12.0 * i as f64 / 120.0).collect();
        grid.extend(knots);
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        let mut cum = vec![0.0];
        for w in grid.windows(2) {
            let e = integrate(|y| law.marginal(0.5, y).unwrap_or(0.0), w[0], w[1], Tol::new(1e-7, 1e-6));
            cum.push(cum.last().expect("nonempty") + e.value);
        }
        let cdf = |x: f64| {
            let i = grid.partition_point(|&g| g <= x).clamp(1, grid.len() - 1);
            // Linear in each panel; the error is far below the KS threshold.
            let (a, b) = (grid[i - 1], grid[i]);
            cum[i - 1] + (cum[i] - cum[i - 1]) * ((x - a) / (b - a)).clamp(0.0, 1.0)
        };
        // 1.63 / √n is the 1% KS critical value.
        let crit = 1.63 / (1500f64).sqrt();
        for (name, mut xs) in runs {
            let d = ks_statistic(&mut xs, cdf);
            assert!(d < crit, "{:?} {name}: KS {d} vs {crit}", spec.mode);
        }
    }
}

#[test]
fn grids_must_be_fine_enough() {
    let law = LimitLaw::new(LimitLawSpec::creep(1.0, 1.0, 1.0)).expect("law");
    assert!(matches!(LimitSampler::new(&law, 8, SamplerKind::Constructive), Err(LimitError::GridTooCoarse(8))));
}

#[test]
fn inverse_cdf_of_an_exponential() {
    let knots: Vec<f64> = (0..=40).map(|i| i as f64 * 0.5).collect();
    let t = InverseCdf::build(|x| (-x).exp(), &knots, 1e-8).expect("table");
    assert!((t.total() - (1.0 - (-20f64).exp())).abs() < 1e-9);
    for v in [0.01, 0.3, 0.5, 0.9, 0.999] {
        let x = t.quantile(v);
        let exact = -(1.0 - v * t.total()).ln();
        assert!((x - exact).abs() < 1e-4, "v={v}: {x} vs {exact}");
        assert!((t.cdf(x) - v).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn time_convolution_matches_quadrature(t in 0.2f64..3.0, x in 0.05f64..2.0, w in 0.05f64..2.0, z in 0.05f64..2.0, eta in 0.05f64..2.0) {
        let direct = integrate_panels(
            |s| if s <= 0.0 || s >= t { 0.0 } else { gauss_killed(s, x, w) * gauss_killed(t - s, z, eta) },
            &[0.0, 0.5 * t, t],
            Tol::new(1e-15, 1e-11),
        ).value;
        let fast = time_convolution(t, x, w, z, eta);
        prop_assert!((fast - direct).abs() < 1e-9 * direct.abs().max(1e-6), "{} vs {}", fast, direct);
    }

    #[test]
    fn creep_densities_vanish_across_the_barrier(t in 0.05f64..0.95, y in 0.01f64..3.0) {
        let law = LimitLaw::new(LimitLawSpec::creep(1.0, 1.0, 1.0)).expect("law");
        // Once negative the path stays negative.
        prop_assert_eq!(law.density(0.3f64.min(t / 2.0), -0.5, t, y).expect("density"), 0.0);
        prop_assert!(law.marginal(t, y).expect("density") >= 0.0);
        prop_assert!(law.marginal(t, -y).expect("density") >= 0.0);
    }
}
