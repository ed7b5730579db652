use std::collections::BTreeMap;

use avoidbridge::bridge_engine::sample_rng;
use avoidbridge::walk_laws::{
    heavy_example, lace, make_heavy_tail_law, make_lattice_law, srw, HeavyTailParams, LawError, LawKind,
    NormingSequence, SlowlyVarying,
};
use proptest::prelude::*;

const ZETA_2_5: f64 = 1.341_487_257_250_917;
const ZETA_1_5: f64 = 2.612_375_348_685_488;
const ZETA_3: f64 = 1.202_056_903_159_594_3;
const ZETA_2: f64 = std::f64::consts::PI * std::f64::consts::PI / 6.0;

/// `Σ_{w ≥ from} w^{-s}` from a known zeta value.
fn zeta_tail(zeta: f64, s: f64, from: i64) -> f64 {
    zeta - (1..from).map(|w| (w as f64).powf(-s)).sum::<f64>()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn lattice_moments() {
    assert_eq!(lace().sigma2(), 2.0);
    assert_eq!(srw().sigma2(), 1.0);
    assert_eq!(lace().kind(), LawKind::Lattice);
    for law in [lace(), srw()] {
        assert!(law.mean().abs() < 1e-15);
        assert_eq!(law.cdf(-3), 0.0);
        assert!((law.cdf(2) - 1.0).abs() < 1e-15);
    }
    assert!((lace().pmf(-2) - 1.0 / 6.0).abs() < 1e-16);
    assert_eq!(lace().pmf(0), 0.0);
}

/// Heavy law with `L = 1`, `w0 = 3`, right shape `{1: 1, 2: 1}`: the first
/// and second tail moments are zeta tails.
fn heavy_moments(beta: f64, zeta_b: f64, zeta_b1: f64) -> (f64, f64) {
    let g3 = 3f64.powf(-beta);
    let m1 = 3.0 * g3 + zeta_tail(zeta_b, beta, 4);
    // Σ_{w≥4} (2w - 1) w^{-β}
    let m2 = 9.0 * g3 + 2.0 * zeta_tail(zeta_b1, beta - 1.0, 4) - zeta_tail(zeta_b, beta, 4);
    let r = m1 / 3.0;
    (r, m2 + 5.0 * r)
}

#[test]
fn heavy_tail_moments_match_zeta_oracle() {
    for (beta, zb, zb1) in [(2.5, ZETA_2_5, ZETA_1_5), (3.0, ZETA_3, ZETA_2)] {
        let law = heavy_example(beta, 1.0);
        let (r, var) = heavy_moments(beta, zb, zb1);
        assert!(close(law.pmf(1), r, 1e-10), "beta {beta}: pmf(1) {} vs {r}", law.pmf(1));
        assert!(close(law.pmf(2), r, 1e-10));
        assert!(close(law.sigma2(), var, 1e-9), "beta {beta}: sigma2 {} vs {var}", law.sigma2());
        assert!(law.mean().abs() < 1e-12);
        assert!(close(law.cdf(-10), 10f64.powf(-beta), 1e-12));
        assert!(close(law.pmf(-3), 3f64.powf(-beta) - 4f64.powf(-beta), 1e-12));
        assert_eq!(law.pmf(-2), 0.0);
    }
    assert!(heavy_example(3.0, 1.0).left_third_moment_infinite());
    assert!(heavy_example(2.5, 1.0).left_third_moment_infinite());
}

#[test]
fn heavy_tail_sampling_frequencies() {
    let law = heavy_example(2.5, 1.0);
    let n = 400_000;
    let mut rng = sample_rng(5, 0);
    let draws: Vec<i64> = (0..n).map(|_| law.sample(&mut rng)).collect();
    for (pred, p) in [
        (Box::new(|s: i64| s <= -10) as Box<dyn Fn(i64) -> bool>, law.cdf(-10)),
        (Box::new(|s: i64| s == 1), law.pmf(1)),
        (Box::new(|s: i64| s == 0), law.pmf(0)),
        (Box::new(|s: i64| s <= -3), law.cdf(-3)),
    ] {
        let f = draws.iter().filter(|&&s| pred(s)).count() as f64 / n as f64;
        let sd = (p * (1.0 - p) / n as f64).sqrt();
        assert!((f - p).abs() < 5.0 * sd, "freq {f} vs {p}");
    }
    let mean = draws.iter().map(|&s| s as f64).sum::<f64>() / n as f64;
    assert!(mean.abs() < 0.05);
}

#[test]
fn invalid_laws_are_rejected() {
    let skew = BTreeMap::from([(-1, 0.5), (2, 0.5)]);
    assert!(matches!(make_lattice_law(&skew), Err(LawError::NonzeroMean(_))));
    let even = BTreeMap::from([(-2, 0.5), (2, 0.5)]);
    assert!(matches!(make_lattice_law(&even), Err(LawError::Reducible(2))));
    let short = BTreeMap::from([(-1, 0.4), (1, 0.4)]);
    assert!(matches!(make_lattice_law(&short), Err(LawError::NotNormalized(_))));
    let neg = BTreeMap::from([(-1, 1.5), (1, -0.5)]);
    assert!(make_lattice_law(&neg).is_err());

    let p = |beta, w0| HeavyTailParams { beta, l: SlowlyVarying::constant(1.0), w0, right_shape: BTreeMap::from([(1, 1.0)]) };
    assert!(matches!(make_heavy_tail_law(&p(3.5, 3)), Err(LawError::BetaOutOfRange(_))));
    assert!(matches!(make_heavy_tail_law(&p(2.5, 1)), Err(LawError::CutoffTooSmall(1))));
    assert!(matches!(make_heavy_tail_law(&p(2.0, 3)), Err(LawError::InfiniteVariance)));
    let big = HeavyTailParams { l: SlowlyVarying::constant(50.0), ..p(2.5, 3) };
    assert!(matches!(make_heavy_tail_law(&big), Err(LawError::CannotBalanceMean(_))));
}

#[test]
fn beta_two_with_log_correction() {
    let p = HeavyTailParams {
        beta: 2.0,
        l: SlowlyVarying::log_power(1.0, -2.0),
        w0: 3,
        right_shape: BTreeMap::from([(1, 1.0), (2, 1.0)]),
    };
    let law = make_heavy_tail_law(&p).expect("finite variance");
    assert!(law.sigma2().is_finite());
    assert!(law.mean().abs() < 1e-10);
}

#[test]
fn norming_is_square_root_variance() {
    let n = NormingSequence::for_law(&lace());
    assert!((n.value(800.0) - 40.0).abs() < 1e-12);
    assert!(!n.is_stable());
}

#[test]
fn digests_identify_laws() {
    assert_eq!(lace().digest(), lace().digest());
    assert_ne!(lace().digest(), srw().digest());
    assert_ne!(heavy_example(2.5, 1.0).digest(), heavy_example(3.0, 1.0).digest());
}

fn balanced_law() -> impl Strategy<Value = BTreeMap<i64, f64>> {
    (prop::collection::vec(0.05f64..1.0, 3), prop::collection::vec(0.05f64..1.0, 3), 0.0f64..0.5).prop_map(|(neg, pos, zero)| {
        let mneg: f64 = neg.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum();
        let mpos: f64 = pos.iter().enumerate().map(|(i, w)| (i + 1) as f64 * w).sum();
        let mut pmf = BTreeMap::new();
        for (i, w) in neg.iter().enumerate() {
            pmf.insert(-(i as i64 + 1), *w);
        }
        for (i, w) in pos.iter().enumerate() {
            pmf.insert(i as i64 + 1, w * mneg / mpos);
        }
        pmf.insert(0, zero);
        let total: f64 = pmf.values().sum();
        pmf.values_mut().for_each(|v| *v /= total);
        pmf
    })
}

proptest! {
    #[test]
    fn lattice_law_invariants(pmf in balanced_law()) {
        let law = make_lattice_law(&pmf).expect("balanced law is valid");
        let direct: f64 = pmf.iter().map(|(k, p)| (k * k) as f64 * p).sum();
        prop_assert!((law.sigma2() - direct).abs() < 1e-12);
        for d in -5..=5 {
            prop_assert!((law.cdf(d) + law.sf(d + 1) - 1.0).abs() < 1e-14);
            prop_assert!((law.pmf(d) - pmf.get(&d).copied().unwrap_or(0.0)).abs() < 1e-15);
        }
        let r = law.reflected();
        prop_assert!((r.sigma2() - law.sigma2()).abs() < 1e-14);
        prop_assert!((r.pmf(-2) - law.pmf(2)).abs() < 1e-16);
    }

    #[test]
    fn survival_inverts(beta in 2.01f64..3.0, v in 1e-9f64..0.02) {
        let law = heavy_example(beta, 1.0);
        let tail = law.left_tail().expect("heavy law has a tail");
        prop_assume!(v < tail.mass());
        let w = tail.invert_survival(v);
        prop_assert!(tail.survival(w as f64) >= v);
        prop_assert!(tail.survival((w + 1) as f64) < v);
    }

    #[test]
    fn heavy_laws_are_centred(beta in 2.05f64..=3.0, scale in 0.2f64..2.0) {
        let law = heavy_example(beta, scale);
        prop_assert!(law.mean().abs() < 1e-10);
        prop_assert!((law.cdf(-7) - scale * 7f64.powf(-beta)).abs() < 1e-12);
        prop_assert!(law.sigma2() > 0.0 && law.sigma2().is_finite());
    }
}
