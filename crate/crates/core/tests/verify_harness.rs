use avoidbridge::bridge_engine::{BridgeEngine, BridgeSpec};
use avoidbridge::exec::Execution;
use avoidbridge::killed_kernel::WindowPolicy;
use avoidbridge::limit_process::Mode;
use avoidbridge::verify_harness::{
    constant_suite, dichotomy_suite, marginal_convergence_suite, tightness_suite, CheckKind, ConstantParams,
    DichotomyParams, ExperimentReport, FractionCheck, FractionStat, MarginalParams, RatioKind, Relation, Row, SuiteCtx,
    SuiteError, TightnessParams, Verdict,
};
use avoidbridge::walk_laws::{heavy_example, lace};
use proptest::prelude::*;

fn dichotomy_params() -> DichotomyParams {
    DichotomyParams {
        avoid: vec![0],
        b: 1.0,
        c: 1.0,
        horizon: 1.0,
        n_list: vec![50, 100],
        eps: vec![0.1, 0.3],
        k: vec![1.0],
        eta: vec![1.0],
        samples: 400,
        checks: vec![FractionCheck { statistic: FractionStat::Ii, param: 1.0, relation: CheckKind::AtMost, threshold: Some(0.5) }],
    }
}

#[test]
fn suites_are_deterministic() {
    let law = heavy_example(2.5, 1.0);
    let p = dichotomy_params();
    let a = dichotomy_suite(&law, &p, &SuiteCtx::default()).expect("suite");
    let b = dichotomy_suite(&law, &p, &SuiteCtx::default()).expect("suite");
    assert_eq!(a, b);
    let seq = SuiteCtx { exec: Execution::Sequential, ..SuiteCtx::default() };
    let c = dichotomy_suite(&law, &p, &seq).expect("suite");
    assert_eq!(a.report, c.report);
    let other = SuiteCtx { seed: 2, ..SuiteCtx::default() };
    let d = dichotomy_suite(&law, &p, &other).expect("suite");
    assert_ne!(a.report.rows, d.report.rows);
}

#[test]
fn dichotomy_fractions_recount() {
    let law = heavy_example(2.5, 1.0);
    let p = dichotomy_params();
    let ctx = SuiteCtx::default();
    let rep = dichotomy_suite(&law, &p, &ctx).expect("suite").report;
    for &big_n in &p.n_list {
        let spec = BridgeSpec::scaled(&law, &[0], 1.0, 1.0, 1.0, big_n).expect("spec");
        let eng = BridgeEngine::new(&law, &spec, WindowPolicy::default(), Execution::Sequential).expect("engine");
        let paths = eng.sample_many(p.samples, ctx.derive_seed(&format!("dichotomy/{big_n}")), Execution::Sequential).expect("paths");
        let lam = (law.sigma2() * big_n as f64).sqrt();
        let big = paths.iter().filter(|q| q.stats().expect("crosses").crossing_step() as f64 >= 0.3 * lam).count();
        let small = paths
            .iter()
            .filter(|q| {
                let s = q.stats().expect("crosses");
                (-s.overshoot as f64) < 0.1 * lam && (s.prejump as f64) < 0.1 * lam
            })
            .count();
        let find = |name: &str| rep.rows.iter().find(|r| r.statistic == name && r.n == Some(big_n as u64)).expect("row").value;
        assert_eq!(find("i(eps=0.3)"), big as f64 / p.samples as f64);
        assert_eq!(find("iii(eps=0.1)"), small as f64 / p.samples as f64);
    }
    let checked = rep.rows.iter().filter(|r| r.statistic == "ii(K=1)").collect::<Vec<_>>();
    assert!(checked.iter().all(|r| r.relation == Relation::Le && r.threshold == Some(0.5)));
    let band = checked[0].band.expect("mc band");
    assert!(band[0] <= checked[0].value && checked[0].value <= band[1]);
    assert_eq!(rep.provenance.seeds.len(), 2);
    assert!(rep.mc_band.is_some());
}

#[test]
fn marginal_suite_rows_and_tables() {
    let p = MarginalParams { avoid: vec![0], b: 1.0, c: 1.0, horizon: 1.0, t: 0.5, n_list: vec![50, 100, 200], mode: Mode::Creep, tv_final: 0.2 };
    let out = marginal_convergence_suite(&lace(), &p, &SuiteCtx::default()).expect("suite");
    let tv: Vec<f64> = out.report.rows.iter().filter(|r| r.statistic == "tv").map(|r| r.value).collect();
    assert_eq!(tv.len(), 3);
    assert!(tv.iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(out.report.rows.iter().filter(|r| r.statistic == "tv_decrease").count(), 2);
    assert!(out.report.mc_band.is_none());
    assert!(!out.tables.is_empty());
    let bad = MarginalParams { t: 1.5, ..p };
    assert!(matches!(marginal_convergence_suite(&lace(), &bad, &SuiteCtx::default()), Err(SuiteError::Unsupported(_))));
}

#[test]
fn constant_suite_reports_spread() {
    let p = ConstantParams { avoid: vec![0], b: 1.0, c: 1.0, n_list: vec![100, 200, 400], ratio: RatioKind::A, max_spread: 0.2 };
    let rep = constant_suite(&lace(), &p, &SuiteCtx::default()).expect("suite").report;
    let ratios: Vec<f64> = rep.rows.iter().filter(|r| r.statistic == "ratio_a").map(|r| r.value).collect();
    assert_eq!(ratios.len(), 3);
    let mean = ratios.iter().sum::<f64>() / 3.0;
    let spread = ratios.iter().map(|r| (r / mean - 1.0).abs()).fold(0.0, f64::max);
    let row = rep.rows.iter().find(|r| r.statistic == "ratio_a_spread").expect("spread row");
    assert!(row.value >= 0.0 && row.value <= 2.0 * spread + 1e-12);
    assert_eq!(RatioKind::for_law(&lace()), RatioKind::A);
    assert_eq!(RatioKind::for_law(&heavy_example(2.5, 1.0)), RatioKind::B);
    assert_eq!(RatioKind::for_law(&heavy_example(3.0, 1.0)), RatioKind::C);
}

#[test]
fn tightness_suite_is_monotone_in_delta() {
    let p = TightnessParams {
        avoid: vec![0],
        b: 1.0,
        c: 1.0,
        horizon: 1.0,
        big_n: 200,
        deltas: vec![0.25, 0.0625, 0.015625],
        eps: 0.5,
        samples: 300,
        threshold: 0.2,
        exclude_jump: false,
    };
    let rep = tightness_suite(&lace(), &p, &SuiteCtx::default()).expect("suite").report;
    let f: Vec<f64> = rep.rows.iter().filter(|r| r.columns.contains_key("delta") && !r.statistic.ends_with("smallest_delta")).map(|r| r.value).collect();
    assert_eq!(f.len(), 3);
    // The modulus shrinks with δ on every path, so the fractions cannot grow.
    assert!(f.windows(2).all(|w| w[1] <= w[0]), "{f:?}");
}

#[test]
fn report_serialization_round_trips() {
    let rows = vec![
        Row::check(Some(10), "x", 0.1, Relation::Lt, 0.2),
        Row::info(None, "y", 3.0).with("delta", 0.5),
        Row::check(Some(20), "z", 0.3, Relation::Ge, 0.5).mc(7, 30, 100),
    ];
    let rep = ExperimentReport::new("demo", rows);
    assert!(!rep.passed);
    assert_eq!(rep.failures().count(), 1);
    assert_eq!(rep.provenance.seeds, vec![7]);
    let json = serde_json::to_string(&rep).expect("json");
    assert!(json.contains("\"relation\":\"<\""));
    let back: ExperimentReport = serde_json::from_str(&json).expect("parse");
    assert_eq!(back, rep);
}

#[test]
fn nonfinite_values_fail_checks() {
    assert_eq!(Row::check(None, "nan", f64::NAN, Relation::Lt, 1.0).verdict, Verdict::Fail);
    assert_eq!(Row::check(None, "inf", f64::INFINITY, Relation::Gt, 1.0).verdict, Verdict::Fail);
    assert!(Row::info(None, "nan", f64::NAN).passed());
}

#[test]
fn derived_seeds_depend_on_tag_and_master() {
    let a = SuiteCtx::default();
    let b = SuiteCtx { seed: 9, ..SuiteCtx::default() };
    assert_eq!(a.derive_seed("t"), a.derive_seed("t"));
    assert_ne!(a.derive_seed("t"), a.derive_seed("u"));
    assert_ne!(a.derive_seed("t"), b.derive_seed("t"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn mc_bands_cover_the_estimate(k in 0usize..500, extra in 0usize..500) {
        let n = k + extra.max(1);
        let r = Row::info(None, "f", k as f64 / n as f64).mc(1, k, n);
        let [lo, hi] = r.band.expect("band");
        prop_assert!(0.0 <= lo && lo <= r.value && r.value <= hi && hi <= 1.0);
    }
}
