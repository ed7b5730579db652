use std::collections::BTreeMap;

use avoidbridge::exec::Execution;
use avoidbridge::killed_kernel::hitting::{hitting_distribution_halfline, hitting_time_resolved, HitSource, HittingOptions};
use avoidbridge::killed_kernel::potential::{green_function_origin, green_series_oracle, potential_function, potential_oracle};
use avoidbridge::killed_kernel::{
    forward_row, killed_transition_table, BackwardTable, KernelError, KilledWalk, KillingSet, Sources, TableOptions,
    Window, WindowPolicy,
};
use avoidbridge::walk_laws::{heavy_example, lace, make_lattice_law, srw, IncrementLaw};
use proptest::prelude::*;

/// `p^k_B(x, y)` for all `k ≤ n` by summing over every step sequence.
fn brute_force(law: &IncrementLaw, b: &[i64], x: i64, n: usize) -> Vec<BTreeMap<i64, f64>> {
    let steps: Vec<(i64, f64)> = (-3..=3).map(|d| (d, law.pmf(d))).filter(|&(_, p)| p > 0.0).collect();
    let mut layers = vec![BTreeMap::from([(x, 1.0)])];
    for _ in 0..n {
        let mut next = BTreeMap::new();
        for (&z, &w) in layers.last().expect("nonempty") {
            for &(d, p) in &steps {
                if !b.contains(&(z + d)) {
                    *next.entry(z + d).or_insert(0.0) += w * p;
                }
            }
        }
        layers.push(next);
    }
    layers
}

fn table(law: &IncrementLaw, b: &KillingSet, n: usize, x: i64) -> avoidbridge::killed_kernel::KernelTable {
    killed_transition_table(law, b, n, &Sources::List(vec![x]), &TableOptions::default()).expect("table")
}

#[test]
fn kernel_matches_enumeration() {
    for (law, b, x) in [(lace(), vec![0], 3), (lace(), vec![-1, 2], 1), (srw(), vec![0], 2), (lace(), vec![0, 1, 5], -2), (lace(), vec![0, 4], 0)] {
        let n = 9;
        let t = table(&law, &KillingSet::finite(&b), n, x);
        let exact = brute_force(&law, &b, x, n);
        for (k, layer) in exact.iter().enumerate() {
            for y in -30..=30 {
                let want = layer.get(&y).copied().unwrap_or(0.0);
                let got = t.p(k, x, y).expect("source stored");
                assert!((got - want).abs() < 1e-15, "B={b:?} k={k} y={y}: {got} vs {want}");
            }
            let alive: f64 = layer.values().sum();
            assert!((t.alive_mass(k, x).expect("row") - alive).abs() < 1e-14);
            assert!((alive + t.killed_mass(k, x).expect("row") + t.leaked_mass(k, x).expect("row") - 1.0).abs() < 1e-13);
        }
    }
}

#[test]
fn backward_table_agrees_with_forward_rows() {
    let law = heavy_example(2.5, 1.0);
    let b = KillingSet::origin();
    let n = 40;
    let w = WindowPolicy::default().resolve(&law, &b, n, &[]);
    let walk = KilledWalk::new(&law, &b, w, Execution::Sequential);
    let back = BackwardTable::build(&walk, -3, n);
    for x in [1, 5, 17] {
        let row = forward_row(&walk, x, n);
        for k in [1, 7, 40] {
            let f = row.steps[k].get(w.index(-3));
            let g = back.get(k, x);
            assert!((f - g).abs() <= 1e-12 * f.max(1e-300), "x={x} k={k}: {f} vs {g}");
        }
    }
}

#[test]
fn chapman_kolmogorov() {
    let law = lace();
    let b = KillingSet::finite(&[0, 3]);
    let (j, k) = (12, 17);
    let w = WindowPolicy::default().resolve(&law, &b, j + k, &[]);
    let walk = KilledWalk::new(&law, &b, w, Execution::Sequential);
    let row = forward_row(&walk, 5, j + k);
    let back = BackwardTable::build(&walk, -4, k);
    let mid: f64 = (w.lo..=w.hi).map(|z| row.steps[j].get(w.index(z)) * back.get(k, z)).sum();
    let direct = row.steps[j + k].get(w.index(-4));
    assert!(((mid - direct) / direct).abs() < 1e-12, "{mid} vs {direct}");
}

#[test]
fn parallel_and_sequential_agree() {
    let law = heavy_example(3.0, 1.0);
    let b = KillingSet::origin();
    let n = 60;
    let w = WindowPolicy::default().resolve(&law, &b, n, &[]);
    let seq = BackwardTable::build(&KilledWalk::new(&law, &b, w, Execution::Sequential), -1, n);
    let par = BackwardTable::build(&KilledWalk::new(&law, &b, w, Execution::Parallel), -1, n);
    for k in [0, 1, 30, 60] {
        for x in (w.lo..=w.hi).step_by(7) {
            assert_eq!(seq.get(k, x), par.get(k, x));
        }
    }
}

#[test]
fn small_window_is_reported() {
    let opts = TableOptions { window: WindowPolicy::Fixed(Window::new(-5, 5)), ..TableOptions::default() };
    let r = killed_transition_table(&lace(), &KillingSet::origin(), 50, &Sources::List(vec![2]), &opts);
    assert!(matches!(r, Err(KernelError::WindowTooSmall { .. })));
    let r = killed_transition_table(&lace(), &KillingSet::finite(&[]), 5, &Sources::All, &TableOptions::default());
    assert!(matches!(r, Err(KernelError::EmptyKillingSet)));
    let r = killed_transition_table(&lace(), &KillingSet::origin(), 0, &Sources::All, &TableOptions::default());
    assert!(matches!(r, Err(KernelError::ZeroHorizon)));
}

#[test]
fn simple_walk_potential_is_abs() {
    let pot = potential_function(&srw(), 40, 1e-10).expect("potential");
    for x in -20..=20 {
        assert!((pot.a(x) - x.abs() as f64).abs() < 1e-6);
    }
}

#[test]
fn lace_potential_matches_partial_sums() {
    let law = lace();
    let pot = potential_function(&law, 60, 1e-10).expect("potential");
    let xs = [1, 2, 5, 11];
    let oracle = potential_oracle(&law, &xs, 500);
    for (x, o) in xs.iter().zip(oracle) {
        assert!((pot.a(*x) - o).abs() < 1e-4, "a({x}) = {} vs {o}", pot.a(*x));
        assert!((pot.a(*x) - pot.a(-*x)).abs() < 1e-9, "{} vs {}", pot.a(*x), pot.a(-*x));
    }
    // a(x) - |x|/σ² tends to a constant.
    let d = pot.lambda(50) - pot.lambda(40);
    assert!(d.abs() < 1e-8);
    for (x, y) in [(3, 2), (1, -4)] {
        let g = green_function_origin(&pot, x, y).expect("in range");
        let (_, lim) = green_series_oracle(&law, x, y, 300);
        assert!((g - lim).abs() < 1e-3 * g, "g({x},{y}) = {g} vs {lim}");
    }
}

#[test]
fn halfline_hitting_from_srw_is_the_origin() {
    let h = hitting_distribution_halfline(&srw(), HitSource::At(7), &HittingOptions::default()).expect("hitting law");
    assert!((h.at(0) - 1.0).abs() < 1e-10);
    assert!(h.at(-1).abs() < 1e-12);
}

#[test]
fn halfline_hitting_matches_time_resolved_marginal() {
    let law = lace();
    let x = 4;
    let h = hitting_distribution_halfline(&law, HitSource::At(x), &HittingOptions::default()).expect("hitting law");
    assert!((h.total() - 1.0).abs() < 1e-9);
    // The walk has entered by time n except with probability O(n^{-1/2}).
    let tr = hitting_time_resolved(&law, x, 4000, 1);
    let m = tr.marginal();
    let missing = 1.0 - m.iter().sum::<f64>();
    for (i, p) in m.iter().enumerate() {
        assert!((p - h.at(-(i as i64))).abs() < missing + 1e-9, "y=-{i}: {p} vs {}", h.at(-(i as i64)));
    }
    let inf = hitting_distribution_halfline(&law, HitSource::Infinity, &HittingOptions::default()).expect("stabilizes");
    assert!((inf.total() - 1.0).abs() < 1e-6);
    assert!(inf.stabilization.expect("tv recorded") < 1e-3);
}

fn symmetric_law() -> impl Strategy<Value = IncrementLaw> {
    (0.1f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(a, b, z)| {
        let t = 2.0 * (a + b) + z;
        make_lattice_law(&BTreeMap::from([(-2, b / t), (-1, a / t), (0, z / t), (1, a / t), (2, b / t)])).expect("symmetric")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn symmetric_walks_are_reversible(law in symmetric_law(), b in prop::collection::btree_set(-3i64..=3, 1..4), x in -6i64..=6, y in -6i64..=6, k in 1usize..12) {
        prop_assume!(!b.contains(&x) && !b.contains(&y));
        let b: Vec<i64> = b.into_iter().collect();
        let kb = KillingSet::finite(&b);
        let pxy = table(&law, &kb, k, x).p(k, x, y).expect("row");
        let pyx = table(&law, &kb, k, y).p(k, y, x).expect("row");
        prop_assert!((pxy - pyx).abs() < 1e-14);
    }

    #[test]
    fn mass_is_conserved(b in prop::collection::btree_set(-4i64..=4, 1..5), x in -8i64..=8, k in 1usize..40) {
        let law = heavy_example(2.5, 1.0);
        let opts = TableOptions { max_leak: None, ..TableOptions::default() };
        let kb = KillingSet::finite(&b.into_iter().collect::<Vec<_>>());
        let t = killed_transition_table(&law, &kb, k, &Sources::List(vec![x]), &opts).expect("table");
        let sum = t.alive_mass(k, x).expect("row") + t.killed_mass(k, x).expect("row") + t.leaked_mass(k, x).expect("row");
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn translation_invariance(shift in -5i64..=5, x in 1i64..6, y in -6i64..6, k in 1usize..15) {
        let law = lace();
        let p0 = table(&law, &KillingSet::origin(), k, x).p(k, x, y).expect("row");
        let p1 = table(&law, &KillingSet::origin().translate(shift), k, x + shift).p(k, x + shift, y + shift).expect("row");
        prop_assert!((p0 - p1).abs() < 1e-15);
    }
}
