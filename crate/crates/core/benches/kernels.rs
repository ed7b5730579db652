use std::hint::black_box;

use avoidbridge::bridge_engine::{BridgeEngine, BridgeSpec};
use avoidbridge::exec::Execution;
use avoidbridge::killed_kernel::{BackwardTable, KilledWalk, KillingSet, WindowPolicy};
use avoidbridge::walk_laws::{heavy_example, lace};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn backward_tables(c: &mut Criterion) {
    let mut g = c.benchmark_group("backward_table");
    g.sample_size(10);
    for (name, law, n) in [("lace", lace(), 800), ("heavy25", heavy_example(2.5, 1.0), 400)] {
        let b = KillingSet::origin();
        let w = WindowPolicy::default().resolve(&law, &b, n, &[]);
        for (label, exec) in MODES {
            let walk = KilledWalk::new(&law, &b, w, exec);
            g.bench_with_input(BenchmarkId::new(name, label), &walk, |bch, walk| {
                bch.iter(|| black_box(BackwardTable::build(walk, -1, n)))
            });
        }
    }
    g.finish();
}

fn bridge_sampling(c: &mut Criterion) {
    let mut g = c.benchmark_group("sample_many");
    g.sample_size(10);
    let law = lace();
    let spec = BridgeSpec::scaled(&law, &[0], 1.0, 1.0, 1.0, 400).expect("valid spec");
    let eng = BridgeEngine::new(&law, &spec, WindowPolicy::default(), Execution::Sequential).expect("engine");
    for (label, exec) in MODES {
        g.bench_function(BenchmarkId::new("lace_1000", label), |bch| {
            bch.iter(|| black_box(eng.sample_many(1000, 7, exec).expect("samples")))
        });
    }
    g.finish();
}

criterion_group!(benches, backward_tables, bridge_sampling);
criterion_main!(benches);
