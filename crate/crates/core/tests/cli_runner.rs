use std::fs;
use std::path::Path;
use std::time::{Duration, SystemTime};

use avoidbridge::cli_runner::run::{format_float, write_csv_to};
use avoidbridge::cli_runner::{
    cache_gc, parse_config, parse_config_str, run_experiment, ConfigError, RunError, RunOptions, SuiteName, TableCache,
};
use avoidbridge::exec::Execution;
use avoidbridge::killed_kernel::{KilledWalk, KillingSet, Window};
use avoidbridge::limit_process::Mode;
use avoidbridge::verify_harness::{Cell, DataTable};
use avoidbridge::walk_laws::lace;
use proptest::prelude::*;

const SMALL: &str = r#"
name = "small"
law = "lace"
A = [0]
N_list = [40, 80]
n_list = [100, 200]
samples = 200
suites = ["marginal", "dichotomy", "constant", "tightness"]

[tightness]
deltas = [0.25, 0.0625]
"#;

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .expect("out dir")
        .map(|e| e.expect("entry").path())
        .filter(|p| p.file_name().is_some_and(|n| n != "meta.json"))
        .map(|p| (p.file_name().expect("name").to_string_lossy().into_owned(), fs::read(&p).expect("read")))
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_write_identical_files_and_reuse_the_cache() {
    let cfg = parse_config_str(SMALL).expect("config");
    let tmp = tempfile::tempdir().expect("tmp");
    let cache = TableCache::open(tmp.path().join("cache")).expect("cache");
    let mut outs = Vec::new();
    for (i, exec) in [Execution::Parallel, Execution::Sequential].into_iter().enumerate() {
        let dir = tmp.path().join(format!("run{i}"));
        let mut opts = RunOptions::new(&dir);
        opts.cache = Some(&cache);
        opts.exec = exec;
        let out = run_experiment(&cfg, &opts).expect("run");
        outs.push((dir, out));
    }
    let (cold, warm) = (&outs[0].1, &outs[1].1);
    assert!(cold.meta.cache.expect("stats").builds > 0);
    assert_eq!(warm.meta.cache.expect("stats").builds, 0);
    assert_eq!(cold.report, warm.report);
    let (a, b) = (read_all(&outs[0].0), read_all(&outs[1].0));
    assert!(a.iter().any(|(n, _)| n == "report.json") && a.len() > 1);
    assert_eq!(a, b);
    // Without a cache the numbers do not change.
    let dir = tmp.path().join("nocache");
    run_experiment(&cfg, &RunOptions::new(&dir)).expect("run");
    assert_eq!(read_all(&dir), a);
}

#[test]
fn report_lists_every_suite() {
    let cfg = parse_config_str(SMALL).expect("config");
    let tmp = tempfile::tempdir().expect("tmp");
    let mut opts = RunOptions::new(tmp.path());
    opts.suites = Some(vec![SuiteName::Identity, SuiteName::Constant]);
    let out = run_experiment(&cfg, &opts).expect("run");
    let names: Vec<&str> = out.report.suites.iter().map(|r| r.suite.as_str()).collect();
    assert_eq!(names, ["identity", "constant"]);
    assert!(out.report.suites.iter().all(|r| r.provenance.config_hash == cfg.hash()));
    let text = fs::read_to_string(tmp.path().join("meta.json")).expect("meta");
    assert!(text.contains("\"elapsed_s\""));
}

#[test]
fn degenerate_scaling_is_a_usage_error() {
    // The start rounds onto the avoided site.
    let cfg = parse_config_str(&SMALL.replace("N_list = [40, 80]", "N_list = [40, 80]\nb = 0.001")).expect("config");
    let tmp = tempfile::tempdir().expect("tmp");
    let mut opts = RunOptions::new(tmp.path());
    opts.suites = Some(vec![SuiteName::Marginal]);
    let err = run_experiment(&cfg, &opts).expect_err("start in A");
    assert!(err.is_usage());
    assert_eq!(err.stage(), "suite marginal");
}

#[test]
fn config_errors_carry_positions() {
    match parse_config_str("law = \"lace\"\nN_list = [100,\n") {
        Err(ConfigError::Parse { line, col, .. }) => assert!(line >= 2 && col >= 1, "{line}:{col}"),
        other => panic!("{other:?}"),
    }
    match parse_config_str("law = \"lace\"\nN_list = [100]\n\n[tightness]\n  epsilon = 0.5\n") {
        Err(ConfigError::UnknownKey { key, line, col }) => assert_eq!((key.as_str(), line, col), ("epsilon", 5, 3)),
        other => panic!("{other:?}"),
    }
    for bad in [
        "law = \"lace\"\nN_list = [200, 100]\n",
        "law = \"lace\"\nN_list = [100]\nA = []\n",
        "law = \"lace\"\nN_list = [100]\nt = 1.0\n",
        "law = \"lace\"\nN_list = [100]\nb = -1.0\n",
        "law = \"lace\"\nsuites = [\"constant\"]\n",
        "law = \"lace\"\nmode = \"jump\"\nN_list = [100]\n",
        "law = \"nonesuch\"\nN_list = [100]\n",
    ] {
        assert!(matches!(parse_config_str(bad), Err(ConfigError::ConstraintViolation(_))), "{bad}");
    }
    assert!(matches!(parse_config_str("N_list = [100]\n[law]\nkind = \"lattice\"\npmf = [[-2, 0.5], [2, 0.5]]\n"), Err(ConfigError::Law(_))));
    assert!(matches!(parse_config(Path::new("/nonexistent/x.toml")), Err(ConfigError::Io { .. })));
    let err: RunError = parse_config_str("bogus = 1\n").expect_err("unknown").into();
    assert!(err.is_usage() && err.stage() == "config");
}

#[test]
fn shipped_config_files_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["lace", "heavy25", "beta3"] {
        let cfg = parse_config(&dir.join(format!("{name}.toml"))).expect("config");
        assert_eq!(cfg.name, name);
    }
    let heavy = parse_config(&dir.join("heavy25.toml")).expect("config");
    assert_eq!(heavy.mode(), Mode::Jump);
}

#[test]
fn gc_evicts_least_recently_used() {
    let tmp = tempfile::tempdir().expect("tmp");
    let cache = TableCache::open(tmp.path()).expect("cache");
    let law = lace();
    let walk = KilledWalk::new(&law, &KillingSet::origin(), Window::new(-20, 20), Execution::Sequential);
    let now = SystemTime::now();
    let mut paths = Vec::new();
    for (i, y) in [-1, -2, -3, -4].into_iter().enumerate() {
        cache.get_or_build(&law, &walk, y, 12).expect("table");
        let p = cache.path_for(&law, &walk, y, 12);
        let f = fs::OpenOptions::new().write(true).open(&p).expect("open");
        f.set_modified(now - Duration::from_secs(100 - 10 * i as u64)).expect("mtime");
        paths.push(p);
    }
    // Reading a table refreshes it.
    cache.get_or_build(&law, &walk, -1, 12).expect("hit");
    fs::write(tmp.path().join("stray.tmp.1.0"), b"partial").expect("tmp file");
    let size = fs::metadata(&paths[0]).expect("meta").len();
    let r = cache_gc(tmp.path(), 2 * size).expect("gc");
    let evicted: Vec<&str> = r.evicted.iter().map(|e| e.file.as_str()).collect();
    let name = |i: usize| paths[i].file_name().expect("name").to_string_lossy().into_owned();
    assert_eq!(evicted, [name(1), name(2)]);
    assert!(paths[0].exists() && paths[3].exists());
    assert_eq!(r.bytes_before, 4 * size);
    assert_eq!(r.bytes_after, 2 * size);
    assert!(tmp.path().join("stray.tmp.1.0").exists());
}

#[test]
fn truncated_tables_are_rebuilt() {
    let tmp = tempfile::tempdir().expect("tmp");
    let cache = TableCache::open(tmp.path()).expect("cache");
    let law = lace();
    let walk = KilledWalk::new(&law, &KillingSet::origin(), Window::new(-20, 20), Execution::Sequential);
    let good = cache.get_or_build(&law, &walk, -2, 15).expect("table");
    let p = cache.path_for(&law, &walk, -2, 15);
    let bytes = fs::read(&p).expect("read");
    fs::write(&p, &bytes[..bytes.len() / 2]).expect("truncate");
    assert!(cache.lookup(&law, &walk, -2, 15).expect("lookup").is_none());
    let again = cache.get_or_build(&law, &walk, -2, 15).expect("rebuilt");
    assert_eq!(cache.stats().builds, 2);
    assert_eq!(good.get(15, 7).to_bits(), again.get(15, 7).to_bits());
    assert_eq!(fs::read(&p).expect("read"), bytes);
}

#[test]
fn csv_cells_are_formatted_stably() {
    assert_eq!(format_float(3.0), "3");
    assert_eq!(format_float(-0.0), "0");
    assert_eq!(format_float(0.1), "1.0000000000000001e-1");
    assert_eq!(format_float(f64::NAN), "NaN");
    let t = DataTable {
        name: "demo".into(),
        header: vec!["N".into(), "law".into(), "value".into()],
        rows: vec![vec![Cell::Num(100.0), Cell::Text("lace, srw".into()), Cell::Num(0.25)]],
    };
    let mut buf = Vec::new();
    write_csv_to(&mut buf, &t).expect("csv");
    assert_eq!(String::from_utf8(buf).expect("utf8"), "N,law,value\n100,\"lace, srw\",2.5000000000000000e-1\n");
}

fn config_text() -> impl Strategy<Value = String> {
    (
        prop::sample::select(vec!["lace", "srw", "heavy25", "heavy3"]),
        prop::collection::btree_set(-3i64..=3, 1..3),
        0.5f64..2.0,
        0.1f64..0.9,
        prop::collection::btree_set(10usize..500, 1..4),
        any::<u64>(),
        1usize..5000,
    )
        .prop_map(|(law, a, b, t, ns, seed, samples)| {
            let a: Vec<String> = a.iter().map(i64::to_string).collect();
            let ns: Vec<String> = ns.iter().map(usize::to_string).collect();
            format!("law = \"{law}\"\nA = [{}]\nb = {b}\nt = {t}\nN_list = [{}]\nseed = {seed}\nsamples = {samples}\n", a.join(", "), ns.join(", "))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resolved_configs_round_trip(text in config_text()) {
        let c = parse_config_str(&text).expect("valid config");
        let again = parse_config_str(&c.to_toml()).expect("canonical form parses");
        prop_assert_eq!(&c, &again);
        prop_assert_eq!(c.hash(), again.hash());
        prop_assert_eq!(c.to_toml(), again.to_toml());
        prop_assert_eq!(c.clone().resolve().expect("idempotent"), c);
    }
}
