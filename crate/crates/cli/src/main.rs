use std::path::{Path, PathBuf};
use std::process::ExitCode;

use avoidbridge::bridge_engine::{sample_rng, BackwardSource, BridgeEngine, BridgeSpec, BuildBackward, ScaledPath};
use avoidbridge::cli_runner::run::{write_csv, write_csv_to};
use avoidbridge::cli_runner::{
    build_law, cache_gc, default_configs, parse_config, run_experiment, verify_all, ExperimentConfig, RunError,
    RunOptions, RunOutcome, SuiteName, TableCache,
};
use avoidbridge::exec::{init_threads, Execution};
use avoidbridge::killed_kernel::{KilledWalk, KillingSet, Window, WindowPolicy};
use avoidbridge::limit_process::sampler::{LimitSampler, SamplerKind};
use avoidbridge::limit_process::{LimitLaw, LimitLawSpec, Mode};
use avoidbridge::verify_harness::{natural_mode, DataTable};
use avoidbridge::walk_laws::IncrementLaw;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "avoidbridge", version, about = "Random-walk bridges conditioned to avoid a set, and their scaling limits")]
struct Cli {
    /// Worker threads (overrides AVOIDBRIDGE_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run the sequential code path.
    #[arg(long, global = true)]
    sequential: bool,
    /// Table cache directory (overrides AVOIDBRIDGE_CACHE).
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Build every table in memory and leave the cache alone.
    #[arg(long, global = true)]
    no_cache: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Increment laws.
    Law {
        #[command(subcommand)]
        cmd: LawCmd,
    },
    /// Killed-walk backward tables.
    Kernel {
        #[command(subcommand)]
        cmd: KernelCmd,
    },
    /// Exact bridge sampling.
    Bridge {
        #[command(subcommand)]
        cmd: BridgeCmd,
    },
    /// Limit-process densities and paths.
    Limit {
        #[command(subcommand)]
        cmd: LimitCmd,
    },
    /// Run one suite, or `all`.
    Verify {
        /// marginal, dichotomy, constant, tightness, identity or all.
        suite: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report path; CSV tables go next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Experiment {
        #[command(subcommand)]
        cmd: ExperimentCmd,
    },
    Cache {
        #[command(subcommand)]
        cmd: CacheCmd,
    },
}

#[derive(Subcommand)]
enum LawCmd {
    /// Print σ², flags and tail diagnostics as JSON.
    Validate { config: PathBuf },
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long)]
    law: PathBuf,
    /// Killing set, e.g. `0,-1`.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    set: Vec<i64>,
    #[arg(long)]
    n: usize,
    /// `auto` or `lo:hi`.
    #[arg(long, default_value = "auto", allow_hyphen_values = true)]
    window: String,
    /// Target sites of the backward tables.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    to: Vec<i64>,
}

#[derive(Subcommand)]
enum KernelCmd {
    /// Build (or find) the tables in the cache.
    Build(KernelArgs),
    /// CSV with columns k, x, y, p.
    Dump {
        #[command(flatten)]
        args: KernelArgs,
        /// Only this step.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Scaling parameter `N` (default: last of `N_list`).
    #[arg(long = "big-n")]
    big_n: Option<usize>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum BridgeCmd {
    /// CSV with columns sample_id, k, S_k.
    Sample(SampleArgs),
    /// Crossing variables and moduli of continuity per sample.
    Stats {
        #[command(flatten)]
        args: SampleArgs,
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.0625, 0.015625])]
        delta: Vec<f64>,
        #[arg(long, default_value_t = 0.5)]
        eps: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Creep,
    Jump,
}

#[derive(Subcommand)]
enum LimitCmd {
    /// `q(s, x; t, y)` at one point, or the marginal `q(0, b; t, x)` on a grid.
    Density {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// `s,x,t,y`.
        #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
        at: Vec<f64>,
        /// Grid size `times,points` for the CSV export.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paths on a uniform grid, CSV with columns sample_id, k, t, X.
    Sample {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, default_value_t = 256)]
        grid: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ExperimentCmd {
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CacheCmd {
    /// Evict least-recently-used tables down to a byte budget.
    Gc {
        #[arg(long)]
        max_bytes: u64,
    },
}

/// Failure with its exit code.
struct Failure(u8, String);

impl Failure {
    fn usage(msg: impl ToString) -> Failure {
        Failure(2, msg.to_string())
    }

    fn numeric(msg: impl ToString) -> Failure {
        Failure(3, msg.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Failure {
        Failure(if e.is_usage() { 2 } else { 3 }, e.to_string())
    }
}

struct Env {
    exec: Execution,
    cache: Option<TableCache>,
}

impl Env {
    fn source(&self) -> &dyn BackwardSource {
        match &self.cache {
            Some(c) => c,
            None => &BuildBackward,
        }
    }
}

/// Flag, then AVOIDBRIDGE_CACHE, then the config's `cache_dir`, then `.cache`.
fn cache_dir(cli: &Cli) -> PathBuf {
    let config = match &cli.cmd {
        Cmd::Verify { config: Some(p), .. } | Cmd::Experiment { cmd: ExperimentCmd::Run { config: p, .. } } => {
            parse_config(p).ok().and_then(|c| c.cache_dir)
        }
        _ => None,
    };
    cli.cache_dir
        .clone()
        .or_else(|| std::env::var_os("AVOIDBRIDGE_CACHE").map(PathBuf::from))
        .or_else(|| config.map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(".cache"))
}

fn load(path: &Path) -> Result<(ExperimentConfig, IncrementLaw), Failure> {
    let cfg = parse_config(path).map_err(Failure::usage)?;
    let law = build_law(&cfg.law).map_err(Failure::usage)?;
    Ok((cfg, law))
}

fn write_table(path: &Path, t: &DataTable) -> Result<(), Failure> {
    write_csv(path, t).map_err(Failure::numeric)
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn law_validate(path: &Path) -> Result<(), Failure> {
    let (_, law) = load(path)?;
    let tail = |t: Option<&avoidbridge::walk_laws::ParetoTail>| {
        t.map(|t| {
            json!({
                "index": t.index, "L": t.l, "w0": t.w0, "mass": t.mass(),
                "second_moment_finite": t.second_moment_finite(), "third_moment_finite": t.third_moment_finite(),
            })
        })
    };
    print_json(&json!({
        "kind": law.kind(),
        "sigma2": law.sigma2(),
        "mean": law.mean(),
        "flags": law.flags(),
        "explicit_range": law.explicit_range(),
        "left_tail": tail(law.left_tail()),
        "right_tail": tail(law.right_tail()),
        "left_third_moment_infinite": law.left_third_moment_infinite(),
        "natural_mode": natural_mode(&law),
        "digest": law.digest(),
    }));
    Ok(())
}

fn kernel_walks(a: &KernelArgs, exec: Execution) -> Result<(IncrementLaw, KilledWalk), Failure> {
    let (_, law) = load(&a.law)?;
    if a.set.is_empty() || a.to.is_empty() || a.n == 0 {
        return Err(Failure::usage("--set, --to and a positive --n are required"));
    }
    let killing = KillingSet::finite(&a.set);
    let policy = if a.window == "auto" {
        WindowPolicy::default()
    } else {
        let (lo, hi) = a.window.split_once(':').ok_or_else(|| Failure::usage("--window is auto or lo:hi"))?;
        let parse = |s: &str| s.trim().parse::<i64>().map_err(|_| Failure::usage(format!("bad window bound `{s}`")));
        let (lo, hi) = (parse(lo)?, parse(hi)?);
        if lo > hi {
            return Err(Failure::usage("window needs lo <= hi"));
        }
        WindowPolicy::Fixed(Window::new(lo, hi))
    };
    let w = policy.resolve(&law, &killing, a.n, &a.to);
    if let Some(y) = a.to.iter().find(|y| !w.contains(**y)) {
        return Err(Failure::usage(format!("target {y} lies outside the window {}:{}", w.lo, w.hi)));
    }
    Ok((law.clone(), KilledWalk::new(&law, &killing, w, exec)))
}

fn kernel(cmd: &KernelCmd, env: &Env) -> Result<(), Failure> {
    match cmd {
        KernelCmd::Build(a) => {
            let (law, walk) = kernel_walks(a, env.exec)?;
            let cache = env.cache.as_ref().ok_or_else(|| Failure::usage("kernel build needs the cache"))?;
            let mut files = Vec::new();
            for &y in &a.to {
                cache.get_or_build(&law, &walk, y, a.n).map_err(Failure::numeric)?;
                files.push(cache.path_for(&law, &walk, y, a.n).display().to_string());
            }
            print_json(&json!({ "window": [walk.window.lo, walk.window.hi], "files": files, "cache": cache.stats() }));
        }
        KernelCmd::Dump { args, k, out } => {
            let (law, walk) = kernel_walks(args, env.exec)?;
            let mut t = DataTable::new("kernel", &["k", "x", "y", "p"]);
            for &y in &args.to {
                let tab = env.source().backward(&law, &walk, y, args.n).map_err(Failure::numeric)?;
                let steps: Vec<usize> = match k {
                    Some(k) if *k <= args.n => vec![*k],
                    Some(k) => return Err(Failure::usage(format!("--k {k} exceeds --n"))),
                    None => (0..=args.n).collect(),
                };
                for s in steps {
                    for x in walk.window.lo..=walk.window.hi {
                        t.push_nums(&[s as f64, x as f64, y as f64, tab.get(s, x)]);
                    }
                }
            }
            emit(&t, out.as_deref())?;
        }
    }
    Ok(())
}

fn emit(t: &DataTable, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(p) => write_table(p, t),
        None => write_csv_to(std::io::stdout().lock(), t).map_err(Failure::numeric),
    }
}

fn bridge_engine(a: &SampleArgs, env: &Env) -> Result<(IncrementLaw, BridgeSpec, BridgeEngine), Failure> {
    let (cfg, law) = load(&a.spec)?;
    let big_n = a.big_n.or(cfg.big_n_list.last().copied()).ok_or_else(|| Failure::usage("give --big-n or N_list"))?;
    let spec = BridgeSpec::scaled(&law, &cfg.avoid, cfg.b, cfg.c, cfg.horizon, big_n).map_err(Failure::usage)?;
    let eng = BridgeEngine::with_source(&law, &spec, WindowPolicy::default(), env.exec, env.source()).map_err(Failure::numeric)?;
    Ok((law, spec, eng))
}

fn bridge(cmd: &BridgeCmd, env: &Env) -> Result<(), Failure> {
    match cmd {
        BridgeCmd::Sample(a) => {
            let (_, _, eng) = bridge_engine(a, env)?;
            let paths = eng.sample_many(a.samples, a.seed, env.exec).map_err(Failure::numeric)?;
            let mut t = DataTable::new("paths", &["sample_id", "k", "S_k"]);
            for (i, p) in paths.iter().enumerate() {
                for (k, &s) in p.values.iter().enumerate() {
                    t.push_nums(&[i as f64, k as f64, s as f64]);
                }
            }
            write_table(&a.out, &t)?;
            print_json(&json!({ "samples": a.samples, "n": eng.spec.n, "probability": eng.probability(), "out": a.out }));
        }
        BridgeCmd::Stats { args, delta, eps } => {
            let (law, spec, eng) = bridge_engine(args, env)?;
            let paths = eng.sample_many(args.samples, args.seed, env.exec).map_err(Failure::numeric)?;
            let header = ["sample_id", "zeta", "zeta_prime", "crossing_step", "overshoot", "prejump", "delta", "modulus", "modulus_excl"];
            let mut t = DataTable::new("stats", &header);
            let mut exceed = vec![0usize; delta.len()];
            for (i, p) in paths.iter().enumerate() {
                let st = p.stats().ok_or_else(|| Failure::numeric("sampled path does not cross"))?;
                let sp = ScaledPath::for_law(p, &spec, &law);
                let n = spec.n;
                for (j, &d) in delta.iter().enumerate() {
                    let m = sp.modulus(0, n, d);
                    let excl = sp.modulus(0, st.zeta - 1, d).max(sp.modulus(st.zeta, n, d));
                    exceed[j] += usize::from(m > *eps);
                    t.push_nums(&[
                        i as f64,
                        st.zeta as f64,
                        st.zeta_prime as f64,
                        st.crossing_step() as f64,
                        st.overshoot as f64,
                        st.prejump as f64,
                        d,
                        m,
                        excl,
                    ]);
                }
            }
            write_table(&args.out, &t)?;
            let frac: Vec<_> = delta.iter().zip(&exceed).map(|(d, &e)| json!({"delta": d, "fraction_above_eps": e as f64 / args.samples as f64})).collect();
            print_json(&json!({ "eps": eps, "moduli": frac, "out": args.out }));
        }
    }
    Ok(())
}

fn limit_law(spec: &Path, mode: Option<ModeArg>) -> Result<LimitLaw, Failure> {
    let (cfg, law) = load(spec)?;
    let mode = match mode {
        Some(ModeArg::Creep) => Mode::Creep,
        Some(ModeArg::Jump) => Mode::Jump,
        None => cfg.mode(),
    };
    let beta = law.left_tail().map(|t| t.index).filter(|_| mode == Mode::Jump);
    LimitLaw::new(LimitLawSpec { b: cfg.b, c: cfg.c, horizon: cfg.horizon, mode, beta }).map_err(Failure::usage)
}

fn limit(cmd: &LimitCmd) -> Result<(), Failure> {
    match cmd {
        LimitCmd::Density { spec, mode, at, grid, out } => {
            let lim = limit_law(spec, *mode)?;
            if at.len() == 4 {
                let d = lim.density(at[0], at[1], at[2], at[3]).map_err(Failure::numeric)?;
                print_json(&json!({ "mode": lim.spec.mode, "s": at[0], "x": at[1], "t": at[2], "y": at[3], "density": d }));
            } else if grid.len() == 2 {
                let (nt, nx) = (grid[0].max(1), grid[1].max(2));
                let s = lim.spec;
                let top = s.b.max(s.c) + 4.0 * s.horizon.sqrt();
                let mut t = DataTable::new("density", &["t", "x", "density"]);
                for i in 1..=nt {
                    let tt = s.horizon * i as f64 / (nt + 1) as f64;
                    for j in 0..nx {
                        let x = -top + 2.0 * top * j as f64 / (nx - 1) as f64;
                        t.push_nums(&[tt, x, lim.marginal(tt, x).map_err(Failure::numeric)?]);
                    }
                }
                emit(&t, out.as_deref())?;
            } else {
                return Err(Failure::usage("give --at s,x,t,y or --grid times,points"));
            }
        }
        LimitCmd::Sample { spec, mode, grid, samples, seed, out } => {
            let lim = limit_law(spec, *mode)?;
            let sampler = LimitSampler::new(&lim, *grid, SamplerKind::Constructive).map_err(Failure::usage)?;
            let mut t = DataTable::new("limit_paths", &["sample_id", "k", "t", "X"]);
            for i in 0..*samples {
                let p = sampler.sample(&mut sample_rng(*seed, i as u64)).map_err(Failure::numeric)?;
                for (k, (&tt, &x)) in p.times.iter().zip(&p.values).enumerate() {
                    t.push_nums(&[i as f64, k as f64, tt, x]);
                }
            }
            write_table(out, &t)?;
        }
    }
    Ok(())
}

fn summarize(outs: &[RunOutcome]) -> bool {
    let mut ok = true;
    for o in outs {
        for r in &o.report.suites {
            eprintln!("{} [{}]: {}", r.suite, o.report.case, if r.passed { "PASS" } else { "FAIL" });
            for f in r.failures() {
                eprintln!("  {} n={:?} value={} {:?} {:?}", f.statistic, f.n, f.value, f.relation, f.threshold);
            }
        }
        if let Some(c) = &o.meta.cache {
            eprintln!("  cache: {} hits, {} builds", c.hits, c.builds);
        }
        ok &= o.report.passed;
    }
    ok
}

fn verify(suite: &str, config: Option<&Path>, out: Option<&Path>, env: &Env) -> Result<bool, Failure> {
    let cache = env.cache.as_ref();
    if suite == "all" {
        let configs = match config {
            Some(p) => vec![load(p)?.0],
            None => default_configs(),
        };
        let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out/verify"));
        let outs = verify_all(&configs, &dir, cache, env.exec)?;
        return Ok(summarize(&outs));
    }
    let name = SuiteName::parse(suite).ok_or_else(|| Failure::usage(format!("unknown suite `{suite}`")))?;
    let cfg = match config {
        Some(p) => load(p)?.0,
        None => default_configs().remove(0),
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(format!("out/verify/{}/{suite}.json", cfg.name)));
    let dir = out.parent().map(Path::to_path_buf).filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| PathBuf::from("."));
    let mut opts = RunOptions::new(dir);
    opts.report_name = out.file_name().map_or("report.json".into(), |n| n.to_string_lossy().into_owned());
    opts.cache = cache;
    opts.exec = env.exec;
    opts.suites = Some(vec![name]);
    let o = run_experiment(&cfg, &opts)?;
    Ok(summarize(&[o]))
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let threads = cli.threads.or_else(|| std::env::var("AVOIDBRIDGE_THREADS").ok().and_then(|v| v.parse().ok()));
    init_threads(threads);
    let exec = if cli.sequential { Execution::Sequential } else { Execution::default() };
    let cache = if cli.no_cache { None } else { Some(TableCache::open(cache_dir(cli)).map_err(Failure::numeric)?) };
    let env = Env { exec, cache };
    match &cli.cmd {
        Cmd::Law { cmd: LawCmd::Validate { config } } => law_validate(config)?,
        Cmd::Kernel { cmd } => kernel(cmd, &env)?,
        Cmd::Bridge { cmd } => bridge(cmd, &env)?,
        Cmd::Limit { cmd } => limit(cmd)?,
        Cmd::Verify { suite, config, out } => return verify(suite, config.as_deref(), out.as_deref(), &env),
        Cmd::Experiment { cmd: ExperimentCmd::Run { config, out_dir } } => {
            let (cfg, _) = load(config)?;
            let dir = out_dir
                .clone()
                .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
            let mut opts = RunOptions::new(dir);
            opts.cache = env.cache.as_ref();
            opts.exec = exec;
            let o = run_experiment(&cfg, &opts)?;
            return Ok(summarize(&[o]));
        }
        Cmd::Cache { cmd: CacheCmd::Gc { max_bytes } } => {
            let r = cache_gc(&cache_dir(cli), *max_bytes).map_err(Failure::numeric)?;
            print_json(&serde_json::to_value(r).expect("json"));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
