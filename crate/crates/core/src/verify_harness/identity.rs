use super::{DataTable, ExperimentReport, Relation, Row, SuiteCtx, SuiteError, SuiteOutput};
use crate::killed_kernel::hitting::{lambda_identity_check, HittingOptions};
use crate::killed_kernel::potential::{green_function_origin, green_series_oracle, potential_function};
use crate::killed_kernel::{KilledWalk, KillingSet, ScaledVec, WindowPolicy};
use crate::limit_process::{
    entrance_identity_residual, gauss_killed, local_time_kill_check, passage_identity_residual, LimitLaw, LimitLawSpec,
};
use crate::quad::Tol;
use crate::walk_laws::{lace, srw, IncrementLaw};

const GRID: [f64; 3] = [0.25, 1.0, 4.0];

fn max_of<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    it.into_iter().fold(0.0, f64::max)
}

fn semigroup_rows(rows: &mut Vec<Row>) {
    let mut ent: f64 = 0.0;
    let mut pas: f64 = 0.0;
    for t in GRID {
        for s in GRID {
            for y in GRID {
                ent = ent.max(entrance_identity_residual(t, s, y));
                pas = pas.max(passage_identity_residual(t, s, y));
            }
        }
    }
    rows.push(Row::check(None, "rho_entrance_residual", ent, Relation::Lt, 1e-8));
    rows.push(Row::check(None, "rho_convolution_residual", pas, Relation::Lt, 1e-8));
}

fn transition_rows(rows: &mut Vec<Row>) -> Result<(), SuiteError> {
    let creep = LimitLaw::new(LimitLawSpec::creep(1.0, 1.0, 1.0))?;
    let tol = Tol::new(1e-12, 1e-11);
    let mut norm: f64 = 0.0;
    for (s, x, t) in [(0.0, 1.0, 0.5), (0.2, 0.5, 0.7), (0.3, -0.4, 0.6)] {
        norm = norm.max((creep.total_mass(s, x, t, tol)?.value - 1.0).abs());
    }
    rows.push(Row::check(None, "q_normalization", norm, Relation::Lt, 1e-6));
    let mut ck: f64 = 0.0;
    for (s, x, u, t, y) in [(0.1, 0.5, 0.3, 0.6, 0.7), (0.1, 0.5, 0.3, 0.6, -0.7), (0.1, -0.5, 0.3, 0.6, -0.2), (0.0, 1.0, 0.4, 0.8, -0.3)] {
        ck = ck.max(creep.chapman_kolmogorov_residual(s, x, u, t, y, tol)?.abs());
    }
    rows.push(Row::check(None, "q_chapman_kolmogorov", ck, Relation::Lt, 1e-6));

    let jump = LimitLaw::new(LimitLawSpec::jump(1.0, 1.0, 1.0, 2.5))?;
    let tol = Tol::new(1e-9, 1e-8);
    let mut norm: f64 = 0.0;
    for (s, x, t) in [(0.0, 1.0, 0.5), (0.25, 0.5, 0.75), (0.3, -0.4, 0.6)] {
        norm = norm.max((jump.total_mass(s, x, t, tol)?.value - 1.0).abs());
    }
    rows.push(Row::check(None, "q_breve_normalization", norm, Relation::Lt, 1e-4));
    let tol = Tol::new(1e-7, 1e-6);
    let mut ck: f64 = 0.0;
    for (s, x, u, t, y) in [(0.0, 1.0, 0.3, 0.6, 0.5), (0.0, 1.0, 0.3, 0.6, -0.5), (0.1, 0.8, 0.4, 0.7, -1.2)] {
        ck = ck.max(jump.chapman_kolmogorov_residual(s, x, u, t, y, tol)?.abs());
    }
    rows.push(Row::check(None, "q_breve_chapman_kolmogorov", ck, Relation::Lt, 1e-4));
    Ok(())
}

fn potential_rows(rows: &mut Vec<Row>) -> Result<(), SuiteError> {
    let pot = potential_function(&srw(), 20, 1e-9)?;
    let dev = max_of((-20..=20).map(|x| (pot.a(x) - (x as f64).abs()).abs()));
    rows.push(Row::check(None, "srw_a_minus_abs", dev, Relation::Lt, 1e-6));

    let law = lace();
    let pot = potential_function(&law, 40, 1e-9)?;
    let rep = lambda_identity_check(&law, &pot, &[5, 10, 20, 30], &HittingOptions::default())?;
    let res = max_of(rep.rows.iter().map(|r| r.residual));
    rows.push(Row::check(None, "lace_lambda_identity_residual", res, Relation::Lt, 1e-6));
    if let Some(l) = rep.limit {
        rows.push(Row::info(None, "lace_lambda_limit", l));
    }
    let (x, y) = (3, 2);
    let (_, series) = green_series_oracle(&law, x, y, 125);
    let g = green_function_origin(&pot, x, y)?;
    rows.push(Row::check(None, "lace_green_vs_series", (g - series).abs(), Relation::Lt, 1e-4).with("green", g));
    Ok(())
}

fn local_time_rows(rows: &mut Vec<Row>) -> Result<(), SuiteError> {
    let cross = local_time_kill_check(1e3, 1.0, 1.0, -1.0)?;
    rows.push(Row::check(None, "local_time_crossing_rel_error", cross.rel_error, Relation::Lt, 0.02));
    let same = local_time_kill_check(1e3, 1.0, 1.0, 1.0)?;
    rows.push(Row::check(None, "local_time_same_sign_rel_error", same.rel_error, Relation::Lt, 0.01));
    Ok(())
}

fn propagate(walk: &KilledWalk, x: i64, n: usize) -> ScaledVec {
    let mut f = walk.delta(x);
    for _ in 0..n {
        f = walk.forward(&f).0;
    }
    f
}

fn spaced(lo: i64, hi: i64, count: i64) -> Vec<i64> {
    let step = ((hi - lo) / count).max(1);
    let mut v: Vec<i64> = (lo..=hi).step_by(step as usize).collect();
    if v.last() != Some(&hi) {
        v.push(hi);
    }
    v
}

/// Killed-kernel trend checks on the lace law: the bound of
/// `p^n(x, y)(y² ∨ n)` across zero, and the ratios against the half-line
/// kernel and against `𝔤⁰_{σ²n}`.
fn kernel_trend_rows(law: &IncrementLaw, ctx: &SuiteCtx, rows: &mut Vec<Row>, table: &mut DataTable) {
    let origin = KillingSet::origin();
    let ns = [16usize, 32, 64, 128, 256, 512];
    let bound: Vec<f64> = ctx.exec.map_range(ns.len(), |i| {
        let n = ns[i];
        let w = WindowPolicy::default().resolve(law, &origin, n, &[]);
        let walk = KilledWalk::new(law, &origin, w, crate::exec::Execution::Sequential);
        let x_hi = 2 * (n as f64).sqrt().ceil() as i64;
        let mut m: f64 = 0.0;
        for x in 0..=x_hi {
            let f = propagate(&walk, x, n);
            for y in w.lo..0 {
                let yy = (y * y) as f64;
                m = m.max(f.get(w.index(y)) * yy.max(n as f64));
            }
        }
        m
    });
    for (&n, &b) in ns.iter().zip(&bound) {
        rows.push(Row::info(Some(n as u64), "crossing_kernel_bound", b));
        table.push(vec!["crossing_kernel_bound".into(), (n as f64).into(), b.into()]);
    }
    let first = bound[0];
    let last = *bound.last().expect("nonempty");
    rows.push(Row::check(Some(*ns.last().expect("nonempty") as u64), "crossing_kernel_bound_growth", last / first, Relation::Lt, 2.0));

    let ns = [64usize, 256, 1024];
    let s2 = law.sigma2();
    let per: Vec<(f64, f64, f64)> = ctx.exec.map_range(ns.len(), |i| {
        let n = ns[i];
        let r = (n as f64).sqrt();
        let (lo, hi) = ((r / 4.0).ceil() as i64, (4.0 * r).floor() as i64);
        let w = WindowPolicy::default().resolve(law, &origin, n, &[hi]);
        let walk = KilledWalk::new(law, &origin, w, crate::exec::Execution::Sequential);
        let half = KillingSet::HalfLine(0);
        let whalf = WindowPolicy::Fixed(w).resolve(law, &half, n, &[]);
        let walk_half = KilledWalk::new(law, &half, whalf, crate::exec::Execution::Sequential);
        let (mut rmin, mut rmax, mut dev) = (f64::INFINITY, 0.0f64, 0.0f64);
        for x in spaced(lo, hi, 12) {
            let f = propagate(&walk, x, n);
            let g = propagate(&walk_half, x, n);
            for y in lo..=hi {
                let p = f.get(w.index(y));
                let ph = g.get(whalf.index(y));
                let r = ph / p;
                rmin = rmin.min(r);
                rmax = rmax.max(r);
                dev = dev.max((p / gauss_killed(s2 * n as f64, x as f64, y as f64) - 1.0).abs());
            }
        }
        (rmin, rmax, dev)
    });
    let mut deficits = Vec::new();
    for (&n, &(rmin, rmax, dev)) in ns.iter().zip(&per) {
        rows.push(Row::check(Some(n as u64), "halfline_ratio_max", rmax, Relation::Le, 1.0 + 1e-12));
        rows.push(Row::info(Some(n as u64), "halfline_ratio_min", rmin));
        rows.push(Row::info(Some(n as u64), "gauss_ratio_max_dev", dev));
        table.push(vec!["halfline_ratio_min".into(), (n as f64).into(), rmin.into()]);
        table.push(vec!["gauss_ratio_max_dev".into(), (n as f64).into(), dev.into()]);
        deficits.push((1.0 - rmin, dev));
    }
    for i in 1..ns.len() {
        let n = Some(ns[i] as u64);
        rows.push(Row::check(n, "halfline_ratio_deficit_decrease", deficits[i].0, Relation::Lt, deficits[i - 1].0));
        rows.push(Row::check(n, "gauss_ratio_dev_decrease", deficits[i].1, Relation::Lt, deficits[i - 1].1));
    }
}

/// Module-level identities and invariant trends in one report.
pub fn identity_suite(ctx: &SuiteCtx) -> Result<SuiteOutput, SuiteError> {
    let mut rows = Vec::new();
    semigroup_rows(&mut rows);
    transition_rows(&mut rows)?;
    potential_rows(&mut rows)?;
    local_time_rows(&mut rows)?;
    let mut table = DataTable::new("identity_trends", &["statistic", "n", "value"]);
    kernel_trend_rows(&lace(), ctx, &mut rows, &mut table);
    Ok(SuiteOutput { report: ExperimentReport::new("identity", rows), tables: vec![table] })
}
