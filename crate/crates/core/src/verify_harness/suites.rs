use serde::{Deserialize, Serialize};

use super::{norm, DataTable, ExperimentReport, Relation, Row, SuiteCtx, SuiteError, SuiteOutput};
use crate::bridge_engine::{BridgeEngine, BridgePath, BridgeSpec, PathStats, ScaledPath};
use crate::killed_kernel::WindowPolicy;
use crate::limit_process::{passage, JKernel, LimitLaw, LimitLawSpec, Mode};
use crate::stats::{lattice_vs_density, relative_spread};
use crate::walk_laws::{IncrementLaw, LawKind};

/// Relative tolerance of the limit densities used in the distances.
const DENSITY_TOL: f64 = 1e-8;

fn engine(law: &IncrementLaw, spec: &BridgeSpec, ctx: &SuiteCtx) -> Result<BridgeEngine, SuiteError> {
    Ok(BridgeEngine::with_source(law, spec, WindowPolicy::default(), ctx.exec, ctx.source)?)
}

fn limit_for(law: &IncrementLaw, b: f64, c: f64, horizon: f64, mode: Mode) -> Result<LimitLaw, SuiteError> {
    let beta = match mode {
        Mode::Creep => None,
        Mode::Jump => Some(
            law.left_tail()
                .map(|t| t.index)
                .ok_or_else(|| SuiteError::Unsupported("jump mode needs a regularly varying left tail".into()))?,
        ),
    };
    Ok(LimitLaw::new(LimitLawSpec { b, c, horizon, mode, beta })?)
}

fn finite_variance(law: &IncrementLaw) -> Result<(), SuiteError> {
    if law.kind() == LawKind::Stable {
        return Err(SuiteError::Unsupported("stable-domain laws have no closed-form limit density".into()));
    }
    Ok(())
}

/// Append trend rows: `values[i] rel values[i-1]` for `i ≥ 1`.
fn trend_rows(rows: &mut Vec<Row>, ns: &[usize], name: &str, values: &[f64], rel: Relation) {
    for i in 1..values.len() {
        let r = Row::check(Some(ns[i] as u64), name, values[i], rel, values[i - 1]);
        rows.push(r);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalParams {
    pub avoid: Vec<i64>,
    pub b: f64,
    pub c: f64,
    pub horizon: f64,
    /// Time of the marginal, in units of `N`.
    pub t: f64,
    pub n_list: Vec<usize>,
    pub mode: Mode,
    /// Threshold on the TV distance at the last `N`.
    pub tv_final: f64,
}

struct MarginalPoint {
    big_n: usize,
    k: usize,
    tv: f64,
    sup: f64,
    leaked: f64,
    quad_tol: f64,
    deficit: f64,
    overlay: Vec<Vec<f64>>,
}

/// Exact conditioned marginal of `S_{⌊tN⌋}` against `q(0, b; t, ·)` or
/// `q̆(0, b; t, ·)`.
pub fn marginal_convergence_suite(law: &IncrementLaw, p: &MarginalParams, ctx: &SuiteCtx) -> Result<SuiteOutput, SuiteError> {
    finite_variance(law)?;
    let limit = limit_for(law, p.b, p.c, p.horizon, p.mode)?;
    let points: Vec<Result<MarginalPoint, SuiteError>> = ctx.exec.map_range(p.n_list.len(), |i| {
        let big_n = p.n_list[i];
        let spec = BridgeSpec::scaled(law, &p.avoid, p.b, p.c, p.horizon, big_n)?;
        let k = (p.t * big_n as f64).floor() as usize;
        if k == 0 || k >= spec.n {
            return Err(SuiteError::Unsupported(format!("marginal time {k} is not inside (0, {})", spec.n)));
        }
        let eng = engine(law, &spec, ctx)?;
        let m = eng.marginal(k)?;
        let lam = norm(law, big_n);
        let tk = k as f64 / big_n as f64;
        let pmf: Vec<(i64, f64)> = m.support().collect();
        let dens = pmf
            .iter()
            .map(|&(z, _)| if z == 0 { Ok(0.0) } else { limit.marginal(tk, z as f64 / lam) })
            .collect::<Result<Vec<f64>, _>>()?;
        let d = lattice_vs_density(&pmf, lam, &dens);
        let overlay = pmf
            .iter()
            .zip(&dens)
            .filter(|(&(_, q), &f)| q > 1e-14 || f > 1e-14)
            .map(|(&(z, q), &f)| vec![big_n as f64, z as f64, z as f64 / lam, q * lam, f])
            .collect();
        Ok(MarginalPoint {
            big_n,
            k,
            tv: d.tv,
            sup: d.sup,
            leaked: eng.leaked_mass(),
            quad_tol: d.quad_error + DENSITY_TOL,
            deficit: d.pmf_deficit,
            overlay,
        })
    });
    let points = points.into_iter().collect::<Result<Vec<_>, _>>()?;
    let ns: Vec<usize> = points.iter().map(|x| x.big_n).collect();
    let tv: Vec<f64> = points.iter().map(|x| x.tv).collect();
    let sup: Vec<f64> = points.iter().map(|x| x.sup).collect();
    let mut rows = Vec::new();
    let mut summary =
        DataTable::new("marginal_convergence", &["N", "k", "tv", "sup", "leaked_mass", "quad_tol", "pmf_deficit"]);
    let mut overlay = DataTable::new("marginal_overlay", &["N", "z", "x", "scaled_pmf", "density"]);
    for pt in &points {
        rows.push(
            Row::info(Some(pt.big_n as u64), "tv", pt.tv)
                .with("sup", pt.sup)
                .with("leaked_mass", pt.leaked)
                .with("quad_tol", pt.quad_tol)
                .with("pmf_deficit", pt.deficit)
                .with("k", pt.k as f64),
        );
        summary.push_nums(&[pt.big_n as f64, pt.k as f64, pt.tv, pt.sup, pt.leaked, pt.quad_tol, pt.deficit]);
        for r in &pt.overlay {
            overlay.push_nums(r);
        }
    }
    trend_rows(&mut rows, &ns, "tv_decrease", &tv, Relation::Lt);
    trend_rows(&mut rows, &ns, "sup_decrease", &sup, Relation::Lt);
    if let Some(last) = points.last() {
        rows.push(Row::check(Some(last.big_n as u64), "tv_final", last.tv, Relation::Lt, p.tv_final));
    }
    Ok(SuiteOutput { report: ExperimentReport::new("marginal_convergence", rows), tables: vec![summary, overlay] })
}

/// Fractions of the dichotomy suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FractionStat {
    /// Crossing step `≥ ε √(σ²N)`.
    I,
    /// Crossing step `≥ K √(σ²N)`.
    Ii,
    /// `|S_ζ|` and `S_{ζ-1}` both below `ε √(σ²N)`.
    Iii,
    /// Overshoot `|S_ζ| > η` (lattice units).
    Iv,
}

impl FractionStat {
    fn label(self, param: f64) -> String {
        let (n, p) = match self {
            FractionStat::I => ("i", "eps"),
            FractionStat::Ii => ("ii", "K"),
            FractionStat::Iii => ("iii", "eps"),
            FractionStat::Iv => ("iv", "eta"),
        };
        format!("{n}({p}={param})")
    }

    fn hit(self, param: f64, s: &PathStats, lam: f64) -> bool {
        match self {
            FractionStat::I | FractionStat::Ii => s.crossing_step() as f64 >= param * lam,
            FractionStat::Iii => (s.overshoot.abs() as f64) < param * lam && (s.prejump as f64) < param * lam,
            FractionStat::Iv => s.overshoot.abs() as f64 > param,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckKind {
    #[serde(rename = ">=")]
    AtLeast,
    #[serde(rename = "<=")]
    AtMost,
    /// Strictly increasing along `N_list`.
    #[serde(rename = "increasing")]
    Increasing,
    #[serde(rename = "decreasing")]
    Decreasing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FractionCheck {
    pub statistic: FractionStat,
    pub param: f64,
    pub relation: CheckKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyParams {
    pub avoid: Vec<i64>,
    pub b: f64,
    pub c: f64,
    pub horizon: f64,
    pub n_list: Vec<usize>,
    pub eps: Vec<f64>,
    pub k: Vec<f64>,
    pub eta: Vec<f64>,
    pub samples: usize,
    pub checks: Vec<FractionCheck>,
}

fn sample_stats(law: &IncrementLaw, spec: &BridgeSpec, samples: usize, seed: u64, ctx: &SuiteCtx) -> Result<Vec<(BridgePath, PathStats)>, SuiteError> {
    let eng = engine(law, spec, ctx)?;
    let paths = eng.sample_many(samples, seed, ctx.exec)?;
    Ok(paths
        .into_iter()
        .map(|p| {
            let s = p.stats().expect("bridge starts above 0 and ends below");
            (p, s)
        })
        .collect())
}

/// Crossing-step fractions of sampled bridges.
pub fn dichotomy_suite(law: &IncrementLaw, p: &DichotomyParams, ctx: &SuiteCtx) -> Result<SuiteOutput, SuiteError> {
    let mut stats: Vec<(FractionStat, f64)> = Vec::new();
    let lists = [(FractionStat::I, &p.eps), (FractionStat::Ii, &p.k), (FractionStat::Iii, &p.eps), (FractionStat::Iv, &p.eta)];
    for (st, list) in lists {
        stats.extend(list.iter().map(|&v| (st, v)));
    }
    for ch in &p.checks {
        if !stats.contains(&(ch.statistic, ch.param)) {
            stats.push((ch.statistic, ch.param));
        }
    }
    let mut rows = Vec::new();
    let mut table = DataTable::new("dichotomy", &["N", "statistic", "param", "fraction", "band_lo", "band_hi"]);
    // hits[stat][N index]
    let mut hits = vec![Vec::new(); stats.len()];
    let mut seeds = Vec::new();
    for &big_n in &p.n_list {
        let spec = BridgeSpec::scaled(law, &p.avoid, p.b, p.c, p.horizon, big_n)?;
        let seed = ctx.derive_seed(&format!("dichotomy/{big_n}"));
        seeds.push(seed);
        let lam = norm(law, big_n);
        let sampled = sample_stats(law, &spec, p.samples, seed, ctx)?;
        for (j, &(st, v)) in stats.iter().enumerate() {
            hits[j].push(sampled.iter().filter(|(_, s)| st.hit(v, s, lam)).count());
        }
    }
    let frac = |h: usize| h as f64 / p.samples as f64;
    for (j, &(st, v)) in stats.iter().enumerate() {
        let label = st.label(v);
        let checks: Vec<&FractionCheck> = p.checks.iter().filter(|c| c.statistic == st && c.param == v).collect();
        for (i, &big_n) in p.n_list.iter().enumerate() {
            let f = frac(hits[j][i]);
            let level = checks.iter().find_map(|c| match (c.relation, c.threshold) {
                (CheckKind::AtLeast, Some(t)) => Some((Relation::Ge, t)),
                (CheckKind::AtMost, Some(t)) => Some((Relation::Le, t)),
                _ => None,
            });
            let row = match level {
                Some((rel, t)) => Row::check(Some(big_n as u64), &label, f, rel, t),
                None => Row::info(Some(big_n as u64), &label, f),
            };
            let row = row.mc(seeds[i], hits[j][i], p.samples);
            let band = row.band.expect("mc row");
            table.push(vec![(big_n as f64).into(), label.as_str().into(), v.into(), f.into(), band[0].into(), band[1].into()]);
            rows.push(row);
        }
        let fr: Vec<f64> = hits[j].iter().map(|&h| frac(h)).collect();
        for c in &checks {
            match c.relation {
                CheckKind::Increasing => trend_rows(&mut rows, &p.n_list, &format!("{label}_increase"), &fr, Relation::Gt),
                CheckKind::Decreasing => trend_rows(&mut rows, &p.n_list, &format!("{label}_decrease"), &fr, Relation::Lt),
                _ => {}
            }
        }
    }
    Ok(SuiteOutput { report: ExperimentReport::new("dichotomy", rows), tables: vec![table] })
}

/// Reference asymptotics for `p^n_A(b_n, -c_n)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatioKind {
    /// `ρ_{σ²n}(x + |y|)` (finite third moment).
    A,
    /// `σ^{-β-1} √n F(-√n) J_1(ξ, η)` (`β < 3`).
    B,
    /// `ρ_{σ²n}(x + |y|) (2/σ²) ∫_0^{√n} F(-u) u² du` (`β = 3`).
    C,
}

impl RatioKind {
    pub fn for_law(law: &IncrementLaw) -> RatioKind {
        match law.left_tail() {
            Some(t) if t.index < 3.0 => RatioKind::B,
            Some(_) if law.left_third_moment_infinite() => RatioKind::C,
            _ => RatioKind::A,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantParams {
    pub avoid: Vec<i64>,
    pub b: f64,
    pub c: f64,
    pub n_list: Vec<usize>,
    pub ratio: RatioKind,
    pub max_spread: f64,
}

/// `∫_0^top F(-u) u² du` for the integer step function `F(-u) = P[S ≤ -⌈u⌉]`.
pub fn truncated_third_moment(law: &IncrementLaw, top: f64) -> f64 {
    let mut s = 0.0;
    let mut w = 1i64;
    while ((w - 1) as f64) < top {
        let a = (w - 1) as f64;
        let b = (w as f64).min(top);
        s += law.cdf(-w) * (b.powi(3) - a.powi(3)) / 3.0;
        w += 1;
    }
    s
}

fn reference(law: &IncrementLaw, kind: RatioKind, n: usize, x: i64, y: i64) -> Result<f64, SuiteError> {
    let s2 = law.sigma2();
    let nf = n as f64;
    let d = (x - y) as f64;
    Ok(match kind {
        RatioKind::A => passage(s2 * nf, d),
        RatioKind::B => {
            let tail = law.left_tail().ok_or_else(|| SuiteError::Unsupported("ratio b needs a left tail".into()))?;
            let beta = tail.index;
            let lam = (s2 * nf).sqrt();
            let j = JKernel::new(beta, DENSITY_TOL)?.eval(1.0, x as f64 / lam, y as f64 / lam)?;
            s2.sqrt().powf(-beta - 1.0) * nf.sqrt() * tail.survival(nf.sqrt()) * j
        }
        RatioKind::C => passage(s2 * nf, d) * 2.0 / s2 * truncated_third_moment(law, nf.sqrt()),
    })
}

/// Ratios of the exact crossing probability to its asymptotic form.
pub fn constant_suite(law: &IncrementLaw, p: &ConstantParams, ctx: &SuiteCtx) -> Result<SuiteOutput, SuiteError> {
    finite_variance(law)?;
    let per: Vec<Result<(usize, f64, f64), SuiteError>> = ctx.exec.map_range(p.n_list.len(), |i| {
        let n = p.n_list[i];
        let spec = BridgeSpec::scaled(law, &p.avoid, p.b, p.c, 1.0, n)?;
        let eng = engine(law, &spec, ctx)?;
        Ok((n, eng.probability(), reference(law, p.ratio, n, spec.start, spec.end)?))
    });
    let per = per.into_iter().collect::<Result<Vec<_>, _>>()?;
    let name = format!("ratio_{}", serde_json::to_value(p.ratio).expect("enum").as_str().unwrap_or("?"));
    let mut rows = Vec::new();
    let mut table = DataTable::new("constant", &["n", "probability", "reference", "ratio"]);
    let mut ratios = Vec::new();
    for &(n, pr, r) in &per {
        rows.push(Row::info(Some(n as u64), &name, pr / r).with("probability", pr).with("reference", r));
        table.push_nums(&[n as f64, pr, r, pr / r]);
        ratios.push(pr / r);
    }
    rows.push(Row::check(None, format!("{name}_spread"), relative_spread(&ratios), Relation::Lt, p.max_spread));
    Ok(SuiteOutput { report: ExperimentReport::new("constant", rows), tables: vec![table] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightnessParams {
    pub avoid: Vec<i64>,
    pub b: f64,
    pub c: f64,
    pub horizon: f64,
    pub big_n: usize,
    pub deltas: Vec<f64>,
    pub eps: f64,
    pub samples: usize,
    pub threshold: f64,
    /// Leave out the crossing step (jump regime).
    pub exclude_jump: bool,
}

/// Empirical `P*[Λ(δ) > ε]` along decreasing `δ`.
pub fn tightness_suite(law: &IncrementLaw, p: &TightnessParams, ctx: &SuiteCtx) -> Result<SuiteOutput, SuiteError> {
    let spec = BridgeSpec::scaled(law, &p.avoid, p.b, p.c, p.horizon, p.big_n)?;
    let seed = ctx.derive_seed(&format!("tightness/{}", p.big_n));
    let sampled = sample_stats(law, &spec, p.samples, seed, ctx)?;
    let mut deltas = p.deltas.clone();
    deltas.sort_by(|a, b| b.total_cmp(a));
    let n = spec.n;
    let scaled: Vec<(ScaledPath, usize)> = sampled.iter().map(|(path, s)| (ScaledPath::for_law(path, &spec, law), s.zeta)).collect();
    let label = if p.exclude_jump { "P[Lambda_excl>eps]" } else { "P[Lambda>eps]" };
    let mut rows: Vec<Row> = Vec::new();
    let mut table = DataTable::new("tightness", &["delta", "fraction", "band_lo", "band_hi"]);
    let mut prev: Option<f64> = None;
    for &d in &deltas {
        let hits = ctx
            .exec
            .map_range(scaled.len(), |i| {
                let (sp, z) = &scaled[i];
                let lam = if p.exclude_jump { sp.modulus(0, z - 1, d).max(sp.modulus(*z, n, d)) } else { sp.modulus(0, n, d) };
                lam > p.eps
            })
            .into_iter()
            .filter(|&h| h)
            .count();
        let f = hits as f64 / p.samples as f64;
        let row = match prev {
            None => Row::info(Some(p.big_n as u64), label, f),
            Some(v) => Row::check(Some(p.big_n as u64), label, f, Relation::Le, v),
        };
        let row = row.with("delta", d).with("eps", p.eps).mc(seed, hits, p.samples);
        let band = row.band.expect("mc row");
        table.push_nums(&[d, f, band[0], band[1]]);
        rows.push(row);
        prev = Some(f);
    }
    if let (Some(v), Some(&d)) = (prev, deltas.last()) {
        let last = rows.last().cloned().expect("nonempty");
        let band = last.band.expect("mc row");
        let mut r = Row::check(Some(p.big_n as u64), format!("{label}_smallest_delta"), v, Relation::Lt, p.threshold).with("delta", d);
        r.seed = Some(seed);
        r.band = Some(band);
        rows.push(r);
    }
    Ok(SuiteOutput { report: ExperimentReport::new("tightness", rows), tables: vec![table] })
}
