//! Adaptive Gauss–Kronrod (7/15) quadrature with an absolute/relative
//! tolerance pair, plus the interval maps used for half-infinite ranges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances for one adaptive integration.
#[derive(Clone, Copy, Debug)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tol {
    pub fn new(abs: f64, rel: f64) -> Self {
        Tol {
            abs,
            rel,
            max_intervals: 2000,
        }
    }

    pub fn abs(abs: f64) -> Self {
        Tol::new(abs, 0.0)
    }

    pub fn with_max_intervals(mut self, n: usize) -> Self {
        self.max_intervals = n;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    pub evals: usize,
    pub converged: bool,
}

impl Estimate {
    fn zero() -> Self {
        Estimate {
            value: 0.0,
            error: 0.0,
            evals: 0,
            converged: true,
        }
    }

    /// Sum of two independent estimates.
    pub fn plus(self, other: Estimate) -> Estimate {
        Estimate {
            value: self.value + other.value,
            error: self.error + other.error,
            evals: self.evals + other.evals,
            converged: self.converged && other.converged,
        }
    }
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        resk += WGK[j] * s;
        if j % 2 == 1 {
            resg += WG[j / 2] * s;
        }
    }
    let value = resk * h;
    let err = ((resk - resg) * h).abs();
    (value, err)
}

/// One fixed 15-point Kronrod rule on `[a, b]`: `(value, error estimate)`.
pub fn gauss_kronrod<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64) -> (f64, f64) {
    kronrod(&mut f, a, b)
}

/// Integrate `f` over the finite interval `[a, b]`.
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, tol: Tol) -> Estimate {
    if a == b {
        return Estimate::zero();
    }
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    let (v, e) = kronrod(&mut f, lo, hi);
    let mut evals = 15;
    let mut heap = BinaryHeap::new();
    heap.push(Segment {
        a: lo,
        b: hi,
        value: v,
        error: e,
    });
    let mut total = v;
    let mut total_err = e;
    while total_err > tol.abs.max(tol.rel * total.abs()) && heap.len() < tol.max_intervals {
        let seg = match heap.pop() {
            Some(s) => s,
            None => break,
        };
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            heap.push(seg);
            break;
        }
        let (v1, e1) = kronrod(&mut f, seg.a, mid);
        let (v2, e2) = kronrod(&mut f, mid, seg.b);
        evals += 30;
        total += v1 + v2 - seg.value;
        total_err += e1 + e2 - seg.error;
        heap.push(Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
        });
        heap.push(Segment {
            a: mid,
            b: seg.b,
            value: v2,
            error: e2,
        });
    }
    // Re-sum to shed the drift of the running totals.
    let value: f64 = heap.iter().map(|s| s.value).sum();
    let error: f64 = heap.iter().map(|s| s.error).sum();
    Estimate {
        value: sign * value,
        error,
        evals,
        converged: error <= tol.abs.max(tol.rel * value.abs()),
    }
}

/// Integrate over consecutive panels `[p0,p1], [p1,p2], ...`; the absolute
/// tolerance is shared evenly between panels.
pub fn integrate_panels<F: FnMut(f64) -> f64>(mut f: F, points: &[f64], tol: Tol) -> Estimate {
    let panels = points.len().saturating_sub(1).max(1) as f64;
    let per = Tol {
        abs: tol.abs / panels,
        ..tol
    };
    points
        .windows(2)
        .map(|w| integrate(&mut f, w[0], w[1], per))
        .fold(Estimate::zero(), Estimate::plus)
}

/// Integrate over `[a, ∞)` through `x = a + s / (1 - s)`.
pub fn integrate_to_inf<F: FnMut(f64) -> f64>(mut f: F, a: f64, tol: Tol) -> Estimate {
    integrate(
        |s: f64| {
            if s >= 1.0 {
                return 0.0;
            }
            let one = 1.0 - s;
            let x = a + s / one;
            let v = f(x) / (one * one);
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        0.0,
        1.0,
        tol,
    )
}

/// Integrate over `(-∞, b]`.
pub fn integrate_from_neg_inf<F: FnMut(f64) -> f64>(mut f: F, b: f64, tol: Tol) -> Estimate {
    integrate_to_inf(|x| f(2.0 * b - x), b, tol)
}

/// Integrate over `[a, ∞)` where the integrand lives on scale `scale`:
/// `[a, a + scale]` directly, the remainder through the infinite map.
pub fn integrate_to_inf_scaled<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    scale: f64,
    tol: Tol,
) -> Estimate {
    let half = Tol {
        abs: 0.5 * tol.abs,
        ..tol
    };
    let near = integrate(&mut f, a, a + scale, half);
    let far = integrate_to_inf(&mut f, a + scale, half);
    near.plus(far)
}
