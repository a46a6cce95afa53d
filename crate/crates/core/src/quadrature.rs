//! One-dimensional adaptive quadrature.
//!
//! Two independent rules live here on purpose: adaptive Simpson backs the
//! infinite-resolution edge weights, while Gauss–Kronrod backs the analytic
//! ground-truth oracles of the synthetic domains.

const MAX_DEPTH: u32 = 48;

/// Adaptive Simpson integration of `f` over `[a, b]` to absolute tolerance
/// `tol`. The interval is pre-split into `panels` pieces so that features
/// narrower than the initial stencil are not missed.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, panels: usize) -> f64 {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let panel_tol = tol / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + h * i as f64;
            let hi = if i + 1 == panels { b } else { a + h * (i + 1) as f64 };
            let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
            let whole = simpson(lo, hi, fa, fm, fb);
            simpson_step(f, lo, hi, fa, fm, fb, whole, panel_tol, MAX_DEPTH)
        })
        .sum()
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

// Gauss–Kronrod 7/15 nodes and weights on [-1, 1].
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

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WGK[7];
    let mut g = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive Gauss–Kronrod (7/15) integration to absolute
/// tolerance `tol`; bisects the worst interval until the summed error
/// estimate drops below `tol` or `max_intervals` is reached.
pub fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, max_intervals: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    let (v, e) = kronrod(f, a, b);
    let mut parts = vec![(a, b, v, e)];
    loop {
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= tol || parts.len() >= max_intervals {
            break;
        }
        let worst = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .unwrap_or(0);
        let (lo, hi, _, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (vl, el) = kronrod(f, lo, mid);
        let (vr, er) = kronrod(f, mid, hi);
        parts.push((lo, mid, vl, el));
        parts.push((mid, hi, vr, er));
    }
    // Sum in interval order so the result does not depend on split history.
    parts.sort_by(|x, y| x.0.total_cmp(&y.0));
    parts.iter().map(|p| p.2).sum()
}
