//! One-dimensional quadrature used by kernel, assembly and verification code.
//!
//! Three families are provided:
//!
//! * [`gauss_legendre`] nodes and weights for fixed-order tensor rules,
//! * [`integrate`], a globally adaptive Gauss-Kronrod (7/15) scheme for
//!   integrands that are smooth up to a few interior kinks,
//! * [`integrate_singular`] and [`integrate_to_infinity`], tanh-sinh rules
//!   that tolerate integrable endpoint singularities and infinite ranges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::FRAC_PI_2;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QuadError {
    #[error("quadrature did not converge on [{a}, {b}] (estimate {estimate:e}, error {error:e})")]
    NotConverged {
        a: f64,
        b: f64,
        estimate: f64,
        error: f64,
    },
    #[error("integrand produced a non-finite value on [{a}, {b}]")]
    NonFinite { a: f64, b: f64 },
}

/// Tolerances shared by the adaptive rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Maximum bisection depth (GK) or step-halving levels (tanh-sinh).
    pub max_depth: u32,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-14,
            max_depth: 20,
        }
    }
}

impl QuadConfig {
    pub fn with_rel_tol(mut self, rel_tol: f64) -> Self {
        self.rel_tol = rel_tol;
        self
    }

    fn accepts(&self, error: f64, estimate: f64) -> bool {
        error <= self.abs_tol.max(self.rel_tol * estimate.abs())
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "Gauss-Legendre order must be positive");
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            let p = if order == 1 { x } else { p1 };
            let pm1 = if order == 1 { 1.0 } else { p0 };
            dp = n * (x * p - pm1) / (x * x - 1.0);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        if order == 1 {
            x = 0.0;
            dp = 1.0;
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed-order Gauss-Legendre rule on `[a, b]`.
pub fn gauss_fixed<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    rule.0
        .iter()
        .zip(&rule.1)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

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

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    depth: u32,
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

/// Globally adaptive Gauss-Kronrod integration over a finite interval.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, cfg: QuadConfig) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let (value, error) = gk15(&f, a, b);
    if !value.is_finite() {
        return Err(QuadError::NonFinite { a, b });
    }
    let mut heap = BinaryHeap::new();
    heap.push(Segment {
        a,
        b,
        value,
        error,
        depth: 0,
    });
    let (mut total, mut total_err) = (value, error);
    loop {
        if cfg.accepts(total_err, total) {
            // re-sum in a fixed order so the result does not depend on heap history
            let mut segs: Vec<_> = heap.into_vec();
            segs.sort_by(|x, y| x.a.total_cmp(&y.a));
            return Ok(segs.iter().map(|s| s.value).sum());
        }
        let worst = heap.pop().expect("heap never empties");
        if worst.depth >= cfg.max_depth {
            return Err(QuadError::NotConverged {
                a,
                b,
                estimate: total,
                error: total_err,
            });
        }
        let mid = 0.5 * (worst.a + worst.b);
        let (lv, le) = gk15(&f, worst.a, mid);
        let (rv, re) = gk15(&f, mid, worst.b);
        if !(lv.is_finite() && rv.is_finite()) {
            return Err(QuadError::NonFinite { a, b });
        }
        total += lv + rv - worst.value;
        total_err += le + re - worst.error;
        for (sa, sb, v, e) in [(worst.a, mid, lv, le), (mid, worst.b, rv, re)] {
            heap.push(Segment {
                a: sa,
                b: sb,
                value: v,
                error: e,
                depth: worst.depth + 1,
            });
        }
    }
}

/// Adaptive integration over `[a, b]` split at the given interior break points.
pub fn integrate_pieces<F: Fn(f64) -> f64>(
    f: F,
    breaks: &[f64],
    cfg: QuadConfig,
) -> Result<f64, QuadError> {
    let mut sum = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            sum += integrate(&f, w[0], w[1], cfg)?;
        }
    }
    Ok(sum)
}

/// Tanh-sinh core on the unit-width reference. `g(da, db)` receives the
/// distances to both ends of `[0, 1]` so callers can evaluate near an
/// endpoint without cancellation.
fn tanh_sinh_unit<G: Fn(f64, f64) -> f64>(g: G, cfg: QuadConfig) -> Result<f64, QuadError> {
    const T_MAX: f64 = 6.5;
    let node = |t: f64| -> Option<(f64, f64, f64)> {
        let u = FRAC_PI_2 * t.sinh();
        let cu = u.cosh();
        let w = FRAC_PI_2 * t.cosh() / (cu * cu);
        // distance from the nearer endpoint: (1 - tanh|u|)/2 = 1/(1 + e^{2|u|})
        let near = 1.0 / (1.0 + (2.0 * u.abs()).exp());
        if near <= 0.0 || w == 0.0 {
            return None;
        }
        let far = 1.0 - near;
        let (da, db) = if u < 0.0 { (near, far) } else { (far, near) };
        Some((da, db, 0.5 * w))
    };
    let eval = |t: f64| -> Result<f64, QuadError> {
        match node(t) {
            Some((da, db, w)) => {
                let v = g(da, db);
                if v.is_finite() {
                    Ok(w * v)
                } else if da.min(db) < 1e-20 {
                    // overflow of an integrable singularity at the extreme nodes
                    Ok(0.0)
                } else {
                    Err(QuadError::NonFinite { a: 0.0, b: 1.0 })
                }
            }
            None => Ok(0.0),
        }
    };
    let mut step = 0.5;
    let mut sum = eval(0.0)?;
    let mut k = 1;
    while (k as f64) * step <= T_MAX {
        let t = k as f64 * step;
        sum += eval(t)? + eval(-t)?;
        k += 1;
    }
    let mut estimate = sum * step;
    for _ in 0..cfg.max_depth.min(12) {
        step *= 0.5;
        let mut k = 1;
        while (k as f64) * step <= T_MAX {
            let t = k as f64 * step;
            sum += eval(t)? + eval(-t)?;
            k += 2;
        }
        let next = sum * step;
        let err = (next - estimate).abs();
        estimate = next;
        if cfg.accepts(err, next) {
            return Ok(next);
        }
    }
    Err(QuadError::NotConverged {
        a: 0.0,
        b: 1.0,
        estimate,
        error: f64::NAN,
    })
}

/// Tanh-sinh integration over `[a, b]`; endpoint singularities are allowed.
pub fn integrate_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    cfg: QuadConfig,
) -> Result<f64, QuadError> {
    if a == b {
        return Ok(0.0);
    }
    let width = b - a;
    tanh_sinh_unit(
        |da, db| {
            let x = if da <= db { a + width * da } else { b - width * db };
            f(x)
        },
        cfg,
    )
    .map(|v| v * width)
    .map_err(|e| relabel(e, a, b))
}

/// Integral over `[a, +inf)` through the map `x = a + t / (1 - t)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, cfg: QuadConfig) -> Result<f64, QuadError> {
    tanh_sinh_unit(
        |da, db| {
            let x = a + da / db;
            if !x.is_finite() {
                return 0.0;
            }
            let v = f(x);
            // decayed integrands underflow to zero before the Jacobian blows up
            if v == 0.0 {
                0.0
            } else {
                v / (db * db)
            }
        },
        cfg,
    )
    .map_err(|e| relabel(e, a, f64::INFINITY))
}

fn relabel(e: QuadError, a: f64, b: f64) -> QuadError {
    match e {
        QuadError::NotConverged { estimate, error, .. } => QuadError::NotConverged { a, b, estimate, error },
        QuadError::NonFinite { .. } => QuadError::NonFinite { a, b },
    }
}
