//! One-dimensional quadrature: adaptive Gauss-Kronrod (7/15) for smooth or
//! piecewise smooth integrands and tanh-sinh for integrable endpoint
//! singularities.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::sum::Neumaier;

#[derive(Debug, Clone, Copy)]
pub struct Tol {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Tol {
    pub fn abs(abs: f64) -> Self {
        Tol {
            abs,
            rel: 0.0,
            max_intervals: 2000,
        }
    }

    pub fn new(abs: f64, rel: f64) -> Self {
        Tol {
            abs,
            rel,
            max_intervals: 2000,
        }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs.max(self.rel * value.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

impl std::ops::Add for Quad {
    type Output = Quad;
    fn add(self, o: Quad) -> Quad {
        Quad {
            value: self.value + o.value,
            error: self.error + o.error,
            converged: self.converged && o.converged,
        }
    }
}

impl Quad {
    pub fn zero() -> Self {
        Quad {
            value: 0.0,
            error: 0.0,
            converged: true,
        }
    }

    pub fn scale(self, c: f64) -> Quad {
        Quad {
            value: self.value * c,
            error: self.error * c.abs(),
            converged: self.converged,
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_47,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    let mut rabs = rk.abs();
    let mut fv = [0.0f64; 15];
    fv[7] = fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let f1 = f(c - dx);
        let f2 = f(c + dx);
        fv[j] = f1;
        fv[14 - j] = f2;
        rk += WGK[j] * (f1 + f2);
        rabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            rg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = rk * 0.5;
    let mut rasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        rasc += WGK[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }
    let result = rk * h;
    let rabs = rabs * h.abs();
    let rasc = rasc * h.abs();
    let mut err = ((rk - rg) * h).abs();
    if rasc != 0.0 && err != 0.0 {
        err = rasc * (1.0f64).min((200.0 * err / rasc).powf(1.5));
    }
    if rabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * rabs);
    }
    (result, err)
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn heap_totals(heap: &BinaryHeap<Piece>) -> (f64, f64) {
    let mut s = Neumaier::new();
    let mut es = Neumaier::new();
    for q in heap.iter() {
        s.add(q.value);
        es.add(q.error);
    }
    (s.value(), es.value())
}

/// Globally adaptive Gauss-Kronrod integration of `f` over the finite interval `[a, b]`.
pub fn gk_adaptive<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tol) -> Quad {
    if a == b {
        return Quad::zero();
    }
    let (v, e) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Piece {
        a,
        b,
        value: v,
        error: e,
    });
    let mut total = v;
    let mut err = e;
    let mut n = 1;
    while err > tol.target(total) && n < tol.max_intervals {
        let p = heap.pop().expect("heap is never empty");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            heap.push(p);
            break;
        }
        let (v1, e1) = gk15(&f, p.a, m);
        let (v2, e2) = gk15(&f, m, p.b);
        heap.push(Piece {
            a: p.a,
            b: m,
            value: v1,
            error: e1,
        });
        heap.push(Piece {
            a: m,
            b: p.b,
            value: v2,
            error: e2,
        });
        n += 1;
        total += (v1 + v2) - p.value;
        err += (e1 + e2) - p.error;
        if n % 64 == 0 {
            (total, err) = heap_totals(&heap);
        }
    }
    (total, err) = heap_totals(&heap);
    Quad {
        value: total,
        error: err,
        converged: err <= tol.target(total),
    }
}

/// Gauss-Kronrod over `[a, b]` split at the supplied interior break points.
pub fn gk_breaks<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: Tol) -> Quad {
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
    pts.push(b);
    pts.sort_by(f64::total_cmp);
    let n = (pts.len() - 1) as f64;
    let sub = Tol {
        abs: tol.abs / n,
        rel: tol.rel,
        max_intervals: tol.max_intervals,
    };
    let mut q = Quad::zero();
    for w in pts.windows(2) {
        q = q + gk_adaptive(&f, w[0], w[1], sub);
    }
    q
}

/// Tanh-sinh integration over `[a, b]`.
///
/// The integrand receives `(x, x - a, b - x)`; the two distances are computed
/// without cancellation so that endpoint singularities like `(b - x)^(-0.9)`
/// can be evaluated accurately.
pub fn tanh_sinh<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Quad {
    tanh_sinh_levels(f, a, b, tol, 12)
}

/// [`tanh_sinh`] stopping after at most `max_level` step halvings. Useful for
/// nested integrals whose inner values carry quadrature noise.
pub fn tanh_sinh_levels<F: Fn(f64, f64, f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_level: usize,
) -> Quad {
    tanh_sinh_rel(f, a, b, tol, 0.0, max_level)
}

/// [`tanh_sinh_levels`] with a relative tolerance on top of the absolute one.
pub fn tanh_sinh_rel<F: Fn(f64, f64, f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    tol: f64,
    rel: f64,
    max_level: usize,
) -> Quad {
    if a == b {
        return Quad::zero();
    }
    let half = 0.5 * (b - a);
    let hpi = std::f64::consts::FRAC_PI_2;
    let term = |t: f64| -> f64 {
        let u = hpi * t.sinh();
        let e = (2.0 * u).exp();
        let dist_b = half * 2.0 / (e + 1.0);
        let dist_a = half * 2.0 / (1.0 / e + 1.0);
        if dist_a < 1e-290 || dist_b < 1e-290 || !dist_a.is_finite() || !dist_b.is_finite() {
            return 0.0;
        }
        let x = if t < 0.0 { a + dist_a } else { b - dist_b };
        let ch = u.cosh();
        let w = half * hpi * t.cosh() / (ch * ch);
        if w == 0.0 || !w.is_finite() {
            return 0.0;
        }
        let v = f(x, dist_a, dist_b) * w;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let tmax = 6.5;
    let mut h = 1.0;
    let mut acc = Neumaier::new();
    acc.add(term(0.0));
    let mut k = 1;
    while (k as f64) * h <= tmax {
        let t = k as f64 * h;
        acc.add(term(t));
        acc.add(term(-t));
        k += 1;
    }
    let mut prev = acc.value() * h;
    let mut err = f64::INFINITY;
    for level in 0..max_level {
        h *= 0.5;
        let mut k = 1;
        while (k as f64) * h <= tmax {
            let t = k as f64 * h;
            acc.add(term(t));
            acc.add(term(-t));
            k += 2;
        }
        let cur = acc.value() * h;
        err = (cur - prev).abs();
        prev = cur;
        if level >= 2 && err <= tol.max(rel.max(4.0 * f64::EPSILON) * cur.abs()) {
            return Quad {
                value: cur,
                error: err,
                converged: true,
            };
        }
    }
    Quad {
        value: prev,
        error: err,
        converged: false,
    }
}

/// Integral of `f` over `[a, inf)` by mapping onto `(0, 1]` and applying tanh-sinh.
/// `scale` sets the length scale of the map `x = a + scale * (1 - w) / w`.
pub fn half_line<F: Fn(f64) -> f64>(f: F, a: f64, scale: f64, tol: f64) -> Quad {
    half_line_levels(f, a, scale, tol, 12)
}

pub fn half_line_levels<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    scale: f64,
    tol: f64,
    max_level: usize,
) -> Quad {
    tanh_sinh_levels(
        |w, _dw, one_minus_w| {
            let x = a + scale * one_minus_w / w;
            f(x) * scale / (w * w)
        },
        0.0,
        1.0,
        tol,
        max_level,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_polynomial_exact() {
        let q = gk_adaptive(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0, Tol::abs(1e-13));
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((q.value - exact).abs() < 1e-12, "{q:?}");
    }

    #[test]
    fn gk_oscillatory() {
        let q = gk_adaptive(
            |x| (10.0 * x).sin(),
            0.0,
            std::f64::consts::PI,
            Tol::abs(1e-12),
        );
        assert!(q.converged);
        assert!(q.value.abs() < 1e-11);
    }

    #[test]
    fn gk_sqrt_singularity() {
        let q = gk_adaptive(|x| 1.0 / x.sqrt(), 0.0, 1.0, Tol::abs(1e-9));
        assert!((q.value - 2.0).abs() < 1e-8, "{q:?}");
    }

    #[test]
    fn tanh_sinh_strong_endpoint_singularity() {
        // int_0^1 x^(-0.9) dx = 10
        let q = tanh_sinh(|_, xa, _| xa.powf(-0.9), 0.0, 1.0, 1e-12);
        assert!((q.value - 10.0).abs() < 1e-9, "{q:?}");
        // (1-x)^(-0.8) at the other end: 5
        let q = tanh_sinh(|_, _, xb| xb.powf(-0.8), 0.0, 1.0, 1e-12);
        assert!((q.value - 5.0).abs() < 1e-9, "{q:?}");
    }

    #[test]
    fn half_line_power_tail() {
        // int_1^inf x^(-1.5) dx = 2
        let q = half_line(|x| x.powf(-1.5), 1.0, 1.0, 1e-12);
        assert!((q.value - 2.0).abs() < 1e-9, "{q:?}");
        // int_0^inf 1/(1+x^2) = pi/2
        let q = half_line(|x| 1.0 / (1.0 + x * x), 0.0, 1.0, 1e-13);
        assert!(
            (q.value - std::f64::consts::FRAC_PI_2).abs() < 1e-11,
            "{q:?}"
        );
    }
}
