//! Limit-side quantities: fractional Brownian sheet covariances (with the
//! degenerate Hurst index 0), the angular integrals of the far-field kernel,
//! the limit kernels and their L2 norms, the balanced-kernel covariance and
//! the edge variances of a coefficient grid.

use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta, beta_reg};
use statrs::function::gamma::gamma;

use crate::coeff_families::{
    a_inf, rho_tail_mass, AngularFunction, CoefficientGrid, Decay, RhoEnvelope,
};
use crate::error::{invalid, Error, Result};
use crate::lattice_sim::{floor_count, g_square_sums};
use crate::numerics::quad::{
    gk_adaptive, half_line, half_line_levels, tanh_sinh, tanh_sinh_levels, tanh_sinh_rel, Quad, Tol,
};
use crate::numerics::Neumaier;
use crate::region_atlas::{exponents, ModelExponents};

const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

/// Hurst pair of a fractional Brownian sheet; either index may be 0 or 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FbsParams {
    #[serde(rename = "H_x")]
    pub hx: f64,
    #[serde(rename = "H_y")]
    pub hy: f64,
}

impl FbsParams {
    pub fn new(hx: f64, hy: f64) -> Result<Self> {
        let p = FbsParams { hx, hy };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, h) in [("H_x", self.hx), ("H_y", self.hy)] {
            if !(0.0..=1.0).contains(&h) {
                return Err(invalid(format!("{name} = {h} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// One-dimensional factor `(a^2H + b^2H - |a-b|^2H) / 2`; for `H = 0` it is
/// 1 on the diagonal and 1/2 off it.
pub fn fbm_factor(h: f64, a: f64, b: f64) -> f64 {
    if h == 0.0 {
        return if a == b { 1.0 } else { 0.5 };
    }
    let e = 2.0 * h;
    0.5 * (a.powf(e) + b.powf(e) - (a - b).abs().powf(e))
}

pub fn fbs_covariance(p: FbsParams, p1: (f64, f64), p2: (f64, f64)) -> Result<f64> {
    p.validate()?;
    for c in [p1.0, p1.1, p2.0, p2.1] {
        if !(c > 0.0) || !c.is_finite() {
            return Err(invalid(format!(
                "coordinate {c} must be positive and finite"
            )));
        }
    }
    Ok(fbm_factor(p.hx, p1.0, p2.0) * fbm_factor(p.hy, p1.1, p2.1))
}

/// Checks `Cov(B(l1 x, l2 y), B(l1 x', l2 y')) = l1^(2Hx) l2^(2Hy) Cov(B(x,y), B(x',y'))`
/// to 1e-10 relative on every pair.
pub fn self_similarity_check(
    p: FbsParams,
    scales: (f64, f64),
    pairs: &[((f64, f64), (f64, f64))],
) -> bool {
    let (l1, l2) = scales;
    if !(l1 > 0.0 && l2 > 0.0) {
        return false;
    }
    let factor = l1.powf(2.0 * p.hx) * l2.powf(2.0 * p.hy);
    pairs.iter().all(|&(a, b)| {
        let base = fbs_covariance(p, a, b);
        let scaled = fbs_covariance(p, (l1 * a.0, l2 * a.1), (l1 * b.0, l2 * b.1));
        match (base, scaled) {
            (Ok(c0), Ok(c1)) => (c1 - factor * c0).abs() <= 1e-10 * (factor * c0).abs().max(1e-300),
            _ => false,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularIntegrals {
    pub l1_plus: f64,
    pub l1_minus: f64,
    pub l2_plus: f64,
    pub l2_minus: f64,
}

const ANGULAR_TOL: f64 = 1e-9;

/// Integrate over `[a, b]` split at `breaks`; the integrand gets the point and
/// its distances to the outer endpoints `a` and `b`.
fn segmented<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64, breaks: &[f64], tol: f64) -> Quad {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    inner.dedup();
    pts.extend(inner);
    pts.push(b);
    let per = tol / (pts.len() - 1) as f64;
    let mut q = Quad::zero();
    for w in pts.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        let off_a = s0 - a;
        let off_b = b - s1;
        q = q + tanh_sinh(|x, da, db| f(x, off_a + da, off_b + db), s0, s1, per);
    }
    q
}

fn converged(q: Quad, what: &str) -> Result<f64> {
    if q.converged {
        Ok(q.value)
    } else {
        Err(Error::Tolerance(format!(
            "{what}: quadrature stalled at error {:.3e}",
            q.error
        )))
    }
}

fn heat_break(l0: &AngularFunction) -> Vec<f64> {
    match l0 {
        AngularFunction::Heat { .. } => vec![0.0],
        _ => l0.kinks(),
    }
}

/// `L_{2,+} = L_{2,-} = int a_inf(t, 1) dt`, computed as
/// `int_{-pi/2}^{pi/2} cos^(q1-2) phi L0(sin phi) dphi`.
pub fn l2_integral(q1: f64, q2: f64, l0: &AngularFunction) -> Result<f64> {
    exponents(q1, q2)?;
    if q1 <= 1.0 {
        return Err(Error::Divergent(format!(
            "L_2 needs q1 > 1 (a_inf(t, 1) decays like |t|^-q1), got q1 = {q1}"
        )));
    }
    if l0.is_zero() {
        return Ok(0.0);
    }
    let breaks: Vec<f64> = heat_break(l0).iter().map(|z| z.asin()).collect();
    let e = q1 - 2.0;
    let q = segmented(
        |phi, dl, dh| {
            let c = dl.min(dh).sin();
            c.powf(e) * l0.eval(phi.sin())
        },
        -HALF_PI,
        HALF_PI,
        &breaks,
        ANGULAR_TOL,
    );
    converged(q, "L_2")
}

/// `(L_{1,+}, L_{1,-})`, `L_{1,+-} = int a_inf(+-1, s) ds`, via `s^(q2/q1) = tan phi`.
pub fn l1_integrals(q1: f64, q2: f64, l0: &AngularFunction) -> Result<(f64, f64)> {
    exponents(q1, q2)?;
    if q2 <= 1.0 {
        return Err(Error::Divergent(format!(
            "L_1 needs q2 > 1 (a_inf(1, s) decays like |s|^-q2), got q2 = {q2}"
        )));
    }
    if l0.is_zero() {
        return Ok((0.0, 0.0));
    }
    let ik = q1 / q2;
    let e_sin = ik - 1.0;
    let e_cos = q1 - 1.0 - ik;
    let one = |sign: f64| -> Result<f64> {
        let breaks: Vec<f64> = heat_break(l0)
            .iter()
            .filter(|&&z| z * sign > 0.0)
            .map(|z| z.abs().acos())
            .collect();
        let q = segmented(
            |_phi, dl, dh| {
                let c = dh.sin();
                2.0 * ik * dl.sin().powf(e_sin) * c.powf(e_cos) * l0.eval(sign * c)
            },
            0.0,
            HALF_PI,
            &breaks,
            ANGULAR_TOL,
        );
        converged(q, "L_1")
    };
    Ok((one(1.0)?, one(-1.0)?))
}

pub fn angular_integrals(q1: f64, q2: f64, l0: &AngularFunction) -> Result<AngularIntegrals> {
    let (l1_plus, l1_minus) = l1_integrals(q1, q2, l0)?;
    let l2 = l2_integral(q1, q2, l0)?;
    Ok(AngularIntegrals {
        l1_plus,
        l1_minus,
        l2_plus: l2,
        l2_minus: l2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    H0,
    H1,
    H2,
    H1Tilde,
    H2Tilde,
}

/// A limit kernel with its angular integrals cached (NaN where they diverge).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub q1: f64,
    pub q2: f64,
    pub angular: AngularFunction,
    pub l1_plus: f64,
    pub l1_minus: f64,
    pub l2_plus: f64,
    pub l2_minus: f64,
    exps: ModelExponents,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, q1: f64, q2: f64, angular: AngularFunction) -> Result<Self> {
        let e = exponents(q1, q2)?;
        let out_of = |msg: String| Err(Error::OutOfModel(msg));
        match kind {
            KernelKind::H0 => {
                if !(e.q < 1.0 && e.q_edge1 > 1.0 && e.q_edge2 > 1.0) {
                    return out_of(format!(
                        "h0 needs Q < 1 and Q_edge1, Q_edge2 > 1; got Q = {}, Q_edge1 = {}, Q_edge2 = {}",
                        e.q, e.q_edge1, e.q_edge2
                    ));
                }
            }
            KernelKind::H1 | KernelKind::H2 => {
                let (h, name) = if kind == KernelKind::H1 {
                    (e.h1, "H1")
                } else {
                    (e.h2, "H2")
                };
                if !(h > 0.0 && h < 1.0) {
                    return out_of(format!(
                        "{name} = {h} outside (0, 1): kernel not square integrable"
                    ));
                }
                if (h - 0.5).abs() < 1e-12 {
                    return Err(invalid(format!("{name} = 1/2: singular prefactor (Q = 1)")));
                }
            }
            KernelKind::H1Tilde | KernelKind::H2Tilde => {
                let (qt, name) = if kind == KernelKind::H1Tilde {
                    (e.q_tilde1, "Q_tilde1")
                } else {
                    (e.q_tilde2, "Q_tilde2")
                };
                if !(e.q > 1.0 && e.q < 2.0 && qt > 1.0) {
                    return out_of(format!(
                        "tilde kernel needs 1 < Q < 2 and {name} > 1; got Q = {}, {name} = {qt}",
                        e.q
                    ));
                }
            }
        }
        let (l1_plus, l1_minus) = if q2 > 1.0 {
            l1_integrals(q1, q2, &angular)?
        } else {
            (f64::NAN, f64::NAN)
        };
        let l2 = if q1 > 1.0 {
            l2_integral(q1, q2, &angular)?
        } else {
            f64::NAN
        };
        if matches!(kind, KernelKind::H1 | KernelKind::H0) && l1_plus.is_nan() {
            return Err(Error::Divergent(format!("L_1 diverges for q2 = {q2}")));
        }
        if kind == KernelKind::H2 && l2.is_nan() {
            return Err(Error::Divergent(format!("L_2 diverges for q1 = {q1}")));
        }
        Ok(KernelSpec {
            kind,
            q1,
            q2,
            angular,
            l1_plus,
            l1_minus,
            l2_plus: l2,
            l2_minus: l2,
            exps: e,
        })
    }

    pub fn exponents(&self) -> &ModelExponents {
        &self.exps
    }

    fn a(&self, t: f64, s: f64) -> f64 {
        a_inf(self.q1, self.q2, &self.angular, t, s)
    }

    /// `int_c^inf a_inf(tau, sigma) dsigma` for `c > 0`.
    fn upper_strip(&self, tau: f64, c: f64, tol: f64) -> f64 {
        if let Some(v) = self.iso_upper_strip(tau, c) {
            return v;
        }
        let scale = c.max(tau.abs().powf(self.q1 / self.q2)).max(1e-300);
        half_line(|s| self.a(tau, s), c, scale, tol).value
    }

    /// `int_{c1}^{c2} a_inf(tau, sigma) dsigma`, `c1 < c2`, `tau != 0` when the interval covers 0.
    fn strip(&self, tau: f64, c1: f64, c2: f64, tol: f64) -> f64 {
        if c1 >= c2 {
            return 0.0;
        }
        if let (Some(f1), Some(f2)) = (self.iso_upper_strip(tau, c1), self.iso_upper_strip(tau, c2))
        {
            return f1 - f2;
        }
        if c1 < 0.0 && c2 > 0.0 {
            return self.strip(tau, c1, 0.0, tol / 2.0) + self.strip(tau, 0.0, c2, tol / 2.0);
        }
        tanh_sinh(
            |_s, da, db| {
                let s = if c1 >= 0.0 { c1 + da } else { c2 - db };
                self.a(tau, s)
            },
            c1,
            c2,
            tol,
        )
        .value
    }

    /// Closed form for a constant angular function with `q1 = q2`:
    /// `int_c^inf (tau^2 + s^2)^(-q/2) ds` through the regularised incomplete beta function.
    fn iso_upper_strip(&self, tau: f64, c: f64) -> Option<f64> {
        let AngularFunction::Constant(k) = self.angular else {
            return None;
        };
        if self.q1 != self.q2 {
            return None;
        }
        let q = self.q1;
        if tau == 0.0 {
            return if c > 0.0 {
                Some(k * c.powf(1.0 - q) / (q - 1.0))
            } else {
                None
            };
        }
        if c.is_infinite() {
            return Some(if c > 0.0 {
                0.0
            } else {
                k * tau.abs().powf(1.0 - q) * beta(0.5 * (q - 1.0), 0.5)
            });
        }
        let a = 0.5 * (q - 1.0);
        if !tau.is_finite() {
            return Some(0.0);
        }
        let r = c / tau;
        let x0 = (1.0 / (1.0 + r * r)).clamp(0.0, 1.0);
        let full = tau.abs().powf(1.0 - q) * beta(a, 0.5);
        let half = 0.5 * full * inc_beta(a, 0.5, x0);
        Some(k * if c >= 0.0 { half } else { full - half })
    }

    fn h1_closed(&self, x: f64, u: f64) -> f64 {
        bracket(self.exps.h1 - 0.5, self.l1_plus, self.l1_minus, x, u)
    }

    fn h2_closed(&self, y: f64, v: f64) -> f64 {
        bracket(self.exps.h2 - 0.5, self.l2_plus, self.l2_minus, y, v)
    }

    fn h0(&self, x: f64, y: f64, u: f64, v: f64, tol: f64) -> f64 {
        self.h0_split(x, u, x - u, v, y - v, tol)
    }

    /// `h0` with the distances `x - u` and `y - v` supplied by the caller, so
    /// that points a rounding error away from an edge stay on the correct side.
    fn h0_split(&self, x: f64, u: f64, xu: f64, v: f64, yv: f64, tol: f64) -> f64 {
        // Relative accuracy: the kernel is unbounded near the rectangle edges.
        let ts = |f: &dyn Fn(f64, f64, f64) -> f64, a: f64, b: f64| {
            tanh_sinh_rel(f, a, b, tol * 1e-6, tol, 12).value
        };
        let inside = u > 0.0 && xu >= 0.0 && v > 0.0 && yv >= 0.0;
        if inside {
            let alpha = self.exps.h1 - 0.5;
            let strip_part =
                (self.l1_minus * u.powf(alpha) + self.l1_plus * xu.powf(alpha)) / alpha;
            let f = |tau: f64| {
                self.upper_strip(tau, v, tol * 1e-2) + self.upper_strip(tau, yv, tol * 1e-2)
            };
            strip_part - ts(&|_, _, db| f(-db), 0.0, u) - ts(&|_, da, _| f(da), 0.0, xu)
        } else {
            let g = |tau: f64| self.strip(tau, -v, yv, tol * 1e-2);
            if u > 0.0 && xu > 0.0 {
                ts(&|_, _, db| g(-db), 0.0, u) + ts(&|_, da, _| g(da), 0.0, xu)
            } else if u <= 0.0 {
                ts(&|_, da, _| g(da - u), 0.0, x)
            } else {
                ts(&|_, _, db| g(-(db - xu)), 0.0, x)
            }
        }
    }

    /// `int_0^y a_inf(u, s - v) ds`.
    fn tilde1_inner(&self, y: f64, u: f64, v: f64, tol: f64) -> f64 {
        if v > 0.0 && v < y {
            tanh_sinh(|_s, _, db| self.a(u, -db), 0.0, v, tol / 2.0).value
                + tanh_sinh(|_s, da, _| self.a(u, da), v, y, tol / 2.0).value
        } else if v <= 0.0 {
            tanh_sinh(|_s, da, _| self.a(u, da - v), 0.0, y, tol).value
        } else {
            tanh_sinh(|_s, _, db| self.a(u, -(db + (v - y))), 0.0, y, tol).value
        }
    }

    fn tilde2_inner(&self, x: f64, u: f64, v: f64, tol: f64) -> f64 {
        if u > 0.0 && u < x {
            tanh_sinh(|_t, _, db| self.a(-db, v), 0.0, u, tol / 2.0).value
                + tanh_sinh(|_t, da, _| self.a(da, v), u, x, tol / 2.0).value
        } else if u <= 0.0 {
            tanh_sinh(|_t, da, _| self.a(da - u, v), 0.0, x, tol).value
        } else {
            tanh_sinh(|_t, _, db| self.a(-(db + (u - x)), v), 0.0, x, tol).value
        }
    }
}

/// Regularised incomplete beta `I_x(a, b)`; the power series is used below 1/2
/// where the library routine loses the tiny values to underflow.
fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 0.5 {
        return beta_reg(a, b, x);
    }
    // I_x(a,b) = x^a / B(a,b) * sum_n (1-b)_n / n! * x^n / (a+n)
    let mut sum = 1.0 / a;
    let mut c = 1.0;
    let mut n = 0.0;
    loop {
        c *= (n + 1.0 - b) / (n + 1.0) * x;
        n += 1.0;
        let t = c / (a + n);
        sum += t;
        if t.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    (a * x.ln()).exp() * sum / beta(a, b)
}

/// `(1/alpha) {Lp [(x-u)_+^alpha - (-u)_+^alpha] - Lm [(x-u)_-^alpha - (-u)_-^alpha]}`.
fn bracket(alpha: f64, lp: f64, lm: f64, x: f64, u: f64) -> f64 {
    let pw = |z: f64| if z > 0.0 { z.powf(alpha) } else { 0.0 };
    let plus = pw(x - u) - pw(-u);
    let minus = pw(u - x) - pw(u);
    (lp * plus - lm * minus) / alpha
}

/// Kernel value at `(u, v)` for the rectangle `(0, x] x (0, y]`.
pub fn kernel_h(spec: &KernelSpec, rect: (f64, f64), point: (f64, f64)) -> Result<f64> {
    let (x, y) = rect;
    let (u, v) = point;
    if !(x > 0.0 && y > 0.0) {
        return Err(invalid("rectangle sides must be positive"));
    }
    if !(u.is_finite() && v.is_finite()) {
        return Err(invalid("kernel argument must be finite"));
    }
    let tol = 1e-10;
    Ok(match spec.kind {
        KernelKind::H1 => {
            if v > 0.0 && v <= y {
                spec.h1_closed(x, u)
            } else {
                0.0
            }
        }
        KernelKind::H2 => {
            if u > 0.0 && u <= x {
                spec.h2_closed(y, v)
            } else {
                0.0
            }
        }
        KernelKind::H0 => spec.h0(x, y, u, v, tol),
        KernelKind::H1Tilde => x * spec.tilde1_inner(y, u, v, tol),
        KernelKind::H2Tilde => y * spec.tilde2_inner(x, u, v, tol),
    })
}

/// `h1(x, 1; u, v)` for `v` in `(0, 1]`, by quadrature of `|t - u|^(-p1) L_{1,+-}` over
/// `(0, x]` (outside points) or minus its complement (inside points).
pub fn h1_by_definition(spec: &KernelSpec, x: f64, u: f64) -> f64 {
    h1_definition_split(spec, x, u, x - u)
}

/// As [`h1_by_definition`] with `x - u` supplied separately, so that points
/// close to the right edge keep their distance to it.
fn h1_definition_split(spec: &KernelSpec, x: f64, u: f64, xu: f64) -> f64 {
    let e = spec.exponents();
    let p1 = e.q1 * (1.0 - 1.0 / e.q2);
    let (lp, lm) = (spec.l1_plus, spec.l1_minus);
    let tol = 1e-13;
    if u <= 0.0 {
        lp * tanh_sinh(|_t, dt, _| (dt - u).powf(-p1), 0.0, x, tol).value
    } else if xu < 0.0 {
        lm * tanh_sinh(|_t, _, db| (db - xu).powf(-p1), 0.0, x, tol).value
    } else {
        let f = |w: f64| w.powf(-p1);
        let left = half_line(|w| f(u + w), 0.0, u, tol * u.powf(1.0 - p1).min(1.0)).value;
        let right = half_line(|w| f(xu + w), 0.0, xu, tol * xu.powf(1.0 - p1).min(1.0)).value;
        -(lm * left + lp * right)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaNorms {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma1_tilde: Option<f64>,
    pub sigma2_tilde: Option<f64>,
}

/// `int_R bracket(u)^2 du` for the unit interval, split at 0 and 1.
fn bracket_norm_sq(alpha: f64, lp: f64, lm: f64) -> Quad {
    let tol = 1e-13;
    let outer = half_line(
        |w| ((1.0 + w).powf(alpha) - w.powf(alpha)).powi(2),
        0.0,
        1.0,
        tol,
    );
    let mid = tanh_sinh(
        |_u, du, dv| (lp * dv.powf(alpha) + lm * du.powf(alpha)).powi(2),
        0.0,
        1.0,
        tol,
    );
    (outer.scale(lp * lp + lm * lm) + mid).scale(1.0 / (alpha * alpha))
}

/// `sigma_1 = ||h1(1,1; .)||` through the separable one-dimensional reduction.
pub fn sigma1(q1: f64, q2: f64, l0: &AngularFunction) -> Result<f64> {
    let k = KernelSpec::new(KernelKind::H1, q1, q2, l0.clone())?;
    let q = bracket_norm_sq(k.exps.h1 - 0.5, k.l1_plus, k.l1_minus);
    Ok(converged(q, "sigma_1")?.max(0.0).sqrt())
}

pub fn sigma2(q1: f64, q2: f64, l0: &AngularFunction) -> Result<f64> {
    let k = KernelSpec::new(KernelKind::H2, q1, q2, l0.clone())?;
    let q = bracket_norm_sq(k.exps.h2 - 0.5, k.l2_plus, k.l2_minus);
    Ok(converged(q, "sigma_2")?.max(0.0).sqrt())
}

/// `sigma_1` by integrating the squared kernel over the plane, with the kernel
/// itself evaluated from its defining integral rather than the closed form.
pub fn sigma1_by_kernel_norm(q1: f64, q2: f64, l0: &AngularFunction) -> Result<f64> {
    let k = KernelSpec::new(KernelKind::H1, q1, q2, l0.clone())?;
    let tol = 1e-9;
    let h = |u: f64| h1_by_definition(&k, 1.0, u);
    let over_u = || {
        half_line(|w| h(-w).powi(2), 0.0, 1.0, tol)
            + tanh_sinh(
                |_u, du, dv| h1_definition_split(&k, 1.0, du, dv).powi(2),
                0.0,
                1.0,
                tol,
            )
            + half_line(|w| h(1.0 + w).powi(2), 0.0, 1.0, tol)
    };
    let inner = over_u();
    let q = gk_adaptive(|_v| inner.value, 0.0, 1.0, Tol::abs(1e-14));
    // The defining integral is singular along two lines, so the absolute target is
    // not always met; a relative error well below the comparison tolerance is enough.
    if !inner.converged && inner.error > 1e-7 * inner.value.abs() {
        return Err(Error::Tolerance(format!(
            "sigma_1 kernel norm: error {:.3e}",
            inner.error
        )));
    }
    Ok(q.value.max(0.0).sqrt())
}

fn sigma_tilde(k: &KernelSpec, first: bool) -> Result<f64> {
    let tol = 1e-9;
    let inner = 1e-11;
    // a_inf is even in s: the first kernel is symmetric about v = 1/2, the second about v = 0.
    let total = if first {
        let f = |u: f64, v: f64| k.tilde1_inner(1.0, u, v, inner).powi(2);
        let along = |u: f64| {
            2.0 * (tanh_sinh(|v, _, _| f(u, v), 0.5, 1.0, tol * 0.1).value
                + half_line(|v| f(u, v), 1.0, 1.0, tol * 0.1).value)
        };
        whole_line(along, &[0.0], tol, TILDE_LEVELS).value
    } else {
        let f = |u: f64, v: f64| k.tilde2_inner(1.0, u, v, inner).powi(2);
        let along = |v: f64| whole_line(|u| f(u, v), &[0.0, 1.0], tol * 0.1, TILDE_LEVELS).value;
        2.0 * half_line(along, 0.0, 1.0, tol).value
    };
    if !total.is_finite() {
        return Err(Error::Tolerance("sigma_tilde did not converge".into()));
    }
    Ok(total.max(0.0).sqrt())
}

/// L2 norms at the unit rectangle. Fails when the model is outside the region
/// where either `sigma_1` or `sigma_2` is finite; the tilde norms are filled in
/// only where they are finite.
pub fn sigma_norms(q1: f64, q2: f64, l0: &AngularFunction) -> Result<SigmaNorms> {
    let s1 = sigma1(q1, q2, l0)?;
    let s2 = sigma2(q1, q2, l0)?;
    let t1 = KernelSpec::new(KernelKind::H1Tilde, q1, q2, l0.clone()).ok();
    let t2 = KernelSpec::new(KernelKind::H2Tilde, q1, q2, l0.clone()).ok();
    Ok(SigmaNorms {
        sigma1: s1,
        sigma2: s2,
        sigma1_tilde: t1.map(|k| sigma_tilde(&k, true)).transpose()?,
        sigma2_tilde: t2.map(|k| sigma_tilde(&k, false)).transpose()?,
    })
}

pub fn sigma_tilde_norms(q1: f64, q2: f64, l0: &AngularFunction) -> Result<(f64, f64)> {
    let t1 = KernelSpec::new(KernelKind::H1Tilde, q1, q2, l0.clone())?;
    let t2 = KernelSpec::new(KernelKind::H2Tilde, q1, q2, l0.clone())?;
    Ok((sigma_tilde(&t1, true)?, sigma_tilde(&t2, false)?))
}

/// Integral over the real line split at `breaks`, with half lines at both ends.
pub fn whole_line<F: Fn(f64) -> f64>(f: F, breaks: &[f64], tol: f64, max_level: usize) -> Quad {
    let mut b: Vec<f64> = breaks.to_vec();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup();
    let per = tol / (b.len() + 1) as f64;
    let lo = b[0];
    let hi = *b.last().unwrap();
    let mut q = half_line_levels(|w| f(lo - w), 0.0, 1.0, per, max_level)
        + half_line_levels(|w| f(hi + w), 0.0, 1.0, per, max_level);
    for w in b.windows(2) {
        q = q + tanh_sinh_levels(|x, _, _| f(x), w[0], w[1], per, max_level);
    }
    q
}

/// A quadrature node on the real line with its distances to the ends of the
/// segment it belongs to (infinite ends have infinite distance).
#[derive(Debug, Clone, Copy)]
struct LinePos {
    x: f64,
    s0: f64,
    s1: f64,
    da: f64,
    db: f64,
}

impl LinePos {
    /// `x - anchor`, exact when the anchor is one of the segment ends.
    fn from(&self, anchor: f64) -> f64 {
        if anchor == self.s0 {
            self.da
        } else if anchor == self.s1 {
            -self.db
        } else {
            self.x - anchor
        }
    }
}

fn line_integral<F: Fn(LinePos) -> f64>(f: F, breaks: &[f64], tol: f64, max_level: usize) -> Quad {
    let mut b: Vec<f64> = breaks.to_vec();
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.dedup();
    let per = tol / (b.len() + 1) as f64;
    let inf = f64::INFINITY;
    let lo = b[0];
    let hi = *b.last().unwrap();
    let mut q = half_line_levels(
        |w| {
            f(LinePos {
                x: lo - w,
                s0: -inf,
                s1: lo,
                da: inf,
                db: w,
            })
        },
        0.0,
        1.0,
        per,
        max_level,
    ) + half_line_levels(
        |w| {
            f(LinePos {
                x: hi + w,
                s0: hi,
                s1: inf,
                da: w,
                db: inf,
            })
        },
        0.0,
        1.0,
        per,
        max_level,
    );
    for w in b.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        q = q + tanh_sinh_levels(
            |x, da, db| f(LinePos { x, s0, s1, da, db }),
            s0,
            s1,
            per,
            max_level,
        );
    }
    q
}

/// Balanced-kernel covariance with its quadrature error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct V0Covariance {
    pub value: f64,
    pub abs_error: f64,
}

/// `Cov(V0(x1, y1), V0(x2, y2)) = <h0(x1,y1; .), h0(x2,y2; .)>` over the plane.
pub fn v0_covariance(
    q1: f64,
    q2: f64,
    l0: &AngularFunction,
    p1: (f64, f64),
    p2: (f64, f64),
) -> Result<V0Covariance> {
    let k = KernelSpec::new(KernelKind::H0, q1, q2, l0.clone())?;
    for c in [p1.0, p1.1, p2.0, p2.1] {
        if !(c > 0.0 && c.is_finite()) {
            return Err(invalid("rectangle corners must be positive"));
        }
    }
    let htol = 1e-6;
    let same = p1 == p2;
    let h = |p: (f64, f64), u: &LinePos, v: &LinePos| {
        k.h0_split(
            p.0,
            u.from(0.0),
            -u.from(p.0),
            v.from(0.0),
            -v.from(p.1),
            htol,
        )
    };
    // Nodes this close to an edge carry weight ~ d against an integrand ~ d^(2 alpha),
    // so dropping them changes the result by far less than the quadrature error.
    let near_edge = |p: &LinePos| p.da.min(p.db) < V0_EDGE_CUT;
    let q = line_integral(
        |u| {
            if near_edge(&u) {
                return 0.0;
            }
            line_integral(
                |v| {
                    if near_edge(&v) {
                        return 0.0;
                    }
                    let a = h(p1, &u, &v);
                    let b = if same { a } else { h(p2, &u, &v) };
                    a * b
                },
                &[0.0, p1.1, p2.1],
                1e-7,
                V0_LEVELS,
            )
            .value
        },
        &[0.0, p1.0, p2.0],
        1e-6,
        V0_LEVELS,
    );
    if !q.value.is_finite() {
        return Err(Error::Tolerance(
            "balanced kernel covariance did not converge".into(),
        ));
    }
    Ok(V0Covariance {
        value: q.value,
        abs_error: q.error,
    })
}

const V0_LEVELS: usize = 5;
const V0_EDGE_CUT: f64 = 1e-12;
const TILDE_LEVELS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeSigmas {
    pub sigma2_edge1: f64,
    pub sigma2_edge2: f64,
    /// Upper bound on the change of either value from coefficients outside the grid.
    pub truncation_bound: f64,
    pub edge1_converged: bool,
    pub edge2_converged: bool,
}

/// `2 sum_{v>=0} (sum_{w>v} r(w))^2 + 2 sum_{v<=-1} (sum_{w<=v} r(w))^2` for
/// line sums `r` indexed from `-R`; also returns the tail sums for the bound.
fn edge_series(r: &[f64]) -> (f64, Vec<f64>) {
    let n = r.len();
    let rad = (n / 2) as i64;
    let mut tails = Vec::with_capacity(n);
    let mut acc = Neumaier::new();
    // Upper tails sum_{w > v} r(w) for v = R-1 down to 0.
    let mut upper = vec![0.0; rad as usize];
    for v in (0..rad).rev() {
        acc.add(r[(v + 1 + rad) as usize]);
        upper[v as usize] = acc.value();
    }
    let mut acc = Neumaier::new();
    let mut lower = vec![0.0; rad as usize];
    for v in -rad..=-1 {
        acc.add(r[(v + rad) as usize]);
        lower[(v + rad) as usize] = acc.value();
    }
    let mut s = Neumaier::new();
    for &t in upper.iter().chain(lower.iter()) {
        s.add(t * t);
        tails.push(t);
    }
    (2.0 * s.value(), tails)
}

/// `sum_{v >= R} phi(v)^2` with `phi(v) = v^(1-q)/(q-1) + 2 c v^(1-p)/(p-1)`, bounded by
/// `phi(R)^2 + int_R^inf phi^2`; infinite when the integral diverges.
fn tail_square_sum(q: f64, p: f64, c: f64, r: f64) -> f64 {
    let a = 1.0 / (q - 1.0);
    let b = 2.0 * c / (p - 1.0);
    let phi = a * r.powf(1.0 - q) + b * r.powf(1.0 - p);
    let int = |k: f64| {
        if k > 1.0 {
            r.powf(1.0 - k) / (k - 1.0)
        } else {
            f64::INFINITY
        }
    };
    phi * phi
        + a * a * int(2.0 * q - 2.0)
        + 2.0 * a * b * int(q + p - 2.0)
        + b * b * int(2.0 * p - 2.0)
}

fn edge_bound(tails: &[f64], delta: f64, far: f64) -> f64 {
    let mut s = Neumaier::new();
    for &t in tails {
        s.add(2.0 * t.abs() * delta + delta * delta);
    }
    2.0 * (s.value() + 2.0 * far)
}

pub fn edge_sigmas(grid: &CoefficientGrid) -> EdgeSigmas {
    let (e1, tails1) = edge_series(&grid.sums_over_t());
    let (e2, tails2) = edge_series(&grid.sums_over_s());
    let (bound, c1, c2) = match grid.decay {
        Decay::Compact => (0.0, true, true),
        _ => match exponents(grid.q1, grid.q2) {
            Ok(e) => {
                let (r1, r2) = grid.radii();
                let c = RhoEnvelope::fit(grid).c;
                let b = match rho_tail_mass(grid.q1, grid.q2, r1, r2) {
                    Ok(mass) => {
                        let delta = c * mass;
                        let pi = std::f64::consts::PI;
                        let cc1 = pi / (grid.q1 * (pi / grid.q1).sin());
                        let cc2 = pi / (grid.q2 * (pi / grid.q2).sin());
                        let p1 = grid.q1 * (1.0 - 1.0 / grid.q2);
                        let p2 = grid.q2 * (1.0 - 1.0 / grid.q1);
                        let far1 = c * c * tail_square_sum(grid.q2, p2, cc1, r2.max(1) as f64);
                        let far2 = c * c * tail_square_sum(grid.q1, p1, cc2, r1.max(1) as f64);
                        edge_bound(&tails1, delta, far1).max(edge_bound(&tails2, delta, far2))
                    }
                    Err(_) => f64::INFINITY,
                };
                (b, e.q_edge2 < 1.0, e.q_edge1 < 1.0)
            }
            Err(_) => (f64::INFINITY, false, false),
        },
    };
    EdgeSigmas {
        sigma2_edge1: e1,
        sigma2_edge2: e2,
        truncation_bound: if bound.is_nan() { f64::INFINITY } else { bound },
        edge1_converged: c1,
        edge2_converged: c2,
    }
}

/// `lambda^-1 sum G^2` over innovations within `delta lambda` (sup distance) of the
/// rectangle boundary, minus `x sigma2_edge1 + y sigma2_edge2`.
pub fn boundary_sum_identity_check(
    grid: &CoefficientGrid,
    x: f64,
    y: f64,
    lambda: f64,
    delta: f64,
) -> Result<f64> {
    if !(x > 0.0 && y > 0.0 && lambda > 0.0 && delta > 0.0) {
        return Err(invalid("x, y, lambda and delta must be positive"));
    }
    let n = floor_count(lambda * x);
    let m = floor_count(lambda * y);
    if n < 1 || m < 1 {
        return Err(Error::Range(format!("rectangle {n} x {m} is empty")));
    }
    let d = floor_count(delta * lambda).max(0);
    let (n, m) = (n as usize, m as usize);
    let (ni, mi) = (n as i64, m as i64);
    let (_, near) = g_square_sums(grid, n, m, Some(((1 - d, ni + d), (1 - d, mi + d))));
    let (_, far) = g_square_sums(grid, n, m, Some(((1 + d, ni - d), (1 + d, mi - d))));
    let es = edge_sigmas(grid);
    Ok((near - far) / lambda - (x * es.sigma2_edge1 + y * es.sigma2_edge2))
}

/// Closed form of `int_R bracket(u)^2 du` on the unit interval, for tests and
/// cross-checks: `[(Lp^2 + Lm^2) C(H) + 2 Lp Lm B(H+1/2, H+1/2)] / (H - 1/2)^2` with
/// `C(H) = Gamma(H+1/2)^2 / (Gamma(2H+1) sin(pi H))`.
pub fn bracket_norm_closed(h: f64, lp: f64, lm: f64) -> f64 {
    let a = h - 0.5;
    let c = gamma(h + 0.5).powi(2) / (gamma(2.0 * h + 1.0) * (std::f64::consts::PI * h).sin());
    ((lp * lp + lm * lm) * c + 2.0 * lp * lm * beta(a + 1.0, a + 1.0)) / (a * a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fbs_basic_values() {
        let p = FbsParams::new(0.5, 0.5).unwrap();
        assert_relative_eq!(
            fbs_covariance(p, (1.0, 1.0), (2.0, 3.0)).unwrap(),
            1.0,
            epsilon = 1e-15
        );
        let p = FbsParams::new(0.5, 0.0).unwrap();
        assert_eq!(fbs_covariance(p, (1.0, 0.5), (2.0, 0.7)).unwrap(), 0.5);
        let p = FbsParams::new(0.0, 0.0).unwrap();
        assert_eq!(fbs_covariance(p, (1.0, 2.0), (3.0, 4.0)).unwrap(), 0.25);
        assert_eq!(fbs_covariance(p, (1.0, 2.0), (1.0, 4.0)).unwrap(), 0.5);
        assert_eq!(fbs_covariance(p, (1.0, 2.0), (1.0, 2.0)).unwrap(), 1.0);
        assert!(fbs_covariance(p, (0.0, 2.0), (1.0, 2.0)).is_err());
        assert!(FbsParams::new(1.2, 0.5).is_err());
    }

    #[test]
    fn self_similarity() {
        let pairs = [((1.0, 1.0), (2.0, 3.0)), ((0.5, 2.0), (0.7, 0.1))];
        assert!(self_similarity_check(
            FbsParams { hx: 0.5, hy: 0.5 },
            (4.0, 9.0),
            &pairs
        ));
        assert!(self_similarity_check(
            FbsParams { hx: 0.0, hy: 0.3 },
            (4.0, 9.0),
            &pairs
        ));
        assert!(self_similarity_check(
            FbsParams { hx: 0.8, hy: 0.0 },
            (1.0, 1.0),
            &pairs
        ));
    }

    #[test]
    fn l2_closed_form() {
        let l = l2_integral(4.0, 4.0, &AngularFunction::Constant(1.0)).unwrap();
        assert_relative_eq!(l, HALF_PI, epsilon = 1e-9);
        let z = angular_integrals(3.0, 5.0, &AngularFunction::Constant(0.0)).unwrap();
        assert_eq!(
            (z.l1_plus, z.l1_minus, z.l2_plus, z.l2_minus),
            (0.0, 0.0, 0.0, 0.0)
        );
        assert!(matches!(
            l1_integrals(3.0, 0.9, &AngularFunction::Constant(1.0)),
            Err(Error::Divergent(_))
        ));
    }

    #[test]
    fn l1_anisotropic_constant() {
        // int (1 + |s|^(2 q2/q1))^(-q1/2) ds with q1 = 2, q2 = 3: 2 int_0^inf (1 + s^3)^(-1) ds
        let (lp, lm) = l1_integrals(2.0, 3.0, &AngularFunction::Constant(1.0)).unwrap();
        let exact = 2.0 * 2.0 * std::f64::consts::PI / (3.0 * 3f64.sqrt());
        assert_relative_eq!(lp, exact, epsilon = 1e-9);
        assert_relative_eq!(lm, exact, epsilon = 1e-9);
    }

    #[test]
    fn l1_table_matches_direct() {
        let l0 = AngularFunction::sample(|z| 1.0 + 0.5 * z + 0.25 * z.abs());
        let (lp, lm) = l1_integrals(4.0, 3.0, &l0).unwrap();
        let direct = |sign: f64| {
            let f = |s: f64| a_inf(4.0, 3.0, &l0, sign, s);
            2.0 * half_line(f, 0.0, 1.0, 1e-12).value
        };
        assert_relative_eq!(lp, direct(1.0), epsilon = 1e-8);
        assert_relative_eq!(lm, direct(-1.0), epsilon = 1e-8);
    }

    #[test]
    fn h1_closed_matches_definition() {
        let l0 = AngularFunction::sample(|z| 1.0 + 0.3 * z);
        let k = KernelSpec::new(KernelKind::H1, 2.5, 2.5, l0).unwrap();
        for u in [-3.0, -0.2, 0.1, 0.6, 0.99, 1.4, 7.0] {
            let a = kernel_h(&k, (1.0, 1.0), (u, 0.5)).unwrap();
            let b = h1_by_definition(&k, 1.0, u);
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
        assert_eq!(kernel_h(&k, (1.0, 1.0), (0.3, 1.5)).unwrap(), 0.0);
    }

    #[test]
    fn h2_symmetric_about_midpoint() {
        let k = KernelSpec::new(
            KernelKind::H2,
            2.2,
            2.4,
            AngularFunction::sample(|z| 1.0 + z),
        )
        .unwrap();
        for v in [-1.0, 0.2, 0.7, 2.5] {
            let a = kernel_h(&k, (1.0, 2.0), (0.5, v)).unwrap();
            let b = kernel_h(&k, (1.0, 2.0), (0.5, 2.0 - v)).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn sigma_paths_agree_with_closed_form() {
        let l0 = AngularFunction::sample(|z| 1.0 + 0.4 * z);
        let s = sigma1(2.2, 2.2, &l0).unwrap();
        let k = KernelSpec::new(KernelKind::H1, 2.2, 2.2, l0).unwrap();
        let exact = bracket_norm_closed(k.exponents().h1, k.l1_plus, k.l1_minus).sqrt();
        assert_relative_eq!(s, exact, max_relative = 1e-8);
    }

    #[test]
    fn iso_strip_matches_quadrature() {
        let k = KernelSpec::new(KernelKind::H0, 2.2, 2.2, AngularFunction::Constant(-0.3)).unwrap();
        for (tau, c) in [(0.3, 0.5), (1.5, 0.01), (0.01, 2.0), (-0.7, -0.4)] {
            let closed = k.iso_upper_strip(tau, c).unwrap();
            let num = -0.3 * half_line(|s| (tau * tau + s * s).powf(-1.1), c, 1.0, 1e-13).value;
            assert_relative_eq!(closed, num, max_relative = 1e-9);
        }
    }

    #[test]
    fn incomplete_beta_branches_agree() {
        for &(a, x) in &[(0.6, 0.3), (0.6, 0.49999), (1.1, 0.2), (0.6, 1e-12)] {
            let lib = beta_reg(a, 0.5, x);
            if lib > 0.0 {
                assert_relative_eq!(inc_beta(a, 0.5, x), lib, max_relative = 1e-12);
            }
        }
        assert_relative_eq!(
            inc_beta(0.6, 0.5, 0.5 - 1e-15),
            beta_reg(0.6, 0.5, 0.5),
            max_relative = 1e-12
        );
        let tiny = inc_beta(0.6, 0.5, 1e-30);
        assert_relative_eq!(tiny, 1e-18 / (0.6 * beta(0.6, 0.5)), max_relative = 1e-12);
    }

    #[test]
    fn pair_difference_edges() {
        let g = crate::coeff_families::pair_difference_coeffs();
        let e = edge_sigmas(&g);
        assert_eq!((e.sigma2_edge1, e.sigma2_edge2), (2.0, 0.0));
        assert_eq!(e.truncation_bound, 0.0);
        let r = boundary_sum_identity_check(&g, 1.0, 1.0, 64.0, 0.1).unwrap();
        assert!(r.abs() < 1e-12, "{r}");
    }
}
