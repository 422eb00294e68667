//! Truncated moving-average coefficient grids `a(t, s)` for the concrete model
//! families, plus the power-law envelope used to bound truncation error.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, gamma_lr};

use crate::error::{invalid, Error, Result};
use crate::numerics::{csum, Neumaier};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    IsotropicFracLaplacian,
    HeatOperator,
    Separable,
    PairDifference,
    Synthetic,
}

impl Family {
    pub fn tag(self) -> u8 {
        match self {
            Family::IsotropicFracLaplacian => 0,
            Family::HeatOperator => 1,
            Family::Separable => 2,
            Family::PairDifference => 3,
            Family::Synthetic => 4,
        }
    }

    pub fn from_tag(t: u8) -> Result<Self> {
        Ok(match t {
            0 => Family::IsotropicFracLaplacian,
            1 => Family::HeatOperator,
            2 => Family::Separable,
            3 => Family::PairDifference,
            4 => Family::Synthetic,
            _ => return Err(Error::Format(format!("unknown family tag {t}"))),
        })
    }
}

/// How the coefficients decay away from the origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decay {
    /// `a(t,s) ~ a_inf(t,s)` with exponents `(q1, q2)` and an angular function.
    Power,
    /// Finitely many nonzero coefficients (`q1 = q2 = inf`).
    Compact,
    /// Product of one-dimensional power laws; `q1`, `q2` hold the marginal exponents.
    Product,
}

/// Number of samples in a tabulated angular function.
pub const ANGULAR_SAMPLES: usize = 1025;

/// The angular function `L0` on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularFunction {
    Constant(f64),
    /// Equally spaced samples on `[-1, 1]`, linearly interpolated.
    Table(Vec<f64>),
    /// Far-field profile of the heat-operator family.
    Heat {
        d: f64,
        theta: f64,
    },
}

impl AngularFunction {
    pub fn sample<F: Fn(f64) -> f64>(f: F) -> Self {
        let n = ANGULAR_SAMPLES;
        AngularFunction::Table(
            (0..n)
                .map(|i| f(-1.0 + 2.0 * i as f64 / (n - 1) as f64))
                .collect(),
        )
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            AngularFunction::Constant(c) => *c,
            AngularFunction::Table(v) => {
                let n = v.len();
                let x = ((z.clamp(-1.0, 1.0) + 1.0) * 0.5 * (n - 1) as f64).min((n - 1) as f64);
                let i = (x.floor() as usize).min(n - 2);
                let w = x - i as f64;
                if w == 0.0 {
                    v[i]
                } else {
                    v[i] + (v[i + 1] - v[i]) * w
                }
            }
            AngularFunction::Heat { d, theta } => {
                if z <= 0.0 || z > 1.0 {
                    return 0.0;
                }
                let k = 1.0 - theta;
                let root = ((1.0 - z) * (1.0 + z)).sqrt() / z;
                z.powf(d - 1.5) * (-root / (2.0 * k)).exp()
                    / (gamma(*d) * (2.0 * std::f64::consts::PI * k).sqrt())
            }
        }
    }

    /// Tabulated form, as stored in grid files.
    pub fn samples(&self) -> Vec<f64> {
        match self {
            AngularFunction::Table(v) => v.clone(),
            other => {
                let n = ANGULAR_SAMPLES;
                (0..n)
                    .map(|i| other.eval(-1.0 + 2.0 * i as f64 / (n - 1) as f64))
                    .collect()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            AngularFunction::Constant(c) => *c == 0.0,
            AngularFunction::Table(v) => v.iter().all(|&x| x == 0.0),
            AngularFunction::Heat { .. } => false,
        }
    }

    /// Breakpoints of the piecewise-linear interpolant (empty for smooth variants).
    pub fn kinks(&self) -> Vec<f64> {
        match self {
            AngularFunction::Table(v) => {
                let n = v.len();
                (1..n - 1)
                    .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
                    .collect()
            }
            _ => Vec::new(),
        }
    }
}

/// The limit kernel `a_inf(t, s) = rho~^(-q1) L0(t / rho~)`, `rho~ = (t^2 + |s|^(2 q2/q1))^(1/2)`.
pub fn a_inf(q1: f64, q2: f64, l0: &AngularFunction, t: f64, s: f64) -> f64 {
    let r2 = t * t + s.abs().powf(2.0 * q2 / q1);
    if r2 == 0.0 {
        return f64::INFINITY;
    }
    let r = r2.sqrt();
    r.powf(-q1) * l0.eval(t / r)
}

/// Truncated coefficients on `[-R1, R1] x [-R2, R2]`, stored row-major with `t` outer.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientGrid {
    r1: usize,
    r2: usize,
    values: Vec<f64>,
    pub q1: f64,
    pub q2: f64,
    pub family: Family,
    pub decay: Decay,
    pub params: Vec<f64>,
    pub zero_sum_residual: f64,
}

impl CoefficientGrid {
    pub fn new(
        family: Family,
        decay: Decay,
        q1: f64,
        q2: f64,
        params: Vec<f64>,
        r1: usize,
        r2: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != (2 * r1 + 1) * (2 * r2 + 1) {
            return Err(invalid(format!(
                "grid has {} values, expected {}",
                values.len(),
                (2 * r1 + 1) * (2 * r2 + 1)
            )));
        }
        if let Some(i) = values.iter().position(|x| !x.is_finite()) {
            return Err(invalid(format!("non-finite coefficient at flat index {i}")));
        }
        let zero_sum_residual = csum(values.iter().copied());
        Ok(CoefficientGrid {
            r1,
            r2,
            values,
            q1,
            q2,
            family,
            decay,
            params,
            zero_sum_residual,
        })
    }

    pub fn radii(&self) -> (usize, usize) {
        (self.r1, self.r2)
    }

    pub fn dims(&self) -> (usize, usize) {
        (2 * self.r1 + 1, 2 * self.r2 + 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `a(t, s)`, zero outside the stored window.
    pub fn get(&self, t: i64, s: i64) -> f64 {
        let (r1, r2) = (self.r1 as i64, self.r2 as i64);
        if t.abs() > r1 || s.abs() > r2 {
            return 0.0;
        }
        self.values[((t + r1) * (2 * r2 + 1) + s + r2) as usize]
    }

    /// Angular function recovered from the family parameters (power-law families only).
    pub fn angular(&self) -> Option<AngularFunction> {
        match self.family {
            Family::IsotropicFracLaplacian => Some(AngularFunction::Constant(
                isotropic_far_constant(self.params[0]),
            )),
            Family::HeatOperator => Some(AngularFunction::Heat {
                d: self.params[0],
                theta: self.params[1],
            }),
            Family::Synthetic => Some(AngularFunction::Table(self.params.clone())),
            Family::Separable | Family::PairDifference => None,
        }
    }

    /// Row sums `sum_t a(t, s)` indexed by `s + R2`.
    pub fn sums_over_t(&self) -> Vec<f64> {
        let (n1, n2) = self.dims();
        (0..n2)
            .map(|j| csum((0..n1).map(|i| self.values[i * n2 + j])))
            .collect()
    }

    /// Column sums `sum_s a(t, s)` indexed by `t + R1`.
    pub fn sums_over_s(&self) -> Vec<f64> {
        let (n1, n2) = self.dims();
        (0..n1)
            .map(|i| csum(self.values[i * n2..(i + 1) * n2].iter().copied()))
            .collect()
    }

    pub fn sum_sq(&self) -> f64 {
        csum(self.values.iter().map(|a| a * a))
    }

    pub fn l1_norm(&self) -> f64 {
        csum(self.values.iter().map(|a| a.abs()))
    }
}

/// Exact (compensated) sum of all stored coefficients.
pub fn zero_sum_residual(grid: &CoefficientGrid) -> f64 {
    csum(grid.values().iter().copied())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FracWeights {
    pub d: f64,
    pub weights: Vec<f64>,
}

impl FracWeights {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

fn check_frac_order(d: f64) -> Result<()> {
    if !d.is_finite() || d == 0.0 || d.abs() >= 1.0 {
        return Err(invalid(format!(
            "fractional order d = {d} must lie in (-1, 1) without 0"
        )));
    }
    Ok(())
}

/// Coefficients of `(1 - z)^d`: `psi_j(d) = Gamma(j - d) / (Gamma(j + 1) Gamma(-d))`, `j = 0..=J`.
pub fn psi_weights(d: f64, j_max: usize) -> Result<FracWeights> {
    check_frac_order(d)?;
    let mut w = Vec::with_capacity(j_max + 1);
    w.push(1.0);
    for j in 1..=j_max {
        let prev = w[j - 1];
        w.push(prev * (j as f64 - 1.0 - d) / j as f64);
    }
    Ok(FracWeights { d, weights: w })
}

/// Square transition table of a planar walk, centred at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition2 {
    pub radius: usize,
    pub values: Vec<f64>,
}

impl Transition2 {
    pub fn get(&self, u: i64, v: i64) -> f64 {
        let r = self.radius as i64;
        if u.abs() > r || v.abs() > r {
            return 0.0;
        }
        self.values[((u + r) * (2 * r + 1) + v + r) as usize]
    }

    pub fn total(&self) -> f64 {
        csum(self.values.iter().copied())
    }
}

/// `j`-step law of the nearest-neighbour walk on `Z^2`, by iterated convolution.
pub fn rw2d_transition(j: usize) -> Transition2 {
    let mut r = 0usize;
    let mut cur = vec![1.0];
    for _ in 0..j {
        let nr = r + 1;
        let nw = 2 * nr + 1;
        let ow = 2 * r + 1;
        let mut next = vec![0.0; nw * nw];
        for a in 0..ow {
            for b in 0..ow {
                let p = cur[a * ow + b];
                if p == 0.0 {
                    continue;
                }
                let (ia, ib) = (a + 1, b + 1);
                let q = 0.25 * p;
                next[(ia - 1) * nw + ib] += q;
                next[(ia + 1) * nw + ib] += q;
                next[ia * nw + ib - 1] += q;
                next[ia * nw + ib + 1] += q;
            }
        }
        cur = next;
        r = nr;
    }
    Transition2 {
        radius: r,
        values: cur,
    }
}

/// `u`-step law of the lazy walk on `Z` (stay with prob `theta`, else +-1), indexed by `v + u`.
pub fn rw1d_lazy_transition(theta: f64, u: usize) -> Result<Vec<f64>> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("theta = {theta} must lie in (0, 1)")));
    }
    Ok(lazy_walk_rows(theta, u).pop().expect("at least one row"))
}

fn lazy_walk_rows(theta: f64, u_max: usize) -> Vec<Vec<f64>> {
    let side = 0.5 * (1.0 - theta);
    let mut rows = Vec::with_capacity(u_max + 1);
    rows.push(vec![1.0]);
    for u in 1..=u_max {
        let prev: &Vec<f64> = &rows[u - 1];
        let mut next = vec![0.0; 2 * u + 1];
        for (k, &p) in prev.iter().enumerate() {
            next[k] += side * p;
            next[k + 1] += theta * p;
            next[k + 2] += side * p;
        }
        rows.push(next);
    }
    rows
}

/// Far-field constant `Gamma(1-d) / (pi Gamma(d))` of the isotropic family (negative for `d < 0`).
pub fn isotropic_far_constant(d: f64) -> f64 {
    gamma(1.0 - d) / (std::f64::consts::PI * gamma(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsotropicOptions {
    /// Number of series terms as a multiple of `R^2`.
    pub series_factor: f64,
    pub max_terms: usize,
    /// Replace the discarded terms by their Gaussian local-limit approximation.
    pub tail_completion: bool,
    /// Maximal acceptable error estimate of the discarded series tail.
    pub tolerance: f64,
    /// Force an exact number of series terms (skips the tolerance check).
    pub terms: Option<usize>,
    /// Move the truncation residual into `a(0, 0)` so the stored grid sums to zero.
    pub zero_sum: bool,
}

impl Default for IsotropicOptions {
    fn default() -> Self {
        IsotropicOptions {
            series_factor: 4.0,
            max_terms: 1024,
            tail_completion: true,
            tolerance: 1e-6,
            terms: None,
            zero_sum: false,
        }
    }
}

/// Error estimate after `j` series terms: a bound on the dropped tail, divided
/// by `j` when the tail is completed analytically.
fn isotropic_tail_estimate(d: f64, j: usize, completed: bool) -> f64 {
    let jj = j.max(2) as f64;
    let psi = (1..=j.max(2))
        .fold(1.0f64, |p, k| p * (k as f64 - 1.0 + d) / k as f64)
        .abs();
    let bound = psi * std::f64::consts::FRAC_2_PI * (jj / (jj - 1.0)) / (1.0 - d);
    if completed {
        bound / jj
    } else {
        bound
    }
}

/// Coefficients of the fractional lattice Laplacian `(1 - Delta)^(-d)` (`d < 0`):
/// `a(u,v) = sum_j psi_j(-d) p_j(u,v)` with `p_j` the `j`-step law of the planar walk.
pub fn isotropic_coeffs(d: f64, r: usize, opts: &IsotropicOptions) -> Result<CoefficientGrid> {
    if !(d > -1.0 && d < 0.0) {
        return Err(invalid(format!(
            "isotropic family needs d in (-1, 0), got {d}"
        )));
    }
    if r == 0 {
        return Err(invalid("truncation radius must be positive"));
    }
    let j_max = match opts.terms {
        Some(j) => j,
        None => {
            let mut j = ((opts.series_factor * (r * r) as f64).ceil() as usize)
                .clamp(2, opts.max_terms.max(2));
            while isotropic_tail_estimate(d, j, opts.tail_completion) > opts.tolerance
                && j < opts.max_terms
            {
                j = (2 * j).min(opts.max_terms);
            }
            let est = isotropic_tail_estimate(d, j, opts.tail_completion);
            if est > opts.tolerance {
                return Err(Error::Tolerance(format!(
                    "series tail estimate {est:.3e} exceeds tolerance {:.3e} at the cap of {} terms",
                    opts.tolerance, opts.max_terms
                )));
            }
            j
        }
    };
    let psi = psi_weights(-d, j_max)?.weights;
    let w = 2 * r + 1;
    let ri = r as i64;
    let mut acc = vec![Neumaier::new(); w * w];

    // p_j(u, v) = b_j(u + v) b_j(u - v), b_j the j-step law of the simple walk on Z.
    let off = j_max as i64;
    let mut b = vec![0.0f64; 2 * j_max + 3];
    b[off as usize] = 1.0;
    let mut nb = b.clone();
    for (j, &pj) in psi.iter().enumerate() {
        if j > 0 {
            let jj = j as i64;
            for m in -jj..=jj {
                let idx = (m + off) as usize;
                let left = if m - 1 >= -off { b[idx - 1] } else { 0.0 };
                let right = b[idx + 1];
                nb[idx] = 0.5 * (left + right);
            }
            std::mem::swap(&mut b, &mut nb);
        }
        let jj = j as i64;
        let reach = {
            let mut m = jj;
            while m > 0 && b[(m + off) as usize] < 1e-40 {
                m -= 2;
            }
            m.max(0)
        };
        let reach = reach.min(2 * ri);
        for u in -ri..=ri {
            let vlo = (-ri).max(-reach - u).max(u - reach);
            let vhi = ri.min(reach - u).min(u + reach);
            let mut v = vlo;
            if (u + v - jj).rem_euclid(2) != 0 {
                v += 1;
            }
            while v <= vhi {
                let p = b[(u + v + off) as usize] * b[(u - v + off) as usize];
                acc[((u + ri) as usize) * w + (v + ri) as usize].add(pj * p);
                v += 2;
            }
        }
    }

    let mut values: Vec<f64> = acc.iter().map(|a| a.value()).collect();
    if opts.tail_completion {
        let g = gamma(d);
        let a = 1.0 - d;
        let ga = gamma(a);
        for u in -ri..=ri {
            for v in -ri..=ri {
                let mut j0 = j_max as i64 + 1;
                if (j0 - u - v).rem_euclid(2) != 0 {
                    j0 += 1;
                }
                let l = (j0 - 1) as f64;
                let r2 = (u * u + v * v) as f64;
                let tail = if r2 == 0.0 {
                    l.powf(d - 1.0) / ((1.0 - d) * std::f64::consts::PI * g)
                } else {
                    r2.powf(d - 1.0) * ga * gamma_lr(a, r2 / l) / (std::f64::consts::PI * g)
                };
                values[((u + ri) as usize) * w + (v + ri) as usize] += tail;
            }
        }
    }
    if opts.zero_sum {
        let res = csum(values.iter().copied());
        values[r * w + r] -= res;
    }
    let q = 2.0 * (1.0 - d);
    CoefficientGrid::new(
        Family::IsotropicFracLaplacian,
        Decay::Power,
        q,
        q,
        vec![d],
        r,
        r,
        values,
    )
}

/// Heat-operator coefficients `a(u,v) = psi_u(-d) q_theta(u,v) 1(u >= 0)` on `[-R1, R1]^2`.
pub fn heat_coeffs(d: f64, theta: f64, r1: usize) -> Result<CoefficientGrid> {
    if !(d > -0.75 && d < 0.0) {
        return Err(invalid(format!(
            "heat family needs d in (-3/4, 0), got {d}"
        )));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(invalid(format!("theta = {theta} must lie in (0, 1)")));
    }
    if r1 == 0 {
        return Err(invalid("truncation radius must be positive"));
    }
    let psi = psi_weights(-d, r1)?.weights;
    let rows = lazy_walk_rows(theta, r1);
    let r2 = r1;
    let w = 2 * r2 + 1;
    let mut values = vec![0.0; (2 * r1 + 1) * w];
    for u in 0..=r1 {
        let row = &rows[u];
        for (k, &p) in row.iter().enumerate() {
            let v = k as i64 - u as i64;
            values[(u + r1) * w + (v + r2 as i64) as usize] = psi[u] * p;
        }
    }
    let q1 = 1.5 - d;
    CoefficientGrid::new(
        Family::HeatOperator,
        Decay::Power,
        q1,
        2.0 * q1,
        vec![d, theta],
        r1,
        r2,
        values,
    )
}

/// Separable coefficients `psi_u(-d1) psi_v(-d2)` on the quadrant `[0, R1] x [0, R2]`.
pub fn separable_coeffs(d1: f64, d2: f64, r1: usize, r2: usize) -> Result<CoefficientGrid> {
    for d in [d1, d2] {
        if !(d > -0.5 && d < 0.5) || d == 0.0 {
            return Err(invalid(format!(
                "separable family needs d in (-1/2, 1/2) without 0, got {d}"
            )));
        }
    }
    if r1 == 0 || r2 == 0 {
        return Err(invalid("truncation radii must be positive"));
    }
    let p1 = psi_weights(-d1, r1)?.weights;
    let p2 = psi_weights(-d2, r2)?.weights;
    let w = 2 * r2 + 1;
    let mut values = vec![0.0; (2 * r1 + 1) * w];
    for u in 0..=r1 {
        for v in 0..=r2 {
            values[(u + r1) * w + v + r2] = p1[u] * p2[v];
        }
    }
    CoefficientGrid::new(
        Family::Separable,
        Decay::Product,
        1.0 - d1,
        1.0 - d2,
        vec![d1, d2],
        r1,
        r2,
        values,
    )
}

/// The two-tap field `X(t,s) = e(t,s) - e(t,s-1)`.
pub fn pair_difference_coeffs() -> CoefficientGrid {
    let mut values = vec![0.0; 9];
    values[4] = 1.0;
    values[5] = -1.0;
    CoefficientGrid::new(
        Family::PairDifference,
        Decay::Compact,
        f64::INFINITY,
        f64::INFINITY,
        Vec::new(),
        1,
        1,
        values,
    )
    .expect("static grid is valid")
}

/// Coefficients equal to `a_inf(t, s)` off the origin, with `a(0,0)` chosen so the grid sums to zero.
pub fn synthetic_coeffs(
    q1: f64,
    q2: f64,
    l0: &AngularFunction,
    r1: usize,
    r2: usize,
) -> Result<CoefficientGrid> {
    if !(q1 > 0.0 && q2 > 0.0) {
        return Err(invalid("q1 and q2 must be positive"));
    }
    let q = 1.0 / q1 + 1.0 / q2;
    if q >= 1.0 {
        return Err(Error::OutOfModel(format!(
            "Q = {q} must be < 1 for a summable synthetic grid"
        )));
    }
    if r1 == 0 || r2 == 0 {
        return Err(invalid("truncation radii must be positive"));
    }
    let samples = l0.samples();
    if samples.len() < 2 || samples.iter().any(|x| !x.is_finite()) {
        return Err(invalid("angular function must be bounded (finite samples)"));
    }
    let table = AngularFunction::Table(samples.clone());
    let w = 2 * r2 + 1;
    let mut values = vec![0.0; (2 * r1 + 1) * w];
    let mut acc = Neumaier::new();
    for i in 0..2 * r1 + 1 {
        let t = i as f64 - r1 as f64;
        for j in 0..w {
            let s = j as f64 - r2 as f64;
            if i == r1 && j == r2 {
                continue;
            }
            let a = a_inf(q1, q2, &table, t, s);
            values[i * w + j] = a;
            acc.add(a);
        }
    }
    values[r1 * w + r2] = -acc.value();
    let mut g = CoefficientGrid::new(
        Family::Synthetic,
        Decay::Power,
        q1,
        q2,
        samples,
        r1,
        r2,
        values,
    )?;
    // The origin absorbs the rounding of the compensated sum too.
    let resid = zero_sum_residual(&g);
    g.values[r1 * w + r2] -= resid;
    g.zero_sum_residual = zero_sum_residual(&g);
    Ok(g)
}

/// `rho(t, s) = (|t|^q1 + |s|^q2)^(-1)`, with a constant `C` such that `|a| <= C rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEnvelope {
    pub q1: f64,
    pub q2: f64,
    pub c: f64,
}

impl RhoEnvelope {
    pub fn rho(q1: f64, q2: f64, t: f64, s: f64) -> f64 {
        1.0 / (t.abs().powf(q1) + s.abs().powf(q2))
    }

    /// Smallest `C` with `|a(t,s)| <= C rho(t,s)` on the grid, origin excluded.
    pub fn fit(grid: &CoefficientGrid) -> Self {
        let (r1, r2) = grid.radii();
        let (r1, r2) = (r1 as i64, r2 as i64);
        let mut c = 0.0f64;
        for t in -r1..=r1 {
            for s in -r2..=r2 {
                if t == 0 && s == 0 {
                    continue;
                }
                let a = grid.get(t, s).abs();
                if a > 0.0 {
                    c = c.max(a / Self::rho(grid.q1, grid.q2, t as f64, s as f64));
                }
            }
        }
        RhoEnvelope {
            q1: grid.q1,
            q2: grid.q2,
            c,
        }
    }
}

/// Upper bound on `sum rho(t, s)` over lattice points outside `[-R1, R1] x [-R2, R2]`.
pub fn rho_tail_mass(q1: f64, q2: f64, r1: usize, r2: usize) -> Result<f64> {
    if !(q1 > 0.0 && q2 > 0.0) {
        return Err(invalid("q1 and q2 must be positive"));
    }
    let q = 1.0 / q1 + 1.0 / q2;
    if q >= 1.0 {
        return Err(Error::OutOfModel(format!(
            "Q = {q} must be < 1 for a finite tail mass"
        )));
    }
    if r1 == 0 || r2 == 0 {
        return Err(invalid("truncation radii must be positive"));
    }
    let pi = std::f64::consts::PI;
    let p1 = q1 * (1.0 - 1.0 / q2);
    let p2 = q2 * (1.0 - 1.0 / q1);
    let c1 = pi / (q1 * (pi / q1).sin());
    let c2 = pi / (q2 * (pi / q2).sin());
    let (x1, x2) = (r1 as f64, r2 as f64);
    let t_part = 2.0 * (x1.powf(1.0 - q1) / (q1 - 1.0) + 2.0 * c2 * x1.powf(1.0 - p1) / (p1 - 1.0));
    let s_part = 2.0 * (x2.powf(1.0 - q2) / (q2 - 1.0) + 2.0 * c1 * x2.powf(1.0 - p2) / (p2 - 1.0));
    Ok(t_part + s_part)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psi_small_cases() {
        let w = psi_weights(0.3, 2).unwrap().weights;
        assert_eq!(w[0], 1.0);
        assert_relative_eq!(w[1], -0.3, epsilon = 1e-15);
        assert_relative_eq!(w[2], -0.105, epsilon = 1e-15);
        assert_eq!(psi_weights(-0.4, 0).unwrap().weights, vec![1.0]);
        assert!(psi_weights(0.0, 3).is_err());
        assert!(psi_weights(1.0, 3).is_err());
        assert!(psi_weights(-1.2, 3).is_err());
    }

    #[test]
    fn walk_tables() {
        let p1 = rw2d_transition(1);
        for (u, v) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            assert_eq!(p1.get(u, v), 0.25);
        }
        let p2 = rw2d_transition(2);
        assert_eq!(p2.get(0, 0), 0.25);
        assert_eq!(p2.get(2, 0), 1.0 / 16.0);
        assert_eq!(p2.get(0, -2), 1.0 / 16.0);
        assert_eq!(p2.get(1, -1), 0.125);
        let q = rw1d_lazy_transition(0.4, 2).unwrap();
        assert_relative_eq!(q[2], 0.34, epsilon = 1e-15);
        assert_relative_eq!(q[1], 0.24, epsilon = 1e-15);
        assert_relative_eq!(q[0], 0.09, epsilon = 1e-15);
        assert!(rw1d_lazy_transition(1.0, 2).is_err());
    }

    #[test]
    fn isotropic_raw_partial_sum() {
        let opts = IsotropicOptions {
            tail_completion: false,
            terms: Some(2),
            ..Default::default()
        };
        let g = isotropic_coeffs(-0.3, 3, &opts).unwrap();
        // 1 + psi_1(0.3) p_1(0,0) + psi_2(0.3) p_2(0,0) = 1 + 0 - 0.105 / 4
        assert_relative_eq!(g.get(0, 0), 0.97375, epsilon = 1e-15);
    }

    #[test]
    fn isotropic_far_field_sign() {
        let g = isotropic_coeffs(-0.3, 16, &IsotropicOptions::default()).unwrap();
        assert!(isotropic_far_constant(-0.3) < 0.0);
        assert!(g.get(16, 5) < 0.0 && g.get(-9, 12) < 0.0);
    }

    #[test]
    fn heat_small_cases() {
        let g = heat_coeffs(-0.25, 0.4, 4).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_relative_eq!(g.get(1, 0), -0.1, epsilon = 1e-15);
        for v in -4..=4 {
            assert_eq!(g.get(-1, v), 0.0);
        }
        assert_eq!(g.get(2, 3), 0.0);
    }

    #[test]
    fn separable_and_pair() {
        let g = separable_coeffs(-0.2, -0.2, 3, 3).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
        assert_relative_eq!(g.get(1, 1), 0.04, epsilon = 1e-15);
        assert_eq!(g.get(-1, 2), 0.0);
        let p = pair_difference_coeffs();
        assert_eq!(p.get(0, 0), 1.0);
        assert_eq!(p.get(0, 1), -1.0);
        assert_eq!(p.zero_sum_residual, 0.0);
        assert_eq!(p.values().iter().filter(|&&x| x != 0.0).count(), 2);
        assert!(p.sums_over_s().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn synthetic_values() {
        let g = synthetic_coeffs(4.0, 4.0, &AngularFunction::Constant(1.0), 4, 4).unwrap();
        assert_relative_eq!(g.get(1, 0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(g.get(0, 1), 1.0, epsilon = 1e-15);
        assert_relative_eq!(g.get(2, 0), 0.0625, epsilon = 1e-15);
        assert!(g.zero_sum_residual.abs() < 1e-15);
        assert_eq!(g.get(3, 2), g.get(3, -2));
        assert!(synthetic_coeffs(2.0, 2.0, &AngularFunction::Constant(1.0), 4, 4).is_err());
    }

    #[test]
    fn rho_bound_shrinks() {
        let b: Vec<f64> = [16, 32, 64]
            .iter()
            .map(|&r| rho_tail_mass(4.0, 4.0, r, r).unwrap())
            .collect();
        assert!(b[0] > b[1] && b[1] > b[2] && b[2] > 0.0);
        for w in b.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.5, "ratio {ratio}");
        }
    }
}
