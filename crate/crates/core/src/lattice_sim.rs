//! Realisations of `X(t,s) = sum a(t-u, s-v) e(u,v)` on finite windows, rectangle
//! partial sums, and the exact variance of those sums.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff_families::{CoefficientGrid, Decay, Family};
use crate::error::{invalid, Error, Result};
use crate::numerics::fft2::{smooth_size, Fft2};
use crate::numerics::philox::{key_from_seed, open_unit, philox4x32};
use crate::numerics::{csum, Neumaier};

pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnovationFamily {
    Gaussian,
    Rademacher,
    CenteredUniform,
}

/// Standardised i.i.d. innovations. Cell `(u, v)` of replicate `r` is the Philox4x32-10
/// block with key `base_seed` and counter `(u, v, r_lo, r_hi)` (coordinates as
/// two's-complement `u32`), mapped to the requested law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnovationSpec {
    pub family: InnovationFamily,
    pub base_seed: u64,
}

impl InnovationSpec {
    pub fn gaussian(seed: u64) -> Self {
        InnovationSpec {
            family: InnovationFamily::Gaussian,
            base_seed: seed,
        }
    }

    #[inline]
    pub fn draw(&self, u: i64, v: i64, replicate: u64) -> f64 {
        let ctr = [
            u as u32,
            v as u32,
            replicate as u32,
            (replicate >> 32) as u32,
        ];
        let x = philox4x32(ctr, key_from_seed(self.base_seed));
        match self.family {
            InnovationFamily::Gaussian => {
                let u1 = open_unit(x[0], x[1]);
                let u2 = open_unit(x[2], x[3]);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            }
            InnovationFamily::Rademacher => {
                if x[0] >> 31 == 1 {
                    1.0
                } else {
                    -1.0
                }
            }
            InnovationFamily::CenteredUniform => (open_unit(x[0], x[1]) - 0.5) * 12f64.sqrt(),
        }
    }
}

/// Identity of the coefficients a slab was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoeffMeta {
    pub family: Family,
    pub decay: Decay,
    pub radii: (usize, usize),
    pub q1: f64,
    pub q2: f64,
    pub params: Vec<f64>,
}

impl CoeffMeta {
    pub fn of(g: &CoefficientGrid) -> Self {
        CoeffMeta {
            family: g.family,
            decay: g.decay,
            radii: g.radii(),
            q1: g.q1,
            q2: g.q2,
            params: g.params.clone(),
        }
    }
}

/// Field values on the window `[1, T1] x [1, T2]`, row-major with `t` outer.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSlab {
    pub t1: usize,
    pub t2: usize,
    pub values: Vec<f64>,
    pub coeff_meta: CoeffMeta,
    pub seed_info: (u64, u64),
    pub innovation: InnovationFamily,
}

impl FieldSlab {
    /// `X(t, s)` for `1 <= t <= T1`, `1 <= s <= T2`.
    pub fn get(&self, t: usize, s: usize) -> f64 {
        self.values[(t - 1) * self.t2 + (s - 1)]
    }
}

/// Frequency-domain simulator for a fixed grid and window; reuses the kernel spectrum.
///
/// Replicates are generated in pairs `(2k, 2k+1)` packed into the real and imaginary
/// parts of one complex transform, so a replicate's values do not depend on which
/// other replicates are requested.
pub struct FieldSimulator {
    grid: Arc<CoefficientGrid>,
    t1: usize,
    t2: usize,
    p1: usize,
    p2: usize,
    fft: Fft2,
    kernel: Vec<Complex64>,
}

fn slab_bytes(p1: usize, p2: usize) -> usize {
    // kernel spectrum, working buffer and transpose scratch
    3 * p1 * p2 * std::mem::size_of::<Complex64>()
}

impl FieldSimulator {
    pub fn new(grid: &CoefficientGrid, t1: usize, t2: usize, memory_budget: usize) -> Result<Self> {
        if t1 == 0 || t2 == 0 {
            return Err(invalid("window sizes must be at least 1"));
        }
        let (r1, r2) = grid.radii();
        let p1 = smooth_size(t1 + 2 * r1);
        let p2 = smooth_size(t2 + 2 * r2);
        let need = slab_bytes(p1, p2);
        if need > memory_budget {
            return Err(Error::ResourceLimit(format!(
                "a {}x{} window with margins ({p1}x{p2} transform) needs about {} MiB, over the budget of {} MiB",
                t1,
                t2,
                need >> 20,
                memory_budget >> 20
            )));
        }
        let fft = Fft2::new(p1, p2);
        let mut kernel = vec![Complex64::default(); p1 * p2];
        let (n1, n2) = grid.dims();
        let vals = grid.values();
        for i in 0..n1 {
            let t = i as i64 - r1 as i64;
            let ti = t.rem_euclid(p1 as i64) as usize;
            for j in 0..n2 {
                let s = j as i64 - r2 as i64;
                let sj = s.rem_euclid(p2 as i64) as usize;
                kernel[ti * p2 + sj] = Complex64::new(vals[i * n2 + j], 0.0);
            }
        }
        fft.forward(&mut kernel);
        Ok(FieldSimulator {
            grid: Arc::new(grid.clone()),
            t1,
            t2,
            p1,
            p2,
            fft,
            kernel,
        })
    }

    pub fn window(&self) -> (usize, usize) {
        (self.t1, self.t2)
    }

    /// Slabs of replicates `2k` and `2k + 1`.
    pub fn simulate_pair(&self, innov: &InnovationSpec, k: u64) -> (FieldSlab, FieldSlab) {
        let (r1, r2) = self.grid.radii();
        let (e1, e2) = (self.t1 + 2 * r1, self.t2 + 2 * r2);
        let (ra, rb) = (2 * k, 2 * k + 1);
        let mut buf = vec![Complex64::default(); self.p1 * self.p2];
        for i in 0..e1 {
            let u = 1 - r1 as i64 + i as i64;
            let row = &mut buf[i * self.p2..i * self.p2 + e2];
            for (j, z) in row.iter_mut().enumerate() {
                let v = 1 - r2 as i64 + j as i64;
                *z = Complex64::new(innov.draw(u, v, ra), innov.draw(u, v, rb));
            }
        }
        self.fft.forward(&mut buf);
        for (z, k) in buf.iter_mut().zip(&self.kernel) {
            *z *= k;
        }
        self.fft.inverse(&mut buf);
        let mut a = Vec::with_capacity(self.t1 * self.t2);
        let mut b = Vec::with_capacity(self.t1 * self.t2);
        for t in 1..=self.t1 {
            let row = (t - 1 + r1) * self.p2;
            for s in 1..=self.t2 {
                let z = buf[row + s - 1 + r2];
                a.push(z.re);
                b.push(z.im);
            }
        }
        let meta = CoeffMeta::of(&self.grid);
        let mk = |values, rep| FieldSlab {
            t1: self.t1,
            t2: self.t2,
            values,
            coeff_meta: meta.clone(),
            seed_info: (innov.base_seed, rep),
            innovation: innov.family,
        };
        (mk(a, ra), mk(b, rb))
    }

    pub fn simulate(&self, innov: &InnovationSpec, replicate: u64) -> FieldSlab {
        let (a, b) = self.simulate_pair(innov, replicate / 2);
        if replicate % 2 == 0 {
            a
        } else {
            b
        }
    }
}

/// One realisation on `[1, T1] x [1, T2]` via the frequency-domain path.
pub fn simulate_field(
    coeffs: &CoefficientGrid,
    t1: usize,
    t2: usize,
    innov: &InnovationSpec,
    replicate: u64,
    memory_budget: usize,
) -> Result<FieldSlab> {
    Ok(FieldSimulator::new(coeffs, t1, t2, memory_budget)?.simulate(innov, replicate))
}

/// Same realisation as [`simulate_field`] by direct summation over the coefficient window.
pub fn simulate_field_direct(
    coeffs: &CoefficientGrid,
    t1: usize,
    t2: usize,
    innov: &InnovationSpec,
    replicate: u64,
) -> Result<FieldSlab> {
    if t1 == 0 || t2 == 0 {
        return Err(invalid("window sizes must be at least 1"));
    }
    let (r1, r2) = coeffs.radii();
    let (r1, r2) = (r1 as i64, r2 as i64);
    let taps: Vec<(i64, i64, f64)> = (-r1..=r1)
        .flat_map(|t| (-r2..=r2).map(move |s| (t, s)))
        .map(|(t, s)| (t, s, coeffs.get(t, s)))
        .filter(|x| x.2 != 0.0)
        .collect();
    let mut values = Vec::with_capacity(t1 * t2);
    for t in 1..=t1 as i64 {
        for s in 1..=t2 as i64 {
            let mut acc = Neumaier::new();
            for &(dt, ds, a) in &taps {
                acc.add(a * innov.draw(t - dt, s - ds, replicate));
            }
            values.push(acc.value());
        }
    }
    Ok(FieldSlab {
        t1,
        t2,
        values,
        coeff_meta: CoeffMeta::of(coeffs),
        seed_info: (innov.base_seed, replicate),
        innovation: innov.family,
    })
}

/// `floor(x)` for positive `x`, snapping values within `1e-12` (relative) of an integer.
/// Protects against `powf` returning `7.999999999999999` for `512^(1/3)`.
pub fn floor_count(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        r as i64
    } else {
        x.floor() as i64
    }
}

/// Rectangle size `(floor(lambda x), floor(lambda^gamma y))`.
pub fn rect_size(lambda: f64, gamma: f64, x: f64, y: f64) -> Result<(usize, usize)> {
    if !(lambda > 0.0 && gamma > 0.0 && x > 0.0 && y > 0.0) {
        return Err(invalid("lambda, gamma, x and y must be positive"));
    }
    let n = floor_count(lambda * x);
    let m = floor_count(lambda.powf(gamma) * y);
    if n < 1 || m < 1 {
        return Err(Error::Range(format!(
            "rectangle floor({lambda} * {x}) x floor({lambda}^{gamma} * {y}) = {n} x {m} is empty"
        )));
    }
    Ok((n as usize, m as usize))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartialSumEntry {
    pub lambda: f64,
    pub gamma: f64,
    pub x: f64,
    pub y: f64,
    pub n: usize,
    pub m: usize,
    pub value: f64,
}

/// Summed-area table of a slab plus the requested rectangle sums.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialSumTable {
    pub entries: Vec<PartialSumEntry>,
    /// `(T1 + 1) x (T2 + 1)`, `prefix[n][m] = sum_{t <= n, s <= m} X(t, s)`.
    pub prefix: Vec<f64>,
    pub t2: usize,
}

impl PartialSumTable {
    pub fn prefix_at(&self, n: usize, m: usize) -> f64 {
        self.prefix[n * (self.t2 + 1) + m]
    }

    /// Sum over `(n0, n1] x (m0, m1]`.
    pub fn rect(&self, n0: usize, n1: usize, m0: usize, m1: usize) -> f64 {
        self.prefix_at(n1, m1) - self.prefix_at(n0, m1) - self.prefix_at(n1, m0)
            + self.prefix_at(n0, m0)
    }
}

pub fn summed_area(values: &[f64], t1: usize, t2: usize) -> Vec<f64> {
    let w = t2 + 1;
    let mut p = vec![0.0; (t1 + 1) * w];
    for t in 1..=t1 {
        let mut row = Neumaier::new();
        for s in 1..=t2 {
            row.add(values[(t - 1) * t2 + s - 1]);
            p[t * w + s] = p[(t - 1) * w + s] + row.value();
        }
    }
    p
}

pub fn partial_sums(
    slab: &FieldSlab,
    lambdas: &[f64],
    gamma: f64,
    points: &[(f64, f64)],
) -> Result<PartialSumTable> {
    let prefix = summed_area(&slab.values, slab.t1, slab.t2);
    let mut entries = Vec::with_capacity(lambdas.len() * points.len());
    for &lambda in lambdas {
        for &(x, y) in points {
            let (n, m) = rect_size(lambda, gamma, x, y)?;
            if n > slab.t1 || m > slab.t2 {
                return Err(Error::Range(format!(
                    "rectangle {n} x {m} (lambda = {lambda}, gamma = {gamma}, x = {x}, y = {y}) exceeds the {}x{} slab",
                    slab.t1, slab.t2
                )));
            }
            entries.push(PartialSumEntry {
                lambda,
                gamma,
                x,
                y,
                n,
                m,
                value: prefix[n * (slab.t2 + 1) + m],
            });
        }
    }
    Ok(PartialSumTable {
        entries,
        prefix,
        t2: slab.t2,
    })
}

/// Options shared by the Monte Carlo drivers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McOptions {
    pub threads: usize,
    pub memory_budget: usize,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            threads: 1,
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }
}

fn run_pool<T: Send, F: Fn(u64) -> T + Sync + Send>(
    threads: usize,
    jobs: u64,
    f: F,
) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::ResourceLimit(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..jobs).into_par_iter().map(&f).collect()))
}

/// Rectangle sums `S` over `[1, n] x [1, m]` for each requested rectangle and replicate;
/// the result is indexed `[replicate][rectangle]`.
pub fn replicate_rect_sums(
    coeffs: &CoefficientGrid,
    innov: &InnovationSpec,
    rects: &[(usize, usize)],
    reps: usize,
    opts: &McOptions,
) -> Result<Vec<Vec<f64>>> {
    if rects.is_empty() || reps == 0 {
        return Ok(vec![Vec::new(); reps]);
    }
    let t1 = rects.iter().map(|r| r.0).max().unwrap_or(1);
    let t2 = rects.iter().map(|r| r.1).max().unwrap_or(1);
    let sim = FieldSimulator::new(coeffs, t1, t2, opts.memory_budget)?;
    let pairs = reps.div_ceil(2) as u64;
    let per_pair = run_pool(opts.threads, pairs, |k| {
        let (a, b) = sim.simulate_pair(innov, k);
        let sums = |s: &FieldSlab| {
            let p = summed_area(&s.values, s.t1, s.t2);
            rects
                .iter()
                .map(|&(n, m)| p[n * (t2 + 1) + m])
                .collect::<Vec<f64>>()
        };
        (sums(&a), sums(&b))
    })?;
    let mut out = Vec::with_capacity(reps);
    for (a, b) in per_pair {
        out.push(a);
        if out.len() < reps {
            out.push(b);
        }
    }
    out.truncate(reps);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub lambda: f64,
    pub gamma: f64,
    pub x: f64,
    pub y: f64,
    pub n: usize,
    pub m: usize,
    pub var: f64,
    pub stderr: f64,
    pub reps: usize,
}

/// Unbiased sample variance and its distribution-free standard error
/// `sqrt((m4 - s^4 (n-3)/(n-1)) / n)`.
pub fn sample_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = csum(xs.iter().copied()) / n;
    let var = csum(xs.iter().map(|x| (x - mean).powi(2))) / (n - 1.0);
    let m4 = csum(xs.iter().map(|x| (x - mean).powi(4))) / n;
    let v4 = (m4 - var * var * (n - 3.0) / (n - 1.0)) / n;
    (var, v4.max(0.0).sqrt())
}

/// Sample covariance and the standard error of the mean centred cross product.
pub fn sample_covariance(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = csum(xs.iter().copied()) / n;
    let my = csum(ys.iter().copied()) / n;
    let prods: Vec<f64> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .collect();
    let cov = csum(prods.iter().copied()) / (n - 1.0);
    let mp = csum(prods.iter().copied()) / n;
    let vp = csum(prods.iter().map(|p| (p - mp).powi(2))) / (n - 1.0);
    (cov, (vp / n).sqrt() * n / (n - 1.0))
}

/// Monte Carlo variance of `S_{lambda,gamma}(x, y)` for each `lambda`.
pub fn replicate_variance(
    coeffs: &CoefficientGrid,
    innov: &InnovationSpec,
    gamma: f64,
    lambdas: &[f64],
    point: (f64, f64),
    reps: usize,
    opts: &McOptions,
) -> Result<Vec<VarianceEstimate>> {
    if reps < 2 {
        return Err(invalid("at least two replicates are needed for a variance"));
    }
    let rects: Vec<(usize, usize)> = lambdas
        .iter()
        .map(|&l| rect_size(l, gamma, point.0, point.1))
        .collect::<Result<_>>()?;
    let sums = replicate_rect_sums(coeffs, innov, &rects, reps, opts)?;
    Ok(lambdas
        .iter()
        .zip(&rects)
        .enumerate()
        .map(|(k, (&lambda, &(n, m)))| {
            let xs: Vec<f64> = sums.iter().map(|r| r[k]).collect();
            let (var, stderr) = sample_variance(&xs);
            VarianceEstimate {
                lambda,
                gamma,
                x: point.0,
                y: point.1,
                n,
                m,
                var,
                stderr,
                reps,
            }
        })
        .collect())
}

/// Innovation positions sharing one coefficient index interval along an axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AxisClass {
    /// Coefficient offsets `lo..=hi` that land in `[1, n]`.
    pub lo: i64,
    pub hi: i64,
    /// Innovation coordinates `first .. first + count`.
    pub first: i64,
    pub count: i64,
}

impl AxisClass {
    pub fn overlap(&self, lo: i64, hi: i64) -> i64 {
        let a = self.first.max(lo);
        let b = (self.first + self.count - 1).min(hi);
        (b - a + 1).max(0)
    }
}

/// Group `u in [1 - r, n + r]` by the interval `[max(1-u, -r), min(n-u, r)]`.
pub(crate) fn axis_classes(n: i64, r: i64) -> Vec<AxisClass> {
    let mut out = Vec::new();
    let full = n >= 2 * r + 1;
    let mut u = 1 - r;
    while u <= n + r {
        if full && u == r + 1 {
            out.push(AxisClass {
                lo: -r,
                hi: r,
                first: r + 1,
                count: n - 2 * r,
            });
            u = n - r + 1;
            continue;
        }
        out.push(AxisClass {
            lo: (1 - u).max(-r),
            hi: (n - u).min(r),
            first: u,
            count: 1,
        });
        u += 1;
    }
    out
}

/// Summed-area table of the coefficient grid for O(1) rectangle sums.
pub(crate) struct CoeffPrefix {
    r1: i64,
    r2: i64,
    w: usize,
    p: Vec<f64>,
}

impl CoeffPrefix {
    pub fn new(g: &CoefficientGrid) -> Self {
        let (n1, n2) = g.dims();
        let (r1, r2) = g.radii();
        let v = g.values();
        let w = n2 + 1;
        let mut p = vec![0.0; (n1 + 1) * w];
        let mut cols = vec![Neumaier::new(); n2];
        for i in 0..n1 {
            let mut acc = Neumaier::new();
            for j in 0..n2 {
                cols[j].add(v[i * n2 + j]);
                acc.add(cols[j].value());
                p[(i + 1) * w + j + 1] = acc.value();
            }
        }
        CoeffPrefix {
            r1: r1 as i64,
            r2: r2 as i64,
            w,
            p,
        }
    }

    /// Sum of `a(t', s')` over `t' in [t_lo, t_hi]`, `s' in [s_lo, s_hi]` (already clipped to the grid).
    #[inline]
    pub fn rect(&self, t_lo: i64, t_hi: i64, s_lo: i64, s_hi: i64) -> f64 {
        let i0 = (t_lo + self.r1) as usize;
        let i1 = (t_hi + self.r1 + 1) as usize;
        let j0 = (s_lo + self.r2) as usize;
        let j1 = (s_hi + self.r2 + 1) as usize;
        let w = self.w;
        (self.p[i1 * w + j1] - self.p[i0 * w + j1]) - (self.p[i1 * w + j0] - self.p[i0 * w + j0])
    }
}

/// `sum G(u,v)^2` over all innovations, and over those with `u` in `far_u` and `v` in `far_v`.
pub(crate) fn g_square_sums(
    coeffs: &CoefficientGrid,
    n: usize,
    m: usize,
    far: Option<((i64, i64), (i64, i64))>,
) -> (f64, f64) {
    let (r1, r2) = coeffs.radii();
    let cu = axis_classes(n as i64, r1 as i64);
    let cv = axis_classes(m as i64, r2 as i64);
    let pre = CoeffPrefix::new(coeffs);
    let mut total = Neumaier::new();
    let mut inner = Neumaier::new();
    for a in &cu {
        let mut row = Neumaier::new();
        let mut row_far = Neumaier::new();
        let fu = far.map(|((lo, hi), _)| a.overlap(lo, hi)).unwrap_or(0);
        for b in &cv {
            let g = pre.rect(a.lo, a.hi, b.lo, b.hi);
            let g2 = g * g;
            if g2 == 0.0 {
                continue;
            }
            row.add(b.count as f64 * g2);
            if fu > 0 {
                if let Some((_, (lo, hi))) = far {
                    let fv = b.overlap(lo, hi);
                    if fv > 0 {
                        row_far.add(fv as f64 * g2);
                    }
                }
            }
        }
        total.add(a.count as f64 * row.value());
        inner.add(fu as f64 * row_far.value());
    }
    (total.value(), inner.value())
}

/// Exact variance `sum_(u,v) G(u,v)^2` of `S_{lambda,gamma}(x, y)` for the truncated grid.
pub fn exact_variance(
    coeffs: &CoefficientGrid,
    gamma: f64,
    lambda: f64,
    point: (f64, f64),
) -> Result<f64> {
    let (n, m) = rect_size(lambda, gamma, point.0, point.1)?;
    Ok(exact_variance_rect(coeffs, n, m))
}

/// Exact variance of the sum over `[1, n] x [1, m]`.
pub fn exact_variance_rect(coeffs: &CoefficientGrid, n: usize, m: usize) -> f64 {
    g_square_sums(coeffs, n, m, None).0
}

/// Exact covariance `sum G_A G_B` of the sums over `[1, n1] x [1, m1]` and `[1, n2] x [1, m2]`.
pub fn exact_covariance_rect(
    coeffs: &CoefficientGrid,
    a: (usize, usize),
    b: (usize, usize),
) -> f64 {
    let (r1, r2) = coeffs.radii();
    let pre = CoeffPrefix::new(coeffs);
    let cls = |n: usize, r: usize| axis_classes(n as i64, r as i64);
    let ua = cls(a.0, r1);
    let ub = cls(b.0, r1);
    let va = cls(a.1, r2);
    let vb = cls(b.1, r2);
    let merge = |x: &[AxisClass],
                 y: &[AxisClass],
                 n1: i64,
                 n2: i64,
                 r: i64|
     -> Vec<(i64, i64, i64, i64, i64)> {
        let mut cuts = vec![1 - r, n1.max(n2) + r + 1];
        for c in x.iter().chain(y) {
            cuts.push(c.first);
            cuts.push(c.first + c.count);
        }
        cuts.sort_unstable();
        cuts.dedup();
        let mut out = Vec::new();
        for w in cuts.windows(2) {
            let (u0, u1) = (w[0], w[1]);
            if u1 <= u0 {
                continue;
            }
            let ia = (1 - u0).max(-r);
            let ha = (n1 - u0).min(r);
            let ib = (1 - u0).max(-r);
            let hb = (n2 - u0).min(r);
            out.push((ia, ha, ib, hb, u1 - u0));
        }
        out
    };
    let mu = merge(&ua, &ub, a.0 as i64, b.0 as i64, r1 as i64);
    let mv = merge(&va, &vb, a.1 as i64, b.1 as i64, r2 as i64);
    let mut acc = Neumaier::new();
    for &(la, ha, lb, hb, cu) in &mu {
        let mut row = Neumaier::new();
        for &(ma, na, mb, nb, cv) in &mv {
            let ga = if la <= ha && ma <= na {
                pre.rect(la, ha, ma, na)
            } else {
                0.0
            };
            let gb = if lb <= hb && mb <= nb {
                pre.rect(lb, hb, mb, nb)
            } else {
                0.0
            };
            if ga != 0.0 && gb != 0.0 {
                row.add(cv as f64 * ga * gb);
            }
        }
        acc.add(cu as f64 * row.value());
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeff_families::{pair_difference_coeffs, synthetic_coeffs, AngularFunction};

    #[test]
    fn floor_semantics() {
        assert_eq!(rect_size(10.0, 0.5, 1.0, 1.0).unwrap(), (10, 3));
        assert_eq!(rect_size(512.0, 1.0 / 3.0, 1.0, 1.0).unwrap(), (512, 8));
        assert!(rect_size(10.0, 1.0, 0.05, 1.0).is_err());
    }

    #[test]
    fn axis_class_counts() {
        for (n, r) in [(1, 3), (5, 2), (10, 2), (7, 3), (100, 1)] {
            let c = axis_classes(n, r);
            let total: i64 = c.iter().map(|a| a.count).sum();
            assert_eq!(total, n + 2 * r);
            for a in &c {
                for u in a.first..a.first + a.count {
                    assert_eq!((1 - u).max(-r), a.lo);
                    assert_eq!((n - u).min(r), a.hi);
                }
            }
        }
    }

    #[test]
    fn pair_difference_exact() {
        let g = pair_difference_coeffs();
        assert_eq!(exact_variance(&g, 1.0, 100.0, (1.0, 1.0)).unwrap(), 200.0);
        assert_eq!(exact_variance_rect(&g, 1, 1), 2.0);
    }

    #[test]
    fn single_cell_is_sum_of_squares() {
        let g = synthetic_coeffs(4.0, 4.0, &AngularFunction::Constant(1.0), 3, 3).unwrap();
        let v = exact_variance_rect(&g, 1, 1);
        assert!((v - g.sum_sq()).abs() < 1e-13 * g.sum_sq());
    }

    #[test]
    fn exact_covariance_matches_brute_force() {
        let g = synthetic_coeffs(3.0, 5.0, &AngularFunction::Constant(1.0), 3, 2).unwrap();
        let (a, b) = ((6, 4), (3, 7));
        let brute = {
            let (r1, r2) = (3i64, 2i64);
            let gsum = |n: i64, m: i64, u: i64, v: i64| {
                let mut s = 0.0;
                for t in 1..=n {
                    for q in 1..=m {
                        s += g.get(t - u, q - v);
                    }
                }
                s
            };
            let mut acc = 0.0;
            for u in (1 - r1)..=(7 + r1) {
                for v in (1 - r2)..=(7 + r2) {
                    acc += gsum(a.0, a.1, u, v) * gsum(b.0, b.1, u, v);
                }
            }
            acc
        };
        let fast = exact_covariance_rect(
            &g,
            (a.0 as usize, a.1 as usize),
            (b.0 as usize, b.1 as usize),
        );
        assert!(
            (fast - brute).abs() < 1e-12 * brute.abs().max(1.0),
            "{fast} vs {brute}"
        );
        let va = exact_covariance_rect(&g, (6, 4), (6, 4));
        assert!((va - exact_variance_rect(&g, 6, 4)).abs() < 1e-12 * va);
    }
}
