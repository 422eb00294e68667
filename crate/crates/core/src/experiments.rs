//! Variance-growth slope fits, scans over the aspect exponent, covariance checks
//! against the limit fields, and deterministic report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coeff_families::{
    heat_coeffs, isotropic_coeffs, pair_difference_coeffs, separable_coeffs, synthetic_coeffs,
    AngularFunction, CoefficientGrid, Decay, IsotropicOptions,
};
use crate::error::{invalid, Error, Result};
use crate::io::fmt17;
use crate::lattice_sim::{
    exact_covariance_rect, exact_variance_rect, rect_size, replicate_rect_sums, replicate_variance,
    sample_covariance, InnovationSpec, McOptions,
};
use crate::limit_calc::{
    edge_sigmas, fbs_covariance, sigma1, sigma2, v0_covariance, EdgeSigmas, FbsParams,
};
use crate::region_atlas::{
    classify_exponents, exponents, normalization_law, Affine, Branch, LimitDescriptor,
    ModelExponents, NormalizationLaw, RegionId, RegionTag, ScaleSymbol, DEFAULT_TOL,
};

/// Quadratic coefficient (in `log lambda`) above which a slope fit is redone on the three largest scales.
pub const CURVATURE_THRESHOLD: f64 = 0.05;
/// Grid points needed on each side of the critical exponent before a kink is reported.
pub const KINK_MIN_SIDE: usize = 3;
/// Agreement band of the covariance check, in standard errors.
pub const COV_BAND: f64 = 4.0;

fn default_radius() -> usize {
    128
}

fn unit_angular() -> AngularFunction {
    AngularFunction::Constant(1.0)
}

/// A coefficient family together with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Isotropic {
        d: f64,
        #[serde(default = "default_radius")]
        radius: usize,
        #[serde(default)]
        options: IsotropicOptions,
    },
    Heat {
        d: f64,
        theta: f64,
        #[serde(default = "default_radius")]
        radius: usize,
    },
    Separable {
        d1: f64,
        d2: f64,
        #[serde(default = "default_radius")]
        r1: usize,
        #[serde(default = "default_radius")]
        r2: usize,
    },
    PairDifference,
    Synthetic {
        q1: f64,
        q2: f64,
        #[serde(default = "unit_angular")]
        angular: AngularFunction,
        #[serde(default = "default_radius")]
        r1: usize,
        #[serde(default = "default_radius")]
        r2: usize,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<CoefficientGrid> {
        match self {
            ModelSpec::Isotropic { d, radius, options } => isotropic_coeffs(*d, *radius, options),
            ModelSpec::Heat { d, theta, radius } => heat_coeffs(*d, *theta, *radius),
            ModelSpec::Separable { d1, d2, r1, r2 } => separable_coeffs(*d1, *d2, *r1, *r2),
            ModelSpec::PairDifference => Ok(pair_difference_coeffs()),
            ModelSpec::Synthetic {
                q1,
                q2,
                angular,
                r1,
                r2,
            } => synthetic_coeffs(*q1, *q2, angular, *r1, *r2),
        }
    }

    /// Decay exponents `(q1, q2)` of the power-law families, without building the grid.
    pub fn decay_exponents(&self) -> Result<(f64, f64)> {
        match self {
            ModelSpec::Isotropic { d, .. } => Ok((2.0 * (1.0 - d), 2.0 * (1.0 - d))),
            ModelSpec::Heat { d, .. } => Ok((1.5 - d, 3.0 - 2.0 * d)),
            ModelSpec::Synthetic { q1, q2, .. } => Ok((*q1, *q2)),
            ModelSpec::Separable { .. } => Err(Error::Unsupported(
                "product-form coefficients have no joint decay exponents (q1, q2)".into(),
            )),
            ModelSpec::PairDifference => Err(Error::Unsupported(
                "finitely supported coefficients have q1 = q2 = inf".into(),
            )),
        }
    }
}

/// Which edge term of the two-edge limit is identically zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VanishingEdge {
    Edge1,
    Edge2,
}

/// What the limit theory says about a coefficient grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theory {
    pub region: Option<RegionId>,
    pub exponents: Option<ModelExponents>,
    pub law: Option<NormalizationLaw>,
    /// Why `law` is missing, or a remark on how it was obtained.
    pub note: Option<String>,
    pub edge: EdgeSigmas,
    pub vanishing_edge: Option<VanishingEdge>,
    #[serde(skip)]
    refusal: Option<(u8, String)>,
}

fn refusal_error(code: u8, msg: &str) -> Error {
    match code {
        0 => Error::Unsupported(msg.into()),
        1 => Error::Boundary(msg.into()),
        _ => Error::OpenCase(msg.into()),
    }
}

impl Theory {
    pub fn of(grid: &CoefficientGrid) -> Theory {
        let edge = edge_sigmas(grid);
        let mut t = Theory {
            region: None,
            exponents: None,
            law: None,
            note: None,
            edge,
            vanishing_edge: None,
            refusal: None,
        };
        match grid.decay {
            Decay::Product => {
                let (d1, d2) = (grid.params[0], grid.params[1]);
                // The variance factorises into two one-dimensional partial-sum variances.
                t.law = Some(NormalizationLaw {
                    gamma0: 1.0,
                    below: Affine {
                        intercept: 0.5 + d1,
                        slope: 0.5 + d2,
                    },
                    above: Affine {
                        intercept: 0.5 + d1,
                        slope: 0.5 + d2,
                    },
                    balanced_defined: true,
                });
                t.note = Some(
                    "product coefficients: H = (1/2 + d1) + gamma (1/2 + d2), no transition".into(),
                );
            }
            Decay::Compact => {
                t.region = Some(RegionId {
                    tag: RegionTag::SrdLike,
                    boundary_detail: None,
                });
                t.set_edge_law();
            }
            Decay::Power => {
                let e = match exponents(grid.q1, grid.q2) {
                    Ok(e) => e,
                    Err(err) => {
                        t.refusal = Some((0, err.to_string()));
                        return t;
                    }
                };
                t.exponents = Some(e);
                match classify_exponents(&e, DEFAULT_TOL) {
                    Ok(r) if r.tag == RegionTag::Boundary => {
                        let msg = format!(
                            "on a region boundary: {}",
                            r.boundary_detail.as_deref().unwrap_or("")
                        );
                        t.refusal = Some((1, msg));
                        t.region = Some(r);
                    }
                    Ok(r) => {
                        t.region = Some(r.clone());
                        if r.tag == RegionTag::R33 {
                            t.set_edge_law();
                        } else {
                            match normalization_law(&e, &r) {
                                Ok(l) => t.law = Some(l),
                                Err(err) => t.refusal = Some((0, err.to_string())),
                            }
                        }
                    }
                    Err(err) => t.refusal = Some((0, err.to_string())),
                }
            }
        }
        if t.note.is_none() {
            t.note = t.refusal.as_ref().map(|r| r.1.clone());
        }
        t
    }

    /// Two-edge law `max(1/2, gamma/2)`, collapsing to one side when an edge sum vanishes.
    fn set_edge_law(&mut self) {
        let half = Affine {
            intercept: 0.5,
            slope: 0.0,
        };
        let half_gamma = Affine {
            intercept: 0.0,
            slope: 0.5,
        };
        let (s1, s2) = (self.edge.sigma2_edge1, self.edge.sigma2_edge2);
        let tiny = 1e-14 * (s1.abs() + s2.abs());
        let (below, above) = if s2.abs() <= tiny && s1 > 0.0 {
            self.vanishing_edge = Some(VanishingEdge::Edge2);
            self.note = Some("the second edge sum vanishes: H = 1/2 for every gamma".into());
            (half, half)
        } else if s1.abs() <= tiny && s2 > 0.0 {
            self.vanishing_edge = Some(VanishingEdge::Edge1);
            self.note = Some("the first edge sum vanishes: H = gamma/2 for every gamma".into());
            (half_gamma, half_gamma)
        } else {
            (half, half_gamma)
        };
        self.law = Some(NormalizationLaw {
            gamma0: 1.0,
            below,
            above,
            balanced_defined: true,
        });
    }

    fn law_or_refuse(&self) -> Result<&NormalizationLaw> {
        match (&self.law, &self.refusal) {
            (Some(l), _) => Ok(l),
            (None, Some((c, m))) => Err(refusal_error(*c, m)),
            (None, None) => Err(Error::Unsupported("no normalisation law".into())),
        }
    }

    /// `H(gamma)`; refuses where the theory is silent.
    pub fn h(&self, gamma: f64) -> Result<f64> {
        self.law_or_refuse()?.h(gamma)
    }

    /// `H(gamma)` with the continuous extension at the critical exponent, `None` without a law.
    pub fn h_continuous(&self, gamma: f64) -> Option<f64> {
        self.law.as_ref().map(|l| l.h_continuous(gamma))
    }

    /// Critical exponent, when the law actually changes slope there.
    pub fn kink(&self) -> Option<f64> {
        self.law
            .as_ref()
            .filter(|l| l.below != l.above)
            .map(|l| l.gamma0)
    }

    pub fn descriptor(&self, gamma: f64) -> Result<LimitDescriptor> {
        if !(gamma > 0.0) {
            return Err(invalid(format!("gamma = {gamma} must be positive")));
        }
        let edge = |hx, hy, s, b| LimitDescriptor {
            hurst_pair: Some(FbsParams { hx, hy }),
            scale_symbol: s,
            branch: b,
        };
        match self.vanishing_edge {
            Some(VanishingEdge::Edge2) => {
                return Ok(edge(0.5, 0.0, ScaleSymbol::SigmaEdge1, Branch::Minus))
            }
            Some(VanishingEdge::Edge1) => {
                return Ok(edge(0.0, 0.5, ScaleSymbol::SigmaEdge2, Branch::Plus))
            }
            None => {}
        }
        let law = self.law_or_refuse()?;
        law.h(gamma)?;
        match (&self.region, &self.exponents) {
            (Some(r), Some(e)) => crate::region_atlas::limit_descriptor(e, r, gamma),
            (Some(r), None) if r.tag == RegionTag::SrdLike => Ok(if gamma > 1.0 {
                edge(0.0, 0.5, ScaleSymbol::SigmaEdge2, Branch::Plus)
            } else if gamma < 1.0 {
                edge(0.5, 0.0, ScaleSymbol::SigmaEdge1, Branch::Minus)
            } else {
                LimitDescriptor {
                    hurst_pair: None,
                    scale_symbol: ScaleSymbol::MixedEdge,
                    branch: Branch::Balanced,
                }
            }),
            _ => Err(Error::Unsupported(
                "no limit descriptor for this coefficient family".into(),
            )),
        }
    }
}

/// Covariance of the limit field at two points.
pub fn limit_covariance(
    grid: &CoefficientGrid,
    theory: &Theory,
    desc: &LimitDescriptor,
    p1: (f64, f64),
    p2: (f64, f64),
) -> Result<f64> {
    let angular = || {
        grid.angular()
            .ok_or_else(|| Error::Unsupported("this family has no angular function".into()))
    };
    let fbs = |hx, hy| fbs_covariance(FbsParams { hx, hy }, p1, p2);
    let e = &theory.edge;
    Ok(match desc.scale_symbol {
        ScaleSymbol::SigmaEdge1 => e.sigma2_edge1 * fbs(0.5, 0.0)?,
        ScaleSymbol::SigmaEdge2 => e.sigma2_edge2 * fbs(0.0, 0.5)?,
        ScaleSymbol::MixedEdge => e.sigma2_edge1 * fbs(0.5, 0.0)? + e.sigma2_edge2 * fbs(0.0, 0.5)?,
        ScaleSymbol::Sigma1 => {
            let h = desc
                .hurst_pair
                .ok_or_else(|| invalid("missing Hurst pair"))?;
            sigma1(grid.q1, grid.q2, &angular()?)?.powi(2) * fbs(h.hx, h.hy)?
        }
        ScaleSymbol::Sigma2 => {
            let h = desc
                .hurst_pair
                .ok_or_else(|| invalid("missing Hurst pair"))?;
            sigma2(grid.q1, grid.q2, &angular()?)?.powi(2) * fbs(h.hx, h.hy)?
        }
        ScaleSymbol::V0Kernel => v0_covariance(grid.q1, grid.q2, &angular()?, p1, p2)?.value,
        ScaleSymbol::Sigma1Tilde | ScaleSymbol::Sigma2Tilde => {
            return Err(Error::Unsupported(
                "long-range dependent limits are not checked".into(),
            ))
        }
    })
}

fn default_innovation() -> InnovationSpec {
    InnovationSpec::gaussian(0)
}

fn unit_point() -> (f64, f64) {
    (1.0, 1.0)
}

fn default_reps() -> usize {
    200
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    pub model: ModelSpec,
    #[serde(default = "default_innovation")]
    pub innovation: InnovationSpec,
    #[serde(default)]
    pub gamma_grid: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    #[serde(default = "unit_point")]
    pub point: (f64, f64),
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "yes")]
    pub use_exact_variance: bool,
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.len() < 3 {
            return Err(invalid(format!(
                "need at least 3 lambda values, got {}",
                self.lambda_grid.len()
            )));
        }
        if let Some(l) = self
            .lambda_grid
            .iter()
            .find(|l| !(l.is_finite() && **l > 0.0))
        {
            return Err(invalid(format!("lambda = {l} must be positive and finite")));
        }
        if let Some(g) = self
            .gamma_grid
            .iter()
            .find(|g| !(g.is_finite() && **g > 0.0))
        {
            return Err(invalid(format!("gamma = {g} must be positive and finite")));
        }
        if !(self.point.0 > 0.0 && self.point.1 > 0.0) {
            return Err(invalid("point coordinates must be positive"));
        }
        if !self.use_exact_variance && self.reps < 2 {
            return Err(invalid("at least two replicates are needed"));
        }
        Ok(())
    }
}

/// Least-squares fit of `log(Var) / 2` against `log(lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub gamma: f64,
    #[serde(rename = "H_hat")]
    pub h_hat: f64,
    pub stderr: f64,
    pub r_squared: f64,
    /// Residuals of the final fit, `None` for scales left out of it.
    pub residuals: Vec<Option<f64>>,
    pub lambdas: Vec<f64>,
    pub rects: Vec<(usize, usize)>,
    pub variances: Vec<f64>,
    /// Monte Carlo standard errors of the variances (zero for exact ones).
    pub variance_stderr: Vec<f64>,
    pub exact: bool,
    pub curvature: f64,
    pub refit: bool,
    #[serde(rename = "H_theory")]
    pub h_theory: Option<f64>,
}

struct Ols {
    slope: f64,
    stderr: f64,
    r2: f64,
    residuals: Vec<f64>,
}

fn ols(x: &[f64], y: &[f64]) -> Ols {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let residuals: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - icpt - slope * a).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let stderr = if x.len() > 2 {
        (sse / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ols {
        slope,
        stderr,
        r2,
        residuals,
    }
}

/// Solve a small dense system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Least squares on the given regressor columns; returns coefficients and SSE.
fn lsq(cols: &[Vec<f64>], y: &[f64]) -> Option<(Vec<f64>, f64)> {
    let p = cols.len();
    let a: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| cols[i].iter().zip(&cols[j]).map(|(u, v)| u * v).sum())
                .collect()
        })
        .collect();
    let b: Vec<f64> = (0..p)
        .map(|i| cols[i].iter().zip(y).map(|(u, v)| u * v).sum())
        .collect();
    let beta = solve(a, b)?;
    let sse = y
        .iter()
        .enumerate()
        .map(|(k, yk)| (yk - (0..p).map(|i| beta[i] * cols[i][k]).sum::<f64>()).powi(2))
        .sum();
    Some((beta, sse))
}

/// Quadratic coefficient of `y` in centred `x`.
fn curvature(x: &[f64], y: &[f64]) -> f64 {
    if x.len() < 4 {
        return 0.0;
    }
    let mx = x.iter().sum::<f64>() / x.len() as f64;
    let c: Vec<f64> = x.iter().map(|a| a - mx).collect();
    let cols = vec![
        vec![1.0; x.len()],
        c.clone(),
        c.iter().map(|a| a * a).collect(),
    ];
    lsq(&cols, y).map(|(b, _)| b[2]).unwrap_or(0.0)
}

/// Slope fit from per-scale variances; refits on the three largest scales when curved.
pub fn fit_slope(
    gamma: f64,
    lambdas: &[f64],
    variances: &[f64],
) -> Result<(f64, f64, f64, Vec<Option<f64>>, f64, bool)> {
    let usable: Vec<usize> = (0..lambdas.len())
        .filter(|&i| variances[i].is_finite() && variances[i] > 0.0)
        .collect();
    if usable.len() < 3 {
        return Err(Error::Range(format!(
            "degenerate fit at gamma = {gamma}: only {} scale(s) with positive variance",
            usable.len()
        )));
    }
    let x: Vec<f64> = usable.iter().map(|&i| lambdas[i].ln()).collect();
    let y: Vec<f64> = usable.iter().map(|&i| 0.5 * variances[i].ln()).collect();
    let curv = curvature(&x, &y);
    let mut used = usable.clone();
    let refit = curv.abs() > CURVATURE_THRESHOLD && usable.len() > 3;
    if refit {
        let mut by_scale = usable.clone();
        by_scale.sort_by(|&a, &b| lambdas[a].total_cmp(&lambdas[b]));
        used = by_scale[by_scale.len() - 3..].to_vec();
        used.sort_unstable();
    }
    let xs: Vec<f64> = used.iter().map(|&i| lambdas[i].ln()).collect();
    let ys: Vec<f64> = used.iter().map(|&i| 0.5 * variances[i].ln()).collect();
    let f = ols(&xs, &ys);
    let mut residuals = vec![None; lambdas.len()];
    for (k, &i) in used.iter().enumerate() {
        residuals[i] = Some(f.residuals[k]);
    }
    Ok((f.slope, f.stderr, f.r2, residuals, curv, refit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRow {
    pub gamma: f64,
    #[serde(rename = "H_hat")]
    pub h_hat: f64,
    pub stderr: f64,
    #[serde(rename = "H_theory")]
    pub h_theory: Option<f64>,
    pub abs_diff: Option<f64>,
    /// `|H_hat - H_theory|` above three fit standard errors.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionReport {
    pub rows: Vec<TransitionRow>,
    pub detected_kink: Option<f64>,
    /// Change of slope of the best two-segment fit.
    pub kink_slope_change: Option<f64>,
    pub gamma0_theory: Option<f64>,
    pub kink_expected: bool,
    /// Whether the grid has enough points on both sides of the critical exponent.
    pub brackets_gamma0: bool,
}

/// Best continuous two-segment fit with the break on a midpoint of consecutive grid values.
/// Returns `(break, slope change, sse)`.
pub fn hinge_fit(gammas: &[f64], h: &[f64]) -> Option<(f64, f64, f64)> {
    let mut g: Vec<(f64, f64)> = gammas.iter().copied().zip(h.iter().copied()).collect();
    g.sort_by(|a, b| a.0.total_cmp(&b.0));
    if g.len() < 4 {
        return None;
    }
    let xs: Vec<f64> = g.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = g.iter().map(|p| p.1).collect();
    let mut best: Option<(f64, f64, f64)> = None;
    for w in xs.windows(2) {
        let k = 0.5 * (w[0] + w[1]);
        if w[0] == w[1] {
            continue;
        }
        let cols = vec![
            vec![1.0; xs.len()],
            xs.clone(),
            xs.iter().map(|x| (x - k).max(0.0)).collect(),
        ];
        if let Some((beta, sse)) = lsq(&cols, &ys) {
            if best.map_or(true, |b| sse < b.2) {
                best = Some((k, beta[2], sse));
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub p1: (f64, f64),
    pub p2: (f64, f64),
    pub rect1: (usize, usize),
    pub rect2: (usize, usize),
    pub empirical: f64,
    pub stderr: f64,
    /// Exact covariance of the normalised sums at this scale.
    pub exact: f64,
    pub theory: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub gamma: f64,
    pub lambda: f64,
    #[serde(rename = "H")]
    pub h: f64,
    pub reps: usize,
    pub descriptor: LimitDescriptor,
    pub rows: Vec<CovarianceRow>,
}

impl CovarianceReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// A scan configuration with its coefficient grid and theory, built once.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ScanConfig,
    pub grid: CoefficientGrid,
    pub theory: Theory,
}

impl Experiment {
    pub fn prepare(cfg: ScanConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.model.build()?;
        Ok(Self::with_grid(cfg, grid))
    }

    pub fn with_grid(cfg: ScanConfig, grid: CoefficientGrid) -> Self {
        let theory = Theory::of(&grid);
        Experiment { cfg, grid, theory }
    }

    pub fn variance_scan(&self, gamma: f64, opts: &McOptions) -> Result<SlopeFit> {
        let cfg = &self.cfg;
        cfg.validate()?;
        let rects: Vec<(usize, usize)> = cfg
            .lambda_grid
            .iter()
            .map(|&l| rect_size(l, gamma, cfg.point.0, cfg.point.1))
            .collect::<Result<_>>()?;
        let (variances, variance_stderr): (Vec<f64>, Vec<f64>) = if cfg.use_exact_variance {
            rects
                .iter()
                .map(|&(n, m)| (exact_variance_rect(&self.grid, n, m), 0.0))
                .unzip()
        } else {
            replicate_variance(
                &self.grid,
                &cfg.innovation,
                gamma,
                &cfg.lambda_grid,
                cfg.point,
                cfg.reps,
                opts,
            )?
            .into_iter()
            .map(|v| (v.var, v.stderr))
            .unzip()
        };
        let (h_hat, stderr, r_squared, residuals, curvature, refit) =
            fit_slope(gamma, &cfg.lambda_grid, &variances)?;
        Ok(SlopeFit {
            gamma,
            h_hat,
            stderr,
            r_squared,
            residuals,
            lambdas: cfg.lambda_grid.clone(),
            rects,
            variances,
            variance_stderr,
            exact: cfg.use_exact_variance,
            curvature,
            refit,
            h_theory: self.theory.h(gamma).ok(),
        })
    }

    pub fn transition_scan(&self, opts: &McOptions) -> Result<TransitionReport> {
        let grid = &self.cfg.gamma_grid;
        if grid.is_empty() {
            return Err(invalid("empty gamma grid"));
        }
        let fits: Vec<SlopeFit> = grid
            .iter()
            .map(|&g| self.variance_scan(g, opts))
            .collect::<Result<_>>()?;
        let rows: Vec<TransitionRow> = fits
            .iter()
            .map(|f| {
                let diff = f.h_theory.map(|t| (f.h_hat - t).abs());
                TransitionRow {
                    gamma: f.gamma,
                    h_hat: f.h_hat,
                    stderr: f.stderr,
                    h_theory: f.h_theory,
                    abs_diff: diff,
                    flagged: diff.is_some_and(|d| d > 3.0 * f.stderr),
                }
            })
            .collect();
        let gamma0 = self.theory.law.as_ref().map(|l| l.gamma0);
        let brackets = gamma0.is_some_and(|g0| {
            grid.iter().filter(|&&g| g < g0).count() >= KINK_MIN_SIDE
                && grid.iter().filter(|&&g| g > g0).count() >= KINK_MIN_SIDE
        });
        let hinge = if brackets {
            let h: Vec<f64> = rows.iter().map(|r| r.h_hat).collect();
            hinge_fit(grid, &h)
        } else {
            None
        };
        Ok(TransitionReport {
            rows,
            detected_kink: hinge.map(|h| h.0),
            kink_slope_change: hinge.map(|h| h.1),
            gamma0_theory: gamma0,
            kink_expected: self.theory.kink().is_some(),
            brackets_gamma0: brackets,
        })
    }

    /// Replicate covariances of `lambda^-H S` at the largest scale against the limit field.
    pub fn covariance_check(
        &self,
        gamma: f64,
        pairs: &[((f64, f64), (f64, f64))],
        opts: &McOptions,
    ) -> Result<CovarianceReport> {
        let cfg = &self.cfg;
        if cfg.reps < 100 {
            return Err(invalid(format!(
                "covariance checks need at least 100 replicates, got {}",
                cfg.reps
            )));
        }
        if pairs.is_empty() {
            return Err(invalid("no point pairs given"));
        }
        let h = self.theory.h(gamma)?;
        let desc = self.theory.descriptor(gamma)?;
        let lambda = cfg.lambda_grid.iter().copied().fold(f64::NAN, f64::max);
        if !(lambda > 0.0) {
            return Err(invalid("empty lambda grid"));
        }
        let mut points: Vec<(f64, f64)> = Vec::new();
        for &(a, b) in pairs {
            for p in [a, b] {
                if !points.contains(&p) {
                    points.push(p);
                }
            }
        }
        let rects: Vec<(usize, usize)> = points
            .iter()
            .map(|p| rect_size(lambda, gamma, p.0, p.1))
            .collect::<Result<_>>()?;
        let sums = replicate_rect_sums(&self.grid, &cfg.innovation, &rects, cfg.reps, opts)?;
        let norm = lambda.powf(-h);
        let idx = |p: (f64, f64)| {
            points
                .iter()
                .position(|&q| q == p)
                .expect("point was collected")
        };
        let rows = pairs
            .iter()
            .map(|&(p1, p2)| {
                let (i, j) = (idx(p1), idx(p2));
                let xs: Vec<f64> = sums.iter().map(|r| r[i] * norm).collect();
                let ys: Vec<f64> = sums.iter().map(|r| r[j] * norm).collect();
                let (empirical, stderr) = sample_covariance(&xs, &ys);
                let theory = limit_covariance(&self.grid, &self.theory, &desc, p1, p2)?;
                let exact = exact_covariance_rect(&self.grid, rects[i], rects[j]) * norm * norm;
                let z = (empirical - theory) / stderr;
                Ok(CovarianceRow {
                    p1,
                    p2,
                    rect1: rects[i],
                    rect2: rects[j],
                    empirical,
                    stderr,
                    exact,
                    theory,
                    z,
                    pass: z.abs() <= COV_BAND,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CovarianceReport {
            gamma,
            lambda,
            h,
            reps: cfg.reps,
            descriptor: desc,
            rows,
        })
    }
}

/// One CSV cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Missing,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Missing, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as u64)
    }
}

impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Text(x.to_string())
    }
}

impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(x) => fmt17(*x),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }
}

/// Results that can be written as a CSV table.
pub trait Tabular {
    fn columns(&self) -> Vec<&'static str>;
    fn rows(&self) -> Vec<Vec<Cell>>;
}

impl Tabular for SlopeFit {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "gamma",
            "lambda",
            "n",
            "m",
            "var",
            "var_stderr",
            "residual",
            "H_hat",
            "stderr",
            "r_squared",
            "H_theory",
        ]
    }

    fn rows(&self) -> Vec<Vec<Cell>> {
        (0..self.lambdas.len())
            .map(|i| {
                vec![
                    self.gamma.into(),
                    self.lambdas[i].into(),
                    self.rects[i].0.into(),
                    self.rects[i].1.into(),
                    self.variances[i].into(),
                    self.variance_stderr[i].into(),
                    self.residuals[i].into(),
                    self.h_hat.into(),
                    self.stderr.into(),
                    self.r_squared.into(),
                    self.h_theory.into(),
                ]
            })
            .collect()
    }
}

impl Tabular for TransitionReport {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "gamma",
            "H_hat",
            "stderr",
            "H_theory",
            "abs_diff",
            "flagged",
            "detected_kink",
            "gamma0_theory",
        ]
    }

    fn rows(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.gamma.into(),
                    r.h_hat.into(),
                    r.stderr.into(),
                    r.h_theory.into(),
                    r.abs_diff.into(),
                    r.flagged.into(),
                    self.detected_kink.into(),
                    self.gamma0_theory.into(),
                ]
            })
            .collect()
    }
}

impl Tabular for CovarianceReport {
    fn columns(&self) -> Vec<&'static str> {
        vec![
            "x1",
            "y1",
            "x2",
            "y2",
            "lambda",
            "gamma",
            "H",
            "n1",
            "m1",
            "n2",
            "m2",
            "empirical",
            "stderr",
            "exact",
            "theory",
            "z",
            "pass",
        ]
    }

    fn rows(&self) -> Vec<Vec<Cell>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.p1.0.into(),
                    r.p1.1.into(),
                    r.p2.0.into(),
                    r.p2.1.into(),
                    self.lambda.into(),
                    self.gamma.into(),
                    self.h.into(),
                    r.rect1.0.into(),
                    r.rect1.1.into(),
                    r.rect2.0.into(),
                    r.rect2.1.into(),
                    r.empirical.into(),
                    r.stderr.into(),
                    r.exact.into(),
                    r.theory.into(),
                    r.z.into(),
                    r.pass.into(),
                ]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
        }
    }
}

/// Identity stamped on every report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub kind: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

/// SHA-256 of the key-sorted compact JSON form of a configuration.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let v = serde_json::to_value(config)?;
    let text = serde_json::to_string(&v)?;
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

impl ReportMeta {
    pub fn new<C: Serialize>(kind: &str, config: &C, seed: u64) -> Result<Self> {
        Ok(ReportMeta {
            kind: kind.to_string(),
            config_hash: config_hash(config)?,
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

#[derive(Serialize)]
struct JsonReport<'a, T: Serialize> {
    meta: &'a ReportMeta,
    result: &'a T,
}

/// Report text in the requested format.
pub fn render_report<T: Serialize + Tabular>(
    meta: &ReportMeta,
    body: &T,
    format: ReportFormat,
) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&JsonReport { meta, result: body })?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut s = format!(
                "# kind={} config_hash={} seed={} version={}\n",
                meta.kind, meta.config_hash, meta.seed, meta.version
            );
            s.push_str(&body.columns().join(","));
            s.push('\n');
            for row in body.rows() {
                let cells: Vec<String> = row.iter().map(Cell::render).collect();
                s.push_str(&cells.join(","));
                s.push('\n');
            }
            Ok(s)
        }
    }
}

/// Write `<dir>/<kind>.<ext>` and return its path.
pub fn emit_report<T: Serialize + Tabular>(
    meta: &ReportMeta,
    body: &T,
    format: ReportFormat,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.{}", meta.kind, format.extension()));
    fs::write(&path, render_report(meta, body, format)?)?;
    Ok(path)
}
