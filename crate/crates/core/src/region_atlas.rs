//! Exponent algebra for the anisotropic scaling of the partial-sum field:
//! region classification, critical aspect exponent, normalisation exponent
//! `H(gamma)` and the identity of the limit field on each side of it.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::limit_calc::FbsParams;

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelExponents {
    pub q1: f64,
    pub q2: f64,
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "H1")]
    pub h1: f64,
    #[serde(rename = "H2")]
    pub h2: f64,
    #[serde(rename = "H1_tilde")]
    pub h1_tilde: f64,
    #[serde(rename = "H2_tilde")]
    pub h2_tilde: f64,
    pub gamma0: f64,
    pub gamma0_edge1: f64,
    pub gamma0_edge2: f64,
    #[serde(rename = "Q_edge1")]
    pub q_edge1: f64,
    #[serde(rename = "Q_edge2")]
    pub q_edge2: f64,
    #[serde(rename = "Q_tilde1")]
    pub q_tilde1: f64,
    #[serde(rename = "Q_tilde2")]
    pub q_tilde2: f64,
}

pub fn exponents(q1: f64, q2: f64) -> Result<ModelExponents> {
    if !(q1 > 0.0 && q2 > 0.0) || !q1.is_finite() || !q2.is_finite() {
        return Err(invalid(format!(
            "q1 = {q1}, q2 = {q2} must be positive and finite"
        )));
    }
    let (i1, i2) = (1.0 / q1, 1.0 / q2);
    let q = i1 + i2;
    Ok(ModelExponents {
        q1,
        q2,
        q,
        h1: 0.5 + q1 * (q - 1.0),
        h2: 0.5 + q2 * (q - 1.0),
        h1_tilde: 1.5 - q1 + q1 / (2.0 * q2),
        h2_tilde: 1.5 - q2 + q2 / (2.0 * q1),
        gamma0: q1 / q2,
        gamma0_edge1: 1.0 / (2.0 * q2 * (1.0 - q)),
        gamma0_edge2: 2.0 * q1 * (1.0 - q),
        q_edge1: 1.5 * i1 + i2,
        q_edge2: i1 + 1.5 * i2,
        q_tilde1: 0.5 * i1 + i2,
        q_tilde2: i1 + 0.5 * i2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegionTag {
    R11,
    R12,
    R21,
    #[serde(rename = "R22_plus")]
    R22Plus,
    #[serde(rename = "R22_minus")]
    R22Minus,
    R23,
    R32,
    R33,
    /// Finitely dependent fields: edge-only scaling, formally `q1 = q2 = inf`.
    #[serde(rename = "SRD_like")]
    SrdLike,
    #[serde(rename = "boundary")]
    Boundary,
}

impl RegionTag {
    pub fn name(self) -> &'static str {
        match self {
            RegionTag::R11 => "R11",
            RegionTag::R12 => "R12",
            RegionTag::R21 => "R21",
            RegionTag::R22Plus => "R22_plus",
            RegionTag::R22Minus => "R22_minus",
            RegionTag::R23 => "R23",
            RegionTag::R32 => "R32",
            RegionTag::R33 => "R33",
            RegionTag::SrdLike => "SRD_like",
            RegionTag::Boundary => "boundary",
        }
    }

    /// Region obtained by swapping the roles of the two coordinates.
    pub fn mirror(self) -> Self {
        match self {
            RegionTag::R12 => RegionTag::R21,
            RegionTag::R21 => RegionTag::R12,
            RegionTag::R23 => RegionTag::R32,
            RegionTag::R32 => RegionTag::R23,
            t => t,
        }
    }

    pub fn is_nd(self) -> bool {
        matches!(
            self,
            RegionTag::R22Minus
                | RegionTag::R23
                | RegionTag::R32
                | RegionTag::R33
                | RegionTag::SrdLike
        )
    }

    pub fn is_lrd(self) -> bool {
        matches!(
            self,
            RegionTag::R11 | RegionTag::R12 | RegionTag::R21 | RegionTag::R22Plus
        )
    }
}

impl fmt::Display for RegionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionId {
    pub tag: RegionTag,
    pub boundary_detail: Option<String>,
}

impl RegionId {
    fn of(tag: RegionTag) -> Self {
        RegionId {
            tag,
            boundary_detail: None,
        }
    }
}

/// Classify `(q1, q2)`. Points within `tol` of a separating line are tagged boundary.
pub fn classify(q1: f64, q2: f64, tol: f64) -> Result<RegionId> {
    let e = exponents(q1, q2)?;
    classify_exponents(&e, tol)
}

pub fn classify_exponents(e: &ModelExponents, tol: f64) -> Result<RegionId> {
    if !(tol > 0.0) {
        return Err(invalid("tolerance must be positive"));
    }
    if e.q <= 0.0 || e.q >= 2.0 + tol {
        return Err(Error::OutOfModel(format!(
            "Q = {} must satisfy 0 < Q < 2",
            e.q
        )));
    }
    let near = |x: f64| (x - 1.0).abs() <= tol;
    let mut hits = Vec::new();
    if near(e.q) {
        hits.push(format!("Q = {} is within {tol:e} of 1", e.q));
    }
    if (e.q - 2.0).abs() <= tol {
        hits.push(format!("Q = {} is within {tol:e} of 2", e.q));
    }
    let classifiers = if e.q < 1.0 {
        [("Q_edge1", e.q_edge1), ("Q_edge2", e.q_edge2)]
    } else {
        [("Q_tilde1", e.q_tilde1), ("Q_tilde2", e.q_tilde2)]
    };
    for (name, v) in classifiers {
        if near(v) {
            hits.push(format!("{name} = {v} is within {tol:e} of 1"));
        }
    }
    if !hits.is_empty() {
        return Ok(RegionId {
            tag: RegionTag::Boundary,
            boundary_detail: Some(hits.join("; ")),
        });
    }
    let tag = if e.q < 1.0 {
        match (e.q_edge1 > 1.0, e.q_edge2 > 1.0) {
            (true, true) => RegionTag::R22Minus,
            (true, false) => RegionTag::R23,
            (false, true) => RegionTag::R32,
            (false, false) => RegionTag::R33,
        }
    } else {
        match (e.q_tilde1 < 1.0, e.q_tilde2 < 1.0) {
            (true, true) => RegionTag::R22Plus,
            (true, false) => RegionTag::R12,
            (false, true) => RegionTag::R21,
            (false, false) => RegionTag::R11,
        }
    };
    Ok(RegionId::of(tag))
}

/// Critical aspect exponent separating the two unbalanced limits.
pub fn critical_gamma(e: &ModelExponents, region: &RegionId) -> Result<f64> {
    match region.tag {
        RegionTag::R11
        | RegionTag::R12
        | RegionTag::R21
        | RegionTag::R22Plus
        | RegionTag::R22Minus => Ok(e.gamma0),
        RegionTag::R23 => Ok(e.gamma0_edge2),
        RegionTag::R32 => Ok(e.gamma0_edge1),
        RegionTag::R33 | RegionTag::SrdLike => Ok(1.0),
        RegionTag::Boundary => Err(Error::Unsupported(format!(
            "no critical exponent on a region boundary ({})",
            region.boundary_detail.as_deref().unwrap_or("boundary")
        ))),
    }
}

/// `H(gamma) = intercept + slope * gamma` on one side of the critical exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    pub slope: f64,
}

impl Affine {
    pub fn at(&self, gamma: f64) -> f64 {
        self.intercept + self.slope * gamma
    }
}

/// Piecewise-affine normalisation exponent of an ND region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationLaw {
    pub gamma0: f64,
    pub below: Affine,
    pub above: Affine,
    /// Whether the balanced case at `gamma0` is covered by a limit theorem.
    pub balanced_defined: bool,
}

impl NormalizationLaw {
    pub fn h(&self, gamma: f64) -> Result<f64> {
        if !(gamma > 0.0) {
            return Err(invalid(format!("gamma = {gamma} must be positive")));
        }
        if gamma == self.gamma0 {
            if !self.balanced_defined {
                return Err(open_case(self.gamma0));
            }
            return Ok(self.below.at(gamma));
        }
        Ok(if gamma < self.gamma0 {
            self.below.at(gamma)
        } else {
            self.above.at(gamma)
        })
    }

    /// Same as [`h`](Self::h) but evaluates the continuous extension at `gamma0`.
    pub fn h_continuous(&self, gamma: f64) -> f64 {
        if gamma <= self.gamma0 {
            self.below.at(gamma)
        } else {
            self.above.at(gamma)
        }
    }
}

fn open_case(g0: f64) -> Error {
    Error::OpenCase(format!(
        "the balanced limit at gamma = gamma0 = {g0} is an open question for one-sided edge regions (possibly with logarithmic factors)"
    ))
}

fn lrd_refusal(tag: RegionTag) -> Error {
    Error::Unsupported(format!(
        "normalisation exponents in the long-range dependent region {tag} are not part of this model; only the limit identities are reported"
    ))
}

pub fn normalization_law(e: &ModelExponents, region: &RegionId) -> Result<NormalizationLaw> {
    let g0 = critical_gamma(e, region)?;
    let half = Affine {
        intercept: 0.5,
        slope: 0.0,
    };
    let half_gamma = Affine {
        intercept: 0.0,
        slope: 0.5,
    };
    let lower = Affine {
        intercept: 0.5,
        slope: e.h2,
    };
    let upper = Affine {
        intercept: e.h1,
        slope: 0.5,
    };
    let (below, above, balanced) = match region.tag {
        RegionTag::R22Minus => (lower, upper, true),
        RegionTag::R23 => (half, upper, false),
        RegionTag::R32 => (lower, half_gamma, false),
        RegionTag::R33 | RegionTag::SrdLike => (half, half_gamma, true),
        t if t.is_lrd() => return Err(lrd_refusal(t)),
        _ => unreachable!("boundary handled by critical_gamma"),
    };
    Ok(NormalizationLaw {
        gamma0: g0,
        below,
        above,
        balanced_defined: balanced,
    })
}

/// `H(gamma)`, the exponent of the normalisation `A = lambda^H(gamma)`.
pub fn normalization_exponent(e: &ModelExponents, region: &RegionId, gamma: f64) -> Result<f64> {
    normalization_law(e, region)?.h(gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleSymbol {
    Sigma1,
    Sigma2,
    Sigma1Tilde,
    Sigma2Tilde,
    SigmaEdge1,
    SigmaEdge2,
    MixedEdge,
    V0Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Plus,
    Minus,
    Balanced,
}

/// Limit field for a region and side of the critical exponent.
///
/// `hurst_pair` is `None` for limits that are not a single FBS: the balanced
/// kernel field and the sum of two independent edge sheets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitDescriptor {
    pub hurst_pair: Option<FbsParams>,
    pub scale_symbol: ScaleSymbol,
    pub branch: Branch,
}

fn fbs(hx: f64, hy: f64, scale: ScaleSymbol, branch: Branch) -> LimitDescriptor {
    LimitDescriptor {
        hurst_pair: Some(FbsParams { hx, hy }),
        scale_symbol: scale,
        branch,
    }
}

/// Limit descriptors of the two unbalanced sides `(plus, minus)`.
pub fn unbalanced_limits(
    e: &ModelExponents,
    region: &RegionId,
) -> Result<(LimitDescriptor, LimitDescriptor)> {
    use Branch::*;
    use ScaleSymbol::*;
    Ok(match region.tag {
        RegionTag::R22Minus => (fbs(e.h1, 0.5, Sigma1, Plus), fbs(0.5, e.h2, Sigma2, Minus)),
        RegionTag::R23 => (
            fbs(e.h1, 0.5, Sigma1, Plus),
            fbs(0.5, 0.0, SigmaEdge1, Minus),
        ),
        RegionTag::R32 => (
            fbs(0.0, 0.5, SigmaEdge2, Plus),
            fbs(0.5, e.h2, Sigma2, Minus),
        ),
        RegionTag::R33 | RegionTag::SrdLike => (
            fbs(0.0, 0.5, SigmaEdge2, Plus),
            fbs(0.5, 0.0, SigmaEdge1, Minus),
        ),
        RegionTag::R22Plus => (fbs(e.h1, 0.5, Sigma1, Plus), fbs(0.5, e.h2, Sigma2, Minus)),
        RegionTag::R12 => (
            fbs(e.h1, 0.5, Sigma1, Plus),
            fbs(e.h1_tilde, 1.0, Sigma2Tilde, Minus),
        ),
        RegionTag::R21 => (
            fbs(1.0, e.h2_tilde, Sigma1Tilde, Plus),
            fbs(0.5, e.h2, Sigma2, Minus),
        ),
        RegionTag::R11 => (
            fbs(1.0, e.h2_tilde, Sigma1Tilde, Plus),
            fbs(e.h1_tilde, 1.0, Sigma2Tilde, Minus),
        ),
        RegionTag::Boundary => {
            return Err(Error::Unsupported(
                "no limit descriptor on a region boundary".into(),
            ));
        }
    })
}

pub fn limit_descriptor(
    e: &ModelExponents,
    region: &RegionId,
    gamma: f64,
) -> Result<LimitDescriptor> {
    if !(gamma > 0.0) {
        return Err(invalid(format!("gamma = {gamma} must be positive")));
    }
    let g0 = critical_gamma(e, region)?;
    let (plus, minus) = unbalanced_limits(e, region)?;
    if gamma > g0 {
        return Ok(plus);
    }
    if gamma < g0 {
        return Ok(minus);
    }
    match region.tag {
        RegionTag::R23 | RegionTag::R32 => Err(open_case(g0)),
        RegionTag::R33 | RegionTag::SrdLike => Ok(LimitDescriptor {
            hurst_pair: None,
            scale_symbol: ScaleSymbol::MixedEdge,
            branch: Branch::Balanced,
        }),
        _ => Ok(LimitDescriptor {
            hurst_pair: None,
            scale_symbol: ScaleSymbol::V0Kernel,
            branch: Branch::Balanced,
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AtlasRow {
    pub inv_q1: f64,
    pub inv_q2: f64,
    pub region: RegionId,
    pub exponents: Option<ModelExponents>,
}

/// Classify every `(1/q1, 1/q2)` point. Points with `Q` outside `(0, 2)` are tagged boundary.
pub fn phase_diagram(points: &[(f64, f64)], tol: f64) -> Vec<AtlasRow> {
    points
        .iter()
        .map(|&(a, b)| {
            let boundary = |msg: String| RegionId {
                tag: RegionTag::Boundary,
                boundary_detail: Some(msg),
            };
            if !(a > 0.0 && b > 0.0) {
                return AtlasRow {
                    inv_q1: a,
                    inv_q2: b,
                    region: boundary("inverse exponents must be positive".into()),
                    exponents: None,
                };
            }
            let e = exponents(1.0 / a, 1.0 / b).ok();
            let region = match e.as_ref().map(|e| classify_exponents(e, tol)) {
                Some(Ok(r)) => r,
                Some(Err(err)) => boundary(err.to_string()),
                None => boundary("invalid exponents".into()),
            };
            AtlasRow {
                inv_q1: a,
                inv_q2: b,
                region,
                exponents: e,
            }
        })
        .collect()
}

/// Cell-centred `n x n` grid over `(lo, hi)^2` in `(1/q1, 1/q2)`.
pub fn atlas_grid(n: usize, lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let h = (hi - lo) / n as f64;
    let mut pts = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            pts.push((lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h));
        }
    }
    pts
}

pub fn write_atlas_csv<W: Write>(rows: &[AtlasRow], mut w: W) -> std::io::Result<()> {
    writeln!(
        w,
        "inv_q1,inv_q2,region,Q,Q_edge1,Q_edge2,Q_tilde1,Q_tilde2"
    )?;
    for r in rows {
        match &r.exponents {
            Some(e) => writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.inv_q1, r.inv_q2, r.region.tag, e.q, e.q_edge1, e.q_edge2, e.q_tilde1, e.q_tilde2
            )?,
            None => writeln!(w, "{},{},{},,,,,", r.inv_q1, r.inv_q2, r.region.tag)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponent_examples() {
        let e = exponents(4.0, 4.0).unwrap();
        assert_abs_diff_eq!(e.q, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.q_edge1, 0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(e.h1, -1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.gamma0_edge2, 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.gamma0_edge1, 0.25, epsilon = 1e-15);
        let e = exponents(2.2, 2.2).unwrap();
        assert_abs_diff_eq!(e.q_edge1, 5.0 / 4.4, epsilon = 1e-14);
        assert_abs_diff_eq!(e.h2, 0.3, epsilon = 1e-14);
        let e = exponents(1.6, 8.0).unwrap();
        assert_abs_diff_eq!(e.q, 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(e.q_edge1, 1.0625, epsilon = 1e-15);
        assert_abs_diff_eq!(e.q_edge2, 0.8125, epsilon = 1e-15);
        assert_abs_diff_eq!(e.gamma0_edge2, 0.8, epsilon = 1e-14);
        assert_abs_diff_eq!(e.h1, 0.1, epsilon = 1e-14);
    }

    #[test]
    fn classify_examples() {
        let t = |a, b| classify(a, b, DEFAULT_TOL).unwrap().tag;
        assert_eq!(t(4.0, 4.0), RegionTag::R33);
        assert_eq!(t(1.6, 8.0), RegionTag::R23);
        assert_eq!(t(8.0, 1.6), RegionTag::R32);
        assert_eq!(t(2.2, 2.2), RegionTag::R22Minus);
        assert_eq!(t(2.0, 2.0), RegionTag::Boundary);
        assert!(classify(1.0, 1.0, DEFAULT_TOL)
            .map(|r| r.tag == RegionTag::Boundary)
            .unwrap_or(true));
        assert!(classify(0.5, 0.5, DEFAULT_TOL).is_err());
    }

    #[test]
    fn h_examples() {
        let e = exponents(2.2, 2.2).unwrap();
        let r = classify(2.2, 2.2, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(
            normalization_exponent(&e, &r, 2.0).unwrap(),
            1.3,
            epsilon = 1e-12
        );
        let e = exponents(1.6, 8.0).unwrap();
        let r = classify(1.6, 8.0, DEFAULT_TOL).unwrap();
        assert_abs_diff_eq!(
            normalization_exponent(&e, &r, 0.5).unwrap(),
            0.5,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            normalization_exponent(&e, &r, 1.0).unwrap(),
            0.6,
            epsilon = 1e-12
        );
        assert!(matches!(
            normalization_exponent(&e, &r, e.gamma0_edge2),
            Err(Error::OpenCase(_))
        ));
    }

    #[test]
    fn descriptors() {
        let e = exponents(4.0, 4.0).unwrap();
        let r = classify(4.0, 4.0, DEFAULT_TOL).unwrap();
        let d = limit_descriptor(&e, &r, 2.0).unwrap();
        assert_eq!(d.hurst_pair, Some(FbsParams { hx: 0.0, hy: 0.5 }));
        assert_eq!(d.scale_symbol, ScaleSymbol::SigmaEdge2);
        let e = exponents(1.6, 8.0).unwrap();
        let r = classify(1.6, 8.0, DEFAULT_TOL).unwrap();
        let d = limit_descriptor(&e, &r, 0.5).unwrap();
        assert_eq!(d.hurst_pair, Some(FbsParams { hx: 0.5, hy: 0.0 }));
        assert_eq!(
            (d.scale_symbol, d.branch),
            (ScaleSymbol::SigmaEdge1, Branch::Minus)
        );
        assert!(matches!(
            limit_descriptor(&e, &r, e.gamma0_edge2),
            Err(Error::OpenCase(_))
        ));
        let e = exponents(2.2, 2.2).unwrap();
        let r = classify(2.2, 2.2, DEFAULT_TOL).unwrap();
        let d = limit_descriptor(&e, &r, e.gamma0).unwrap();
        assert_eq!(
            (d.scale_symbol, d.branch),
            (ScaleSymbol::V0Kernel, Branch::Balanced)
        );
    }

    #[test]
    fn atlas_points() {
        let rows = phase_diagram(
            &[(0.25, 0.25), (0.625, 0.125), (0.5, 0.5), (0.3, 0.7)],
            DEFAULT_TOL,
        );
        assert_eq!(rows[0].region.tag, RegionTag::R33);
        assert_eq!(rows[1].region.tag, RegionTag::R23);
        assert_eq!(rows[2].region.tag, RegionTag::Boundary);
        assert_eq!(rows[3].region.tag, RegionTag::Boundary);
    }
}
