//! Edge variances of the R33 isotropic field under doubling of the truncation radius.
use latticescale::coeff_families::{isotropic_coeffs, IsotropicOptions};
use latticescale::limit_calc::edge_sigmas;

fn main() -> latticescale::Result<()> {
    let mut prev: Option<f64> = None;
    for r in [32, 64, 128, 256] {
        let e = edge_sigmas(&isotropic_coeffs(-0.6, r, &IsotropicOptions::default())?);
        let change = prev
            .map(|p| format!("{:+.3}%", 100.0 * (e.sigma2_edge1 - p) / p))
            .unwrap_or_default();
        println!(
            "R {r:<4} sigma2_edge = ({:.6}, {:.6})  bound {:.2e}  {change}",
            e.sigma2_edge1, e.sigma2_edge2, e.truncation_bound
        );
        prev = Some(e.sigma2_edge1);
    }
    Ok(())
}
