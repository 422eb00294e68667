//! Degenerate FBS covariances, the sigma norms and the balanced kernel covariance.
use latticescale::coeff_families::{isotropic_far_constant, AngularFunction};
use latticescale::limit_calc::*;

fn main() -> latticescale::Result<()> {
    let b00 = FbsParams::new(0.0, 0.0)?;
    for (p1, p2) in [
        ((1.0, 1.0), (1.0, 1.0)),
        ((1.0, 1.0), (1.0, 2.0)),
        ((1.0, 1.0), (2.0, 3.0)),
    ] {
        println!("Cov B_00 {p1:?} {p2:?} = {}", fbs_covariance(b00, p1, p2)?);
    }
    let l0 = AngularFunction::Constant(isotropic_far_constant(-0.1));
    let s = sigma_norms(2.2, 2.2, &l0)?;
    println!(
        "sigma1 = {:.8} (kernel norm {:.8}), sigma2 = {:.8}",
        s.sigma1,
        sigma1_by_kernel_norm(2.2, 2.2, &l0)?,
        s.sigma2
    );
    let v = v0_covariance(2.2, 2.2, &l0, (1.0, 1.0), (1.0, 1.0))?;
    println!("Var V0(1,1) = {:.6} +- {:.1e}", v.value, v.abs_error);
    Ok(())
}
