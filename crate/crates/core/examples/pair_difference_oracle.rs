//! The two-tap field e(t,s) - e(t,s-1): Var S = 2 floor(lambda x) whatever gamma is.
use latticescale::coeff_families::pair_difference_coeffs;
use latticescale::lattice_sim::{exact_variance, floor_count};
use latticescale::limit_calc::edge_sigmas;

fn main() -> latticescale::Result<()> {
    let g = pair_difference_coeffs();
    for (lambda, gamma, x, y) in [
        (10.0, 0.5, 1.0, 1.0),
        (64.0, 2.0, 0.3, 0.7),
        (100.0, 1.0, 2.5, 0.1),
    ] {
        let v = exact_variance(&g, gamma, lambda, (x, y))?;
        println!(
            "lambda {lambda:>5} gamma {gamma} x {x} y {y}: Var = {v}  (2 floor(lambda x) = {})",
            2 * floor_count(lambda * x)
        );
    }
    let e = edge_sigmas(&g);
    println!("edge variances: ({}, {})", e.sigma2_edge1, e.sigma2_edge2);
    Ok(())
}
