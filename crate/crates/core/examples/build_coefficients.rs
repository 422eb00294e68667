//! Build each coefficient family, report its zero-sum residual, and round-trip one grid through LSCG.
use latticescale::coeff_families::*;
use latticescale::io::{load_grid, save_grid};

fn main() -> latticescale::Result<()> {
    let grids = [
        (
            "isotropic d=-0.1",
            isotropic_coeffs(-0.1, 64, &IsotropicOptions::default())?,
        ),
        ("heat d=-0.3", heat_coeffs(-0.3, 0.5, 64)?),
        ("separable", separable_coeffs(-0.2, -0.3, 64, 64)?),
        ("pair difference", pair_difference_coeffs()),
        (
            "synthetic (1.6, 8)",
            synthetic_coeffs(1.6, 8.0, &AngularFunction::Constant(1.0), 256, 16)?,
        ),
    ];
    for (name, g) in &grids {
        println!(
            "{name:<20} radii {:?}  a(0,0) = {:+.6}  sum = {:+.3e}  sum a^2 = {:.6}",
            g.radii(),
            g.get(0, 0),
            g.zero_sum_residual,
            g.sum_sq()
        );
    }
    let dir = std::env::temp_dir().join("latticescale-example");
    std::fs::create_dir_all(&dir)?;
    let (path, sidecar) = save_grid(&dir.join("iso.lscg"), &grids[0].1)?;
    let back = load_grid(&path)?;
    println!(
        "wrote {} and {}; identical after reload: {}",
        path.display(),
        sidecar.display(),
        back == grids[0].1
    );
    Ok(())
}
