//! One field window by FFT and by direct summation; the two agree to rounding.
use latticescale::coeff_families::{isotropic_coeffs, IsotropicOptions};
use latticescale::lattice_sim::{
    simulate_field, simulate_field_direct, InnovationSpec, DEFAULT_MEMORY_BUDGET,
};

fn main() -> latticescale::Result<()> {
    let g = isotropic_coeffs(-0.3, 16, &IsotropicOptions::default())?;
    let innov = InnovationSpec::gaussian(2024);
    let fast = simulate_field(&g, 32, 32, &innov, 0, DEFAULT_MEMORY_BUDGET)?;
    let slow = simulate_field_direct(&g, 32, 32, &innov, 0)?;
    let rms = (fast
        .values
        .iter()
        .zip(&slow.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / fast.values.len() as f64)
        .sqrt();
    println!(
        "X(1,1) = {:.6}, X(32,32) = {:.6}",
        fast.get(1, 1),
        fast.get(32, 32)
    );
    println!("rms(fft - direct) = {rms:.2e}");
    Ok(())
}
