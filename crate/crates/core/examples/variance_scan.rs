//! Slope of log Var / 2 against log lambda for the isotropic d = -0.1 field, exact variances.
use latticescale::experiments::{Experiment, ModelSpec, ScanConfig};
use latticescale::lattice_sim::{InnovationSpec, McOptions};

fn main() -> latticescale::Result<()> {
    let cfg = ScanConfig {
        model: ModelSpec::Isotropic {
            d: -0.1,
            radius: 512,
            options: Default::default(),
        },
        innovation: InnovationSpec::gaussian(1),
        gamma_grid: vec![0.5, 1.0, 2.0],
        lambda_grid: vec![64.0, 128.0, 256.0, 512.0],
        point: (1.0, 1.0),
        reps: 200,
        use_exact_variance: true,
    };
    let ex = Experiment::prepare(cfg)?;
    for &gamma in &ex.cfg.gamma_grid {
        let f = ex.variance_scan(gamma, &McOptions::default())?;
        println!(
            "gamma {gamma:<4} H_hat {:.4} +- {:.4}  theory {:?}  refit {}",
            f.h_hat, f.stderr, f.h_theory, f.refit
        );
    }
    Ok(())
}
