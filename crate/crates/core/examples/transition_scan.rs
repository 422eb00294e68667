//! Scan gamma for the (1.6, 8) field: the kink sits at 2 q1 (1 - Q) = 0.8, not at q1/q2 = 0.2.
use latticescale::coeff_families::AngularFunction;
use latticescale::experiments::{Experiment, ModelSpec, ScanConfig};
use latticescale::lattice_sim::{InnovationSpec, McOptions};

fn main() -> latticescale::Result<()> {
    let cfg = ScanConfig {
        model: ModelSpec::Synthetic {
            q1: 1.6,
            q2: 8.0,
            angular: AngularFunction::Constant(1.0),
            r1: 2048,
            r2: 16,
        },
        innovation: InnovationSpec::gaussian(1),
        gamma_grid: vec![0.3, 0.45, 0.6, 0.7, 0.9, 1.0, 1.2, 1.5],
        lambda_grid: vec![64.0, 128.0, 256.0, 512.0],
        point: (1.0, 1.0),
        reps: 200,
        use_exact_variance: true,
    };
    let ex = Experiment::prepare(cfg)?;
    let rep = ex.transition_scan(&McOptions::default())?;
    for r in &rep.rows {
        println!(
            "gamma {:<5} H_hat {:.4}  theory {:.4}",
            r.gamma,
            r.h_hat,
            r.h_theory.unwrap_or(f64::NAN)
        );
    }
    println!(
        "kink at {:?}, theory {:?}",
        rep.detected_kink, rep.gamma0_theory
    );
    Ok(())
}
