//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero when a criterion
//! fails that is not listed in `KNOWN_UNATTAINABLE`.

use std::time::Instant;

use latticescale::coeff_families::*;
use latticescale::experiments::{
    render_report, Experiment, ModelSpec, ReportFormat, ReportMeta, ScanConfig,
};
use latticescale::io::write_slab;
use latticescale::lattice_sim::*;
use latticescale::limit_calc::*;
use latticescale::region_atlas::*;
use nalgebra::DMatrix;
use statrs::function::gamma::{gamma, ln_gamma};

/// Criteria whose statement contradicts an exact identity; see the notes printed with them.
const KNOWN_UNATTAINABLE: &[u32] = &[3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn mc(threads: usize) -> McOptions {
    McOptions {
        threads,
        memory_budget: DEFAULT_MEMORY_BUDGET,
    }
}

fn scan(model: ModelSpec, gammas: Vec<f64>, lambdas: Vec<f64>) -> ScanConfig {
    ScanConfig {
        model,
        innovation: InnovationSpec::gaussian(11),
        gamma_grid: gammas,
        lambda_grid: lambdas,
        point: (1.0, 1.0),
        reps: 200,
        use_exact_variance: true,
    }
}

fn c1() -> Outcome {
    let battery = [
        (4.0, 4.0, RegionTag::R33, 1.0),
        (1.6, 8.0, RegionTag::R23, 0.8),
        (8.0, 1.6, RegionTag::R32, 1.25),
        (2.2, 2.2, RegionTag::R22Minus, 1.0),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    for (q1, q2, tag, g0) in battery {
        let e = exponents(q1, q2).unwrap();
        let r = classify(q1, q2, DEFAULT_TOL).unwrap();
        let g = critical_gamma(&e, &r).unwrap();
        let law = normalization_law(&e, &r).unwrap();
        let jump = (law.below.at(g) - law.above.at(g)).abs();
        let this = r.tag == tag && (g - g0).abs() < 1e-12 && jump < 1e-12;
        ok &= this;
        notes.push(format!("({q1},{q2}) {} g0={g:.4} jump={jump:.0e}", r.tag));
    }
    let e = exponents(2.2, 2.2).unwrap();
    ok &= (e.h1 - 0.3).abs() < 1e-12 && (e.h2 - 0.3).abs() < 1e-12;
    // Structure of the exponent law on each side.
    let r = classify(2.2, 2.2, DEFAULT_TOL).unwrap();
    ok &= (normalization_exponent(&e, &r, 2.0).unwrap() - 1.3).abs() < 1e-12;
    ok &= (normalization_exponent(&e, &r, 0.5).unwrap() - 0.65).abs() < 1e-12;
    let e23 = exponents(1.6, 8.0).unwrap();
    let r23 = classify(1.6, 8.0, DEFAULT_TOL).unwrap();
    ok &= matches!(
        normalization_exponent(&e23, &r23, 0.8),
        Err(latticescale::Error::OpenCase(_))
    );
    outcome(ok, notes.join("; "))
}

fn psi_closed(d: f64, j: usize) -> f64 {
    // psi_j(d) = Gamma(j - d) / (Gamma(j + 1) Gamma(-d))
    if j == 0 {
        return 1.0;
    }
    (ln_gamma(j as f64 - d) - ln_gamma(j as f64 + 1.0)).exp() / gamma(-d)
}

fn c2() -> Outcome {
    let mut worst = 0.0f64;
    for d in [0.45, -0.45, 0.25, -0.25, 0.1, -0.1] {
        let w = psi_weights(d, 100).unwrap().weights;
        for (j, &x) in w.iter().enumerate() {
            let c = psi_closed(d, j);
            worst = worst.max(((x - c) / c).abs());
        }
    }
    outcome(
        worst <= 1e-10,
        format!("max relative error {worst:.2e} over j <= 100"),
    )
}

fn c3() -> Outcome {
    let g = pair_difference_coeffs();
    let mut exact_ok = true;
    let mut count = 0;
    for &lambda in &[1.0f64, 3.5, 10.0, 64.0, 100.0, 512.0] {
        for &gamma in &[0.3, 0.5, 1.0, 1.7, 2.0] {
            for &(x, y) in &[(1.0, 1.0), (0.3, 0.7), (2.5, 0.1), (1.9, 3.0)] {
                let m = floor_count(lambda.powf(gamma) * y);
                let n = floor_count(lambda * x);
                if m < 1 || n < 1 {
                    continue;
                }
                count += 1;
                let v = exact_variance(&g, gamma, lambda, (x, y)).unwrap();
                exact_ok &= v == 2.0 * n as f64;
            }
        }
    }
    let es = edge_sigmas(&g);
    let edge_ok = es.sigma2_edge1 == 2.0 && es.sigma2_edge2 == 0.0;
    let ex = Experiment::prepare(scan(
        ModelSpec::PairDifference,
        vec![],
        vec![64.0, 128.0, 256.0, 512.0],
    ))
    .unwrap();
    let mut below_ok = true;
    let mut above_ok = true;
    let mut fits = Vec::new();
    for gamma in [0.3, 0.5, 0.8, 1.2, 1.5, 2.0] {
        let h = ex.variance_scan(gamma, &mc(1)).unwrap().h_hat;
        fits.push(format!("{gamma}:{h:.6}"));
        if gamma < 1.0 {
            below_ok &= (h - 0.5).abs() <= 1e-6;
        } else {
            above_ok &= (h - gamma / 2.0).abs() <= 1e-6;
        }
    }
    let detail = format!(
        "Var = 2 floor(lambda x) in {count} cases: {exact_ok}; edge sigmas (2,0): {edge_ok}; \
         H_hat = 1/2 below 1: {below_ok}; H_hat = gamma/2 above 1: {above_ok} [{}]. \
         Var does not depend on gamma, so H_hat = 1/2 for every gamma and the gamma/2 clause cannot hold",
        fits.join(" ")
    );
    // The attainable clauses must hold; the gamma/2 clause is reported as it comes out.
    assert!(
        exact_ok && edge_ok && below_ok,
        "attainable parts of criterion 3 failed: {detail}"
    );
    outcome(exact_ok && edge_ok && below_ok && above_ok, detail)
}

fn c4() -> Outcome {
    let grids = [
        (
            "isotropic",
            isotropic_coeffs(-0.2, 8, &IsotropicOptions::default()).unwrap(),
        ),
        ("heat", heat_coeffs(-0.3, 0.4, 8).unwrap()),
        ("separable", separable_coeffs(-0.2, 0.3, 8, 6).unwrap()),
        ("pair-difference", pair_difference_coeffs()),
        (
            "synthetic",
            synthetic_coeffs(1.6, 8.0, &AngularFunction::Constant(1.0), 12, 5).unwrap(),
        ),
    ];
    let innov = InnovationSpec::gaussian(4);
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for (name, g) in &grids {
        let a = simulate_field(g, 32, 32, &innov, 3, DEFAULT_MEMORY_BUDGET).unwrap();
        let b = simulate_field_direct(g, 32, 32, &innov, 3).unwrap();
        let rms = (a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / 1024.0)
            .sqrt();
        worst = worst.max(rms);
        notes.push(format!("{name} {rms:.1e}"));
    }
    outcome(worst <= 1e-9, notes.join(", "))
}

fn c5() -> Outcome {
    let iso_a = isotropic_coeffs(-0.1, 24, &IsotropicOptions::default()).unwrap();
    let iso_c = isotropic_coeffs(-0.6, 24, &IsotropicOptions::default()).unwrap();
    let heat_a = heat_coeffs(-0.1, 0.5, 24).unwrap();
    let heat_b = heat_coeffs(-0.35, 0.5, 24).unwrap();
    let heat_c = heat_coeffs(-0.6, 0.5, 24).unwrap();
    let r23 = synthetic_coeffs(1.6, 8.0, &AngularFunction::Constant(1.0), 64, 8).unwrap();
    let r32 = synthetic_coeffs(8.0, 1.6, &AngularFunction::Constant(1.0), 8, 64).unwrap();
    let tag = |g: &CoefficientGrid| classify(g.q1, g.q2, DEFAULT_TOL).unwrap().tag;
    assert_eq!(tag(&iso_a), RegionTag::R22Minus);
    assert_eq!(tag(&heat_a), RegionTag::R22Minus);
    assert_eq!(tag(&heat_b), RegionTag::R23);
    assert_eq!(tag(&r23), RegionTag::R23);
    assert_eq!(tag(&r32), RegionTag::R32);
    assert_eq!(tag(&iso_c), RegionTag::R33);
    assert_eq!(tag(&heat_c), RegionTag::R33);
    // (grid, gamma, lambda, point)
    let battery: Vec<(&CoefficientGrid, f64, f64, (f64, f64))> = vec![
        (&iso_a, 1.0, 32.0, (1.0, 1.0)),
        (&iso_a, 0.5, 48.0, (1.0, 2.0)),
        (&iso_a, 1.5, 12.0, (0.8, 1.0)),
        (&heat_a, 1.0, 24.0, (1.0, 1.0)),
        (&heat_a, 0.7, 40.0, (0.5, 1.5)),
        (&heat_b, 1.0, 32.0, (1.0, 1.0)),
        (&heat_b, 1.3, 16.0, (1.0, 0.5)),
        (&r23, 0.6, 40.0, (1.0, 1.0)),
        (&r23, 1.0, 24.0, (1.0, 1.0)),
        (&r23, 1.2, 16.0, (0.7, 1.0)),
        (&r32, 1.0, 24.0, (1.0, 1.0)),
        (&r32, 1.5, 12.0, (1.0, 0.6)),
        (&r32, 0.8, 40.0, (1.2, 1.0)),
        (&r32, 2.0, 6.0, (1.0, 1.0)),
        (&iso_c, 1.0, 32.0, (1.0, 1.0)),
        (&iso_c, 0.5, 48.0, (1.0, 1.0)),
        (&iso_c, 2.0, 6.0, (1.0, 1.0)),
        (&heat_c, 1.0, 32.0, (1.0, 0.7)),
        (&heat_c, 0.6, 40.0, (0.9, 1.0)),
        (&heat_c, 1.4, 12.0, (1.0, 1.0)),
    ];
    let mut within = 0;
    let mut worst = 0.0f64;
    for (k, (g, gamma, lambda, p)) in battery.iter().enumerate() {
        let innov = InnovationSpec::gaussian(1000 + k as u64);
        let est = replicate_variance(g, &innov, *gamma, &[*lambda], *p, 200, &mc(2)).unwrap()[0];
        let exact = exact_variance(g, *gamma, *lambda, *p).unwrap();
        let z = (est.var - exact) / est.stderr;
        worst = worst.max(z.abs());
        if z.abs() <= 4.0 {
            within += 1;
        }
    }
    let frac = within as f64 / battery.len() as f64;
    outcome(
        frac >= 0.95,
        format!(
            "{within}/{} within 4 SE, max |z| = {worst:.2}",
            battery.len()
        ),
    )
}

fn c6() -> Outcome {
    let lambdas = vec![64.0, 128.0, 256.0, 512.0];
    let mut ok = true;
    let mut notes = Vec::new();
    let iso1 = Experiment::prepare(scan(
        ModelSpec::Isotropic {
            d: -0.1,
            radius: 512,
            options: IsotropicOptions::default(),
        },
        vec![],
        lambdas.clone(),
    ))
    .unwrap();
    for gamma in [0.5, 1.0, 2.0] {
        let f = iso1.variance_scan(gamma, &mc(1)).unwrap();
        let th = f.h_theory.unwrap();
        ok &= (f.h_hat - th).abs() <= 0.1;
        notes.push(format!("R22- g{gamma}: {:.3} vs {th:.3}", f.h_hat));
    }
    let iso6 = Experiment::prepare(scan(
        ModelSpec::Isotropic {
            d: -0.6,
            radius: 128,
            options: IsotropicOptions::default(),
        },
        vec![],
        lambdas.clone(),
    ))
    .unwrap();
    for gamma in [0.5, 2.0] {
        let f = iso6.variance_scan(gamma, &mc(1)).unwrap();
        let th = 0.5f64.max(gamma / 2.0);
        ok &= (f.h_hat - th).abs() <= 0.1;
        notes.push(format!("R33 g{gamma}: {:.3} vs {th:.3}", f.h_hat));
    }
    let r23 = Experiment::prepare(scan(
        ModelSpec::Synthetic {
            q1: 1.6,
            q2: 8.0,
            angular: AngularFunction::Constant(1.0),
            r1: 2048,
            r2: 16,
        },
        vec![0.3, 0.45, 0.6, 0.7, 0.9, 1.0, 1.2, 1.5],
        lambdas,
    ))
    .unwrap();
    let rep = r23.transition_scan(&mc(1)).unwrap();
    let kink = rep.detected_kink;
    // A break forced at q1/q2 = 0.2 lies below the grid, i.e. a single line; compare its fit.
    let hs: Vec<f64> = rep.rows.iter().map(|r| r.h_hat).collect();
    let gs: Vec<f64> = rep.rows.iter().map(|r| r.gamma).collect();
    let (_, _, hinge_sse) = hinge_fit(&gs, &hs).unwrap();
    let line_sse = line_sse(&gs, &hs);
    let kink_ok = kink.is_some_and(|k| (k - 0.8).abs() <= 0.2 && (k - 0.2).abs() > 0.2)
        && line_sse > 10.0 * hinge_sse;
    ok &= kink_ok;
    notes.push(format!(
        "R23 kink {kink:?}, sse line/hinge = {:.1}",
        line_sse / hinge_sse
    ));
    outcome(ok, notes.join("; "))
}

use latticescale::experiments::hinge_fit;

fn line_sse(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let b = x
        .iter()
        .zip(y)
        .map(|(a, c)| (a - mx) * (c - my))
        .sum::<f64>()
        / x.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
    x.iter()
        .zip(y)
        .map(|(a, c)| (c - my - b * (a - mx)).powi(2))
        .sum()
}

fn c7() -> Outcome {
    let mut ok = true;
    let b00 = FbsParams::new(0.0, 0.0).unwrap();
    ok &= fbs_covariance(b00, (1.0, 1.0), (1.0, 1.0)).unwrap() == 1.0;
    ok &= fbs_covariance(b00, (1.0, 1.0), (1.0, 2.0)).unwrap() == 0.5;
    ok &= fbs_covariance(b00, (1.0, 1.0), (2.0, 3.0)).unwrap() == 0.25;
    // H = 1/2 is min, H = 1 is the product, mixed degenerate pairs factorise.
    let c = |hx, hy, a, b| fbs_covariance(FbsParams::new(hx, hy).unwrap(), a, b).unwrap();
    ok &= c(0.5, 0.0, (1.0, 0.5), (2.0, 0.7)) == 0.5;
    ok &= c(0.0, 0.5, (1.0, 0.5), (1.0, 0.7)) == 0.5;
    ok &= (c(1.0, 0.5, (2.0, 1.0), (3.0, 4.0)) - 6.0).abs() < 1e-15;
    ok &= (c(1.0, 1.0, (2.0, 1.5), (3.0, 4.0)) - 36.0).abs() < 1e-12;
    // Limits as the Hurst index reaches 0 and 1.
    let pts = [(0.3, 0.3), (0.3, 1.7), (2.0, 0.5), (1.0, 1.0 + 1e-3)];
    let mut worst = 0.0f64;
    for &(a, b) in &pts {
        for (h, lim) in [(1e-9, 0.0), (1.0 - 1e-9, 1.0)] {
            worst = worst.max((fbm_factor(h, a, b) - fbm_factor(lim, a, b)).abs());
        }
    }
    ok &= worst <= 1e-6;
    // Gram matrices of up to six points.
    let mut min_eig = f64::INFINITY;
    let hs = [0.0, 0.2, 0.5, 0.8, 1.0];
    let pts = [
        (0.2, 0.5),
        (1.0, 1.0),
        (1.0, 2.5),
        (3.0, 0.5),
        (0.2, 2.5),
        (2.2, 1.1),
    ];
    for &hx in &hs {
        for &hy in &hs {
            for n in 2..=6 {
                let p = FbsParams::new(hx, hy).unwrap();
                let m = DMatrix::from_fn(n, n, |i, j| fbs_covariance(p, pts[i], pts[j]).unwrap());
                min_eig = min_eig.min(m.symmetric_eigenvalues().min());
            }
        }
    }
    ok &= min_eig >= -1e-10;
    outcome(
        ok,
        format!(
            "B_00 values 1, 1/2, 1/4; limit gap {worst:.1e}; min Gram eigenvalue {min_eig:.2e}"
        ),
    )
}

fn c8() -> Outcome {
    let mut cfg = scan(
        ModelSpec::Isotropic {
            d: -0.6,
            radius: 128,
            options: IsotropicOptions::default(),
        },
        vec![1.0],
        vec![128.0, 256.0, 512.0],
    );
    cfg.reps = 400;
    cfg.use_exact_variance = false;
    cfg.innovation = InnovationSpec::gaussian(7);
    let ex = Experiment::prepare(cfg).unwrap();
    let pairs = [
        ((1.0, 1.0), (1.0, 1.0)),
        ((1.0, 0.5), (0.5, 1.0)),
        ((0.7, 1.0), (1.0, 0.4)),
    ];
    let rep = ex.covariance_check(1.0, &pairs, &mc(2)).unwrap();
    let es = edge_sigmas(&ex.grid);
    let mut ok = rep.all_pass();
    let mut notes = Vec::new();
    for (r, &(p1, p2)) in rep.rows.iter().zip(&pairs) {
        let want = es.sigma2_edge1
            * fbs_covariance(FbsParams { hx: 0.5, hy: 0.0 }, p1, p2).unwrap()
            + es.sigma2_edge2 * fbs_covariance(FbsParams { hx: 0.0, hy: 0.5 }, p1, p2).unwrap();
        ok &= (r.theory - want).abs() < 1e-12;
        notes.push(format!(
            "{:.3} vs {:.3} (z {:+.2})",
            r.empirical, r.theory, r.z
        ));
    }
    outcome(ok, format!("lambda 512, 400 reps: {}", notes.join(", ")))
}

fn c9() -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for (q1, q2, l0) in [
        (
            2.2,
            2.2,
            AngularFunction::Constant(isotropic_far_constant(-0.1)),
        ),
        (2.2, 2.2, AngularFunction::sample(|z| 1.0 + 0.4 * z)),
        (2.1, 2.6, AngularFunction::Constant(1.0)),
    ] {
        let a = sigma1(q1, q2, &l0).unwrap();
        let b = sigma1_by_kernel_norm(q1, q2, &l0).unwrap();
        let rel = ((a - b) / a).abs();
        ok &= rel <= 1e-6;
        notes.push(format!("sigma1 ({q1},{q2}) rel {rel:.1e}"));
    }
    let e1 = edge_sigmas(&isotropic_coeffs(-0.6, 128, &IsotropicOptions::default()).unwrap());
    let e2 = edge_sigmas(&isotropic_coeffs(-0.6, 256, &IsotropicOptions::default()).unwrap());
    let ch1 = ((e2.sigma2_edge1 - e1.sigma2_edge1) / e1.sigma2_edge1).abs();
    let ch2 = ((e2.sigma2_edge2 - e1.sigma2_edge2) / e1.sigma2_edge2).abs();
    ok &= ch1 < 0.01 && ch2 < 0.01;
    notes.push(format!(
        "edge sigmas R 128 -> 256 change {:.2}%, {:.2}%",
        100.0 * ch1,
        100.0 * ch2
    ));
    outcome(ok, notes.join("; "))
}

fn c10() -> Outcome {
    let g = isotropic_coeffs(-0.3, 16, &IsotropicOptions::default()).unwrap();
    let innov = InnovationSpec::gaussian(99);
    let bytes = |threads: usize| {
        let sums = replicate_rect_sums(&g, &innov, &[(20, 30), (40, 10)], 9, &mc(threads)).unwrap();
        let sim = FieldSimulator::new(&g, 24, 24, DEFAULT_MEMORY_BUDGET).unwrap();
        let mut out = Vec::new();
        for r in 0..3 {
            write_slab(&sim.simulate(&innov, r), &mut out).unwrap();
        }
        for s in sums.iter().flatten() {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    };
    let slabs_same = bytes(1) == bytes(3);
    let report = |threads: usize| {
        let mut cfg = scan(
            ModelSpec::Isotropic {
                d: -0.3,
                radius: 16,
                options: IsotropicOptions::default(),
            },
            vec![1.0],
            vec![8.0, 16.0, 32.0],
        );
        cfg.use_exact_variance = false;
        cfg.reps = 50;
        let ex = Experiment::prepare(cfg.clone()).unwrap();
        let fit = ex.variance_scan(1.0, &mc(threads)).unwrap();
        let meta = ReportMeta::new("scan_variance", &cfg, cfg.innovation.base_seed).unwrap();
        (
            render_report(&meta, &fit, ReportFormat::Json).unwrap(),
            render_report(&meta, &fit, ReportFormat::Csv).unwrap(),
        )
    };
    let reports_same = report(1) == report(4);
    outcome(
        slabs_same && reports_same,
        format!("slabs identical: {slabs_same}; reports identical: {reports_same}"),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "region atlas exactness", c1),
        (2, "psi-weight recursion vs closed form", c2),
        (3, "exact pair-difference oracle", c3),
        (4, "FFT vs direct convolution", c4),
        (5, "Monte Carlo vs exact variance", c5),
        (6, "scaling exponents at desk scale", c6),
        (7, "degenerate FBS covariance", c7),
        (8, "limit covariance under edge effects", c8),
        (9, "quadrature self-consistency", c9),
        (10, "reproducibility across worker counts", c10),
    ];
    let mut unexpected = Vec::new();
    for (id, name, f) in criteria {
        let t = Instant::now();
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:>2} {tag}  {name} ({:.1}s): {}",
            t.elapsed().as_secs_f64(),
            o.detail
        );
        if !o.pass && !KNOWN_UNATTAINABLE.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
