use latticescale::coeff_families::*;
use latticescale::experiments::*;
use latticescale::lattice_sim::*;
use serde_json::Value;

fn mc(threads: usize) -> McOptions {
    McOptions {
        threads,
        memory_budget: DEFAULT_MEMORY_BUDGET,
    }
}

fn heat_cfg() -> ScanConfig {
    ScanConfig {
        model: ModelSpec::Heat {
            d: -0.3,
            theta: 0.5,
            radius: 8,
        },
        innovation: InnovationSpec::gaussian(21),
        gamma_grid: vec![0.5, 1.0, 1.5],
        lambda_grid: vec![8.0, 16.0, 32.0],
        point: (1.0, 1.0),
        reps: 60,
        use_exact_variance: false,
    }
}

#[test]
fn reports_are_byte_identical() {
    let cfg = heat_cfg();
    let make = |threads| {
        let ex = Experiment::prepare(cfg.clone()).unwrap();
        let rep = ex.transition_scan(&mc(threads)).unwrap();
        let meta = ReportMeta::new("scan_transition", &cfg, cfg.innovation.base_seed).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = emit_report(&meta, &rep, ReportFormat::Csv, dir.path()).unwrap();
        assert_eq!(p.file_name().unwrap(), "scan_transition.csv");
        std::fs::read(p).unwrap()
    };
    assert_eq!(make(1), make(3));
}

#[test]
fn csv_and_json_agree() {
    let cfg = heat_cfg();
    let ex = Experiment::prepare(cfg.clone()).unwrap();
    let fit = ex.variance_scan(1.0, &mc(2)).unwrap();
    let meta = ReportMeta::new("scan_variance", &cfg, 21).unwrap();
    let json: Value =
        serde_json::from_str(&render_report(&meta, &fit, ReportFormat::Json).unwrap()).unwrap();
    let csv = render_report(&meta, &fit, ReportFormat::Csv).unwrap();
    let mut lines = csv.lines();
    let head = lines.next().unwrap();
    assert!(head.contains(&format!(
        "config_hash={}",
        json["meta"]["config_hash"].as_str().unwrap()
    )));
    assert!(head.contains("seed=21"));
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| cols.iter().position(|c| *c == name).unwrap();
    let res = &json["result"];
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let num = |name: &str| f[col(name)].parse::<f64>().unwrap();
        assert_eq!(num("lambda"), res["lambdas"][i].as_f64().unwrap());
        assert_eq!(num("var"), res["variances"][i].as_f64().unwrap());
        assert_eq!(
            num("var_stderr"),
            res["variance_stderr"][i].as_f64().unwrap()
        );
        assert_eq!(num("residual"), res["residuals"][i].as_f64().unwrap());
        assert_eq!(num("H_hat"), res["H_hat"].as_f64().unwrap());
        assert_eq!(f[col("n")], res["rects"][i][0].to_string());
    }
    assert_eq!(res["H_hat"].as_f64().unwrap(), fit.h_hat);
}

#[test]
fn monte_carlo_converges_to_exact() {
    let g = isotropic_coeffs(-0.3, 12, &IsotropicOptions::default()).unwrap();
    let exact = exact_variance(&g, 1.0, 16.0, (1.0, 1.0)).unwrap();
    let mut errs = Vec::new();
    let mut ses = Vec::new();
    for reps in [50, 200, 800, 3200] {
        let est = replicate_variance(
            &g,
            &InnovationSpec::gaussian(5),
            1.0,
            &[16.0],
            (1.0, 1.0),
            reps,
            &mc(4),
        )
        .unwrap()[0];
        assert!(((est.var - exact) / est.stderr).abs() < 4.0);
        errs.push((est.var - exact).abs());
        ses.push(est.stderr);
    }
    let shrinking = errs.windows(2).filter(|w| w[1] < w[0]).count();
    let se_shrinking = ses.windows(2).all(|w| w[1] < 0.7 * w[0]);
    assert!(shrinking >= 2 || errs[3] < errs[0] / 4.0, "errors {errs:?}");
    assert!(se_shrinking, "stderr {ses:?}");
}

#[test]
fn exact_variance_mode_recovers_separable_law() {
    let cfg = ScanConfig {
        model: ModelSpec::Separable {
            d1: -0.2,
            d2: 0.1,
            r1: 4096,
            r2: 4096,
        },
        use_exact_variance: true,
        lambda_grid: vec![64.0, 128.0, 256.0],
        ..heat_cfg()
    };
    let ex = Experiment::prepare(cfg).unwrap();
    for gamma in [0.5, 1.0] {
        let fit = ex.variance_scan(gamma, &mc(1)).unwrap();
        let want = (0.5 - 0.2) + gamma * (0.5 + 0.1);
        assert_eq!(fit.h_theory, Some(want));
        assert!((fit.h_hat - want).abs() < 0.05, "{gamma}: {}", fit.h_hat);
    }
}

#[test]
fn theory_overlay_is_continuous() {
    let g = synthetic_coeffs(1.6, 8.0, &AngularFunction::Constant(1.0), 16, 4).unwrap();
    let th = Theory::of(&g);
    let k = th.kink().unwrap();
    assert!((k - 0.8).abs() < 1e-12);
    let below = th.h_continuous(k - 1e-9).unwrap();
    let above = th.h_continuous(k + 1e-9).unwrap();
    assert!((below - above).abs() < 1e-6);
    // The balanced case itself is open.
    assert!(matches!(th.h(k), Err(latticescale::Error::OpenCase(_))));
}

#[test]
fn covariance_check_refuses_open_case() {
    let cfg = ScanConfig {
        model: ModelSpec::Synthetic {
            q1: 1.6,
            q2: 8.0,
            angular: AngularFunction::Constant(1.0),
            r1: 16,
            r2: 4,
        },
        reps: 100,
        ..heat_cfg()
    };
    let ex = Experiment::prepare(cfg).unwrap();
    let err = ex
        .covariance_check(0.8, &[((1.0, 1.0), (1.0, 1.0))], &mc(1))
        .unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn covariance_check_needs_enough_replicates() {
    let ex = Experiment::prepare(ScanConfig {
        model: ModelSpec::PairDifference,
        reps: 20,
        ..heat_cfg()
    })
    .unwrap();
    assert!(ex
        .covariance_check(1.0, &[((1.0, 1.0), (1.0, 1.0))], &mc(1))
        .is_err());
}

#[test]
fn invalid_scan_config_rejected() {
    let bad = ScanConfig {
        lambda_grid: vec![16.0],
        ..heat_cfg()
    };
    assert!(bad.validate().is_err());
    let bad = ScanConfig {
        point: (0.0, 1.0),
        ..heat_cfg()
    };
    assert!(bad.validate().is_err());
}
