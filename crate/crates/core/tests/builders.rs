mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use pdelay::block::NormOptions;
use pdelay::diagnostics::{kkt_residual, reference_solution, ProbeSteps, ReferenceMode};
use pdelay::experiments::builders::*;
use pdelay::experiments::config::*;
use pdelay::problem::{compute_constants, Coupling, ProblemSpec};
use pdelay::Error;

fn synthetic_logistic(m: usize, samples: usize, dim: usize, lambda: f64, seed: u64) -> ProblemSpec {
    build_logistic(&LogisticConfig {
        lambda,
        data: LogisticData::Synthetic { m, samples, dim, seed },
    })
    .unwrap()
    .spec
}

#[test]
fn logistic_is_totally_coupled() {
    let spec = synthetic_logistic(3, 10, 6, 0.1, 7);
    assert_eq!(spec.classify_coupling(), Coupling::Total);
    assert_eq!(spec.dims().primal(), &[2, 2, 2]);
    assert_eq!(spec.dims().dual(), &[10, 10, 10]);
    let k = compute_constants(&spec, NormOptions::default()).unwrap();
    assert!(k.mu_h.iter().all(|&v| v == 4.0));
    assert!(k.mu_g.iter().all(|&v| (v - 0.2).abs() <= 1e-15));
    assert_eq!(k.beta, 0.0);
}

/// Root of `2λw − Σ_t y_t a_t / (1 + exp(y_t a_t w))` by bisection.
fn logistic_root(rows: &[(f64, f64)], lambda: f64) -> f64 {
    let grad = |w: f64| 2.0 * lambda * w - rows.iter().map(|&(y, a)| y * a / (1.0 + (y * a * w).exp())).sum::<f64>();
    let (mut lo, mut hi) = (-100.0, 100.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if grad(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn one_dimensional_logistic_matches_bisection() {
    let rows = [(1.0, 0.8), (-1.0, 0.3), (1.0, -0.4), (1.0, 1.5), (-1.0, -0.9)];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.txt");
    let text: String = rows.iter().map(|(y, a)| format!("{y} {a}\n")).collect();
    std::fs::write(&path, text).unwrap();
    let lambda = 0.05;
    let spec = build_logistic(&LogisticConfig {
        lambda,
        data: LogisticData::File { path, m: 1 },
    })
    .unwrap()
    .spec;
    let z = reference_solution(&spec, ReferenceMode::SynchronousPolish).unwrap();
    let want = logistic_root(&rows, lambda);
    assert!((z.x.block(0)[0] - want).abs() <= 1e-8, "{} vs {want}", z.x.block(0)[0]);
}

#[test]
fn logistic_file_needs_a_row_per_agent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.txt");
    std::fs::write(&path, "1 0.5\n-1 0.2\n").unwrap();
    let cfg = LogisticConfig {
        lambda: 0.1,
        data: LogisticData::File { path, m: 3 },
    };
    assert!(matches!(build_logistic(&cfg), Err(Error::Config(_))));
}

fn elastic(l1: f64, l2: f64, scale: f64) -> ElasticNetConfig {
    ElasticNetConfig {
        dims: vec![2, 3, 2],
        samples: 6,
        l1,
        l2,
        seed: 3,
        data_scale: scale,
    }
}

#[test]
fn ridge_case_matches_normal_equations() {
    let l2 = 0.4;
    let spec = build_elastic_net(&elastic(0.0, l2, 1.0)).unwrap().spec;
    let a = spec.l().to_dense();
    // h_i = ½‖· − b_i‖², so prox_{h_i*}(0) with unit step is −b_i/2
    let b = DVector::from_iterator(
        a.nrows(),
        (0..spec.m()).flat_map(|i| (spec.h(i).prox_conjugate(1.0, &DVector::zeros(6)).unwrap() * -2.0).data.as_vec().clone()),
    );
    let n = a.ncols();
    let lhs = a.transpose() * &a + DMatrix::identity(n, n) * (2.0 * l2);
    let want = lhs.lu().solve(&(a.transpose() * b)).unwrap();
    for mode in [ReferenceMode::ExactQuadratic, ReferenceMode::SynchronousPolish] {
        let z = reference_solution(&spec, mode).unwrap();
        let err = (z.x.to_flat() - &want).amax();
        assert!(err <= 1e-8, "{mode:?}: {err:e}");
    }
}

#[test]
fn lasso_term_keeps_kkt() {
    let spec = build_elastic_net(&elastic(2.0, 0.2, 1.0)).unwrap().spec;
    assert!(matches!(
        reference_solution(&spec, ReferenceMode::ExactQuadratic),
        Err(Error::Inapplicable(_))
    ));
    let z = reference_solution(&spec, ReferenceMode::SynchronousPolish).unwrap();
    assert!(kkt_residual(&spec, &z, ProbeSteps::default()).unwrap().combined <= 1e-10);
    assert!(z.x.to_flat().iter().any(|&v| v == 0.0), "soft thresholding should zero some weights");
    assert!(z.x.to_flat().iter().any(|&v| v != 0.0));
}

#[test]
fn zero_data_gives_zero_solution() {
    let spec = build_elastic_net(&elastic(0.3, 0.5, 0.0)).unwrap().spec;
    let z = reference_solution(&spec, ReferenceMode::SynchronousPolish).unwrap();
    assert_eq!(z.x.max_abs(), 0.0);
    assert_eq!(z.u.max_abs(), 0.0);
}

#[test]
fn elastic_net_constants() {
    let spec = build_elastic_net(&elastic(0.3, 0.5, 1.0)).unwrap().spec;
    let k = compute_constants(&spec, NormOptions::default()).unwrap();
    assert!(k.mu_h.iter().all(|&v| v == 1.0));
    assert!(k.mu_g.iter().all(|&v| v == 1.0));
    assert_eq!(spec.classify_coupling(), Coupling::Total);
}

#[test]
fn elastic_net_needs_ridge_term() {
    assert!(matches!(build_elastic_net(&elastic(0.3, 0.0, 1.0)), Err(Error::Config(_))));
}

#[test]
fn formation_with_coincident_targets_reaches_consensus() {
    let cfg = FormationConfig {
        m: 2,
        targets: Some(vec![[0.0, 0.0], [0.0, 0.0]]),
        initial_positions: Some(vec![[1.0, -2.0], [1.0, -2.0]]),
        ..FormationConfig::default()
    };
    let spec = build_formation(&cfg).unwrap().spec;
    let z = reference_solution(&spec, ReferenceMode::SynchronousPolish).unwrap();
    assert!(spec.f().eval(&z.x) <= 1e-18, "{:e}", spec.f().eval(&z.x));
    assert!((z.x.block(0) - z.x.block(1)).amax() <= 1e-9);
}

#[test]
fn formation_validates_its_inputs() {
    let bad = [
        FormationConfig { m: 1, ..FormationConfig::default() },
        FormationConfig { horizon: 0, ..FormationConfig::default() },
        FormationConfig { lambda: vec![1.0, 2.0], ..FormationConfig::default() },
        FormationConfig { neighbors: Some(vec![vec![0]; 5]), ..FormationConfig::default() },
        FormationConfig { input_bound: -1.0, ..FormationConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(build_formation(&cfg), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn formation_constants_follow_the_weights() {
    let k1 = compute_constants(&build_formation(&FormationConfig::default()).unwrap().spec, NormOptions::default()).unwrap();
    let cfg = FormationConfig { lambda: vec![2.0], ..FormationConfig::default() };
    let k2 = compute_constants(&build_formation(&cfg).unwrap().spec, NormOptions::default()).unwrap();
    assert!((k2.beta - 2.0 * k1.beta).abs() <= 1e-9 * k1.beta);
    assert!(k1.mu_h.iter().all(|&v| v == 0.0));
}

#[test]
fn suite_without_coupling_term_is_separable() {
    let mut cfg = suite_config(Coupling::Partial, 5);
    cfg.f_weight = 0.0;
    let spec = build_quadratic_suite(&cfg).unwrap().spec;
    let k = compute_constants(&spec, NormOptions::default()).unwrap();
    assert_eq!(k.beta, 0.0);
    assert!(k.beta_bar.iter().all(|&b| b == 0.0));
}

#[test]
fn suite_coupling_kind_is_as_requested() {
    for seed in 0..5 {
        assert_eq!(suite(Coupling::Partial, seed).classify_coupling(), Coupling::Partial);
        assert_eq!(suite(Coupling::Total, seed).classify_coupling(), Coupling::Total);
        assert!(suite(Coupling::Partial, seed).l().is_block_diagonal());
    }
}

#[test]
fn suite_with_one_agent() {
    let mut cfg = suite_config(Coupling::Partial, 5);
    cfg.m = 1;
    let spec = build_quadratic_suite(&cfg).unwrap().spec;
    let z = exact(&spec);
    assert!(kkt_residual(&spec, &z, ProbeSteps::default()).unwrap().combined <= 1e-12);
}

#[test]
fn suite_rejects_bad_parameters() {
    let mut cfg = suite_config(Coupling::Total, 0);
    cfg.mu_g = 0.0;
    assert!(matches!(build_quadratic_suite(&cfg), Err(Error::Config(_))));
    let mut cfg = suite_config(Coupling::Total, 0);
    cfg.mu_h = 0.0;
    assert!(matches!(build_quadratic_suite(&cfg), Err(Error::Config(_))));
}

#[test]
fn custom_problem_matches_normal_equations() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("problem.txt");
    std::fs::write(
        &file,
        "primal 2 1\ndual 1 2\nL\n1 0.5 0\n0 2 -1\n0.3 0 1\ntargets\n1 -1 0.5\ng_linear\n0.2 0 -0.4\n",
    )
    .unwrap();
    let spec = build_custom(&CustomConfig { file, mu_g: 1.0, mu_h: 1.0, h: DualKind::Smooth }).unwrap().spec;
    assert_eq!(spec.classify_coupling(), Coupling::Total);
    let l = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.0, 2.0, -1.0, 0.3, 0.0, 1.0]);
    let t = DVector::from_vec(vec![1.0, -1.0, 0.5]);
    let c = DVector::from_vec(vec![0.2, 0.0, -0.4]);
    // min ½‖x‖² + cᵀx + ½‖Lx − t‖²
    let want = (DMatrix::identity(3, 3) + l.transpose() * &l).lu().solve(&(l.transpose() * t - c)).unwrap();
    let z = exact(&spec);
    assert!((z.x.to_flat() - want).amax() <= 1e-12);
}
