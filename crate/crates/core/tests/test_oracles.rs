mod common;

use common::*;
use kcm::cm_tests::{
    decide, empirical_quantile, icm_stat, icm_test, kcm_bootstrap_draw, kcm_bootstrap_statistic,
    kcm_test, kcm_test_from_h, multinomial_weights, rademacher_weights, run_test, smooth_bandwidth,
    smooth_stat, smooth_test, BootstrapOptions, TestKind,
};
use kcm::kernels::{KernelConfig, KernelSpec};
use kcm::mmr::{h_matrix, HMatrix};
use kcm::models::{Dataset, ResidualModel};
use kcm::rng::stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn random_h(n: usize, seed: u64) -> HMatrix {
    let a = random_matrix(n, n, seed);
    HMatrix::from_matrix(&a * a.transpose()).unwrap()
}

fn naive_draw(h: &HMatrix, w: &[u32]) -> f64 {
    let n = h.n();
    let rho: Vec<f64> = w.iter().map(|&wi| (wi as f64 - 1.0) / n as f64).collect();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += rho[i] * rho[j] * h.matrix()[(i, j)];
            }
        }
    }
    n as f64 * s
}

#[test]
fn bootstrap_draw_matches_double_loop() {
    let h = random_h(5, 21);
    let rng = stream(5, 0);
    let w = multinomial_weights(5, &mut rng.clone());
    assert_eq!(w.iter().sum::<u32>(), 5);
    let got = kcm_bootstrap_draw(&h, &mut rng.clone()).unwrap();
    assert!(close(got, naive_draw(&h, &w), 1e-12));
    assert!(close(
        kcm_bootstrap_statistic(&h, &w).unwrap(),
        naive_draw(&h, &w),
        1e-12
    ));
}

#[test]
fn bootstrap_draw_trivial_cases() {
    let h = random_h(6, 22);
    assert_eq!(kcm_bootstrap_statistic(&h, &[1; 6]).unwrap(), 0.0);
    let zero = HMatrix::from_matrix(DMatrix::zeros(6, 6)).unwrap();
    assert_eq!(
        kcm_bootstrap_statistic(&zero, &[3, 0, 0, 2, 1, 0]).unwrap(),
        0.0
    );
}

#[test]
fn kcm_draws_follow_per_draw_streams() {
    let h = random_h(12, 23);
    let opts = BootstrapOptions::new(50, 0.05, 99).unwrap();
    let out = kcm_test_from_h(&h, &opts).unwrap();
    assert_eq!(out.bootstrap_draws.len(), 50);
    for (t, &d) in out.bootstrap_draws.iter().enumerate() {
        let w = multinomial_weights(12, &mut stream(99, t as u64));
        assert!(close(d, naive_draw(&h, &w), 1e-12), "draw {t}");
    }
    let nu = 12.0 * naive_u(&rows(h.matrix()));
    assert!(close(out.statistic, nu, 1e-12));
}

#[test]
fn icm_and_smooth_match_naive_on_random_instances() {
    let mut rng = stream(31, 0);
    for inst in 0..100 {
        let n = rng.gen_range(2..=20);
        let d = rng.gen_range(1..=3);
        let data = random_reg(n, d, 3000 + inst);
        let model = ResidualModel::regression(DVector::from_vec(random_vec(d, &mut rng))).unwrap();
        let psi = rows(&model.residuals(&data).unwrap());
        let x = rows(&data.x());
        let t = icm_stat(&model, &data).unwrap();
        assert!(close(t, naive_icm(&psi, &x), 1e-12), "icm instance {inst}");
        let h = rng.gen_range(0.2..2.0);
        let s = smooth_stat(&model, &data, h).unwrap();
        assert!(
            close(s, naive_smooth(&psi, &x, h), 1e-12),
            "smooth instance {inst}"
        );
    }
}

#[test]
fn icm_ties_count_and_multivariate_residuals() {
    // x has a repeated value, ψ has two components
    let z = DMatrix::from_row_slice(
        3,
        4,
        &[1.0, 0.5, 0.0, 0.0, 2.0, -1.0, 1.0, 0.0, -0.5, 0.3, 1.0, 0.0],
    );
    let data = Dataset::new(z, vec![2]).unwrap();
    let model = ResidualModel::simeq(DVector::from_vec(vec![0.0, 0.0, 0.0, 0.0])).unwrap();
    let psi = rows(&model.residuals(&data).unwrap());
    let got = icm_stat(&model, &data).unwrap();
    assert!(close(got, naive_icm(&psi, &rows(&data.x())), 1e-14));
}

#[test]
fn wild_bootstrap_draws_recompute_statistic() {
    let data = random_reg(15, 2, 41);
    let model = ResidualModel::regression(DVector::from_vec(vec![0.8, 1.3])).unwrap();
    let psi = rows(&model.residuals(&data).unwrap());
    let x = rows(&data.x());
    let opts = BootstrapOptions::new(20, 0.1, 7).unwrap();
    let icm = icm_test(&model, &data, &opts).unwrap();
    let smooth = smooth_test(&model, &data, &opts).unwrap();
    let h = smooth_bandwidth(15);
    for t in 0..20 {
        let w = rademacher_weights(15, &mut stream(7, t as u64));
        let weighted: Vec<Vec<f64>> = psi.iter().zip(&w).map(|(p, wi)| vec![p[0] * wi]).collect();
        assert!(
            close(icm.bootstrap_draws[t], naive_icm(&weighted, &x), 1e-12),
            "icm draw {t}"
        );
        assert!(
            close(
                smooth.bootstrap_draws[t],
                naive_smooth(&weighted, &x, h),
                1e-12
            ),
            "smooth draw {t}"
        );
    }
}

#[test]
fn decision_rule_and_p_value() {
    let opts = BootstrapOptions::new(20, 0.05, 0).unwrap();
    let draws: Vec<f64> = (1..=20).map(f64::from).collect();
    // rank ⌈0.95·20⌉ = 19
    assert_eq!(empirical_quantile(&draws, 0.05), 19.0);
    let at = decide(19.0, draws.clone(), &opts);
    assert!(!at.reject);
    assert_eq!(at.p_value, 3.0 / 21.0);
    let above = decide(19.5, draws.clone(), &opts);
    assert!(above.reject);
    assert_eq!(above.p_value, 2.0 / 21.0);
    let top = decide(100.0, draws, &opts);
    assert_eq!(top.p_value, 1.0 / 21.0);
}

#[test]
fn reject_agrees_with_quantile_rule() {
    let mut rng = stream(51, 0);
    for inst in 0..20 {
        let data = random_reg(30, 2, 6000 + inst);
        let theta = DVector::from_vec(vec![1.0 + 0.3 * rng.gen::<f64>(), 1.0]);
        let model = ResidualModel::regression(theta).unwrap();
        let opts = BootstrapOptions::new(99, 0.1, inst).unwrap();
        for kind in TestKind::all() {
            let out = run_test(kind, &model, &data, &KernelConfig::default(), &opts).unwrap();
            assert_eq!(out.reject, out.critical_value < out.statistic);
            assert_eq!(
                out.critical_value,
                empirical_quantile(&out.bootstrap_draws, 0.1)
            );
            assert!(out.p_value > 0.0 && out.p_value <= 1.0);
        }
    }
}

#[test]
fn zero_residuals_never_reject() {
    let x = random_matrix(25, 2, 61);
    let z = DMatrix::from_fn(25, 3, |i, j| {
        if j == 0 {
            x[(i, 0)] + x[(i, 1)]
        } else {
            x[(i, j - 1)]
        }
    });
    let data = Dataset::new(z, vec![1, 2]).unwrap();
    let model = ResidualModel::regression(DVector::from_vec(vec![1.0, 1.0])).unwrap();
    let opts = BootstrapOptions::new(100, 0.05, 3).unwrap();
    for kind in TestKind::all() {
        let out = run_test(kind, &model, &data, &KernelConfig::default(), &opts).unwrap();
        assert!(out.statistic.abs() < 1e-25, "{kind:?}");
        assert!(!out.reject || out.critical_value < out.statistic);
        assert!(out.bootstrap_draws.iter().all(|d| d.abs() < 1e-25));
    }
}

#[test]
fn statistics_are_permutation_invariant() {
    let data = random_reg(40, 3, 71);
    let model = ResidualModel::regression(DVector::from_vec(vec![1.1, 0.9, 1.0])).unwrap();
    let mut rng = stream(71, 9);
    let mut perm: Vec<usize> = (0..40).collect();
    for i in (1..40).rev() {
        perm.swap(i, rng.gen_range(0..=i));
    }
    let permuted = data.permute_rows(&perm).unwrap();
    let opts = BootstrapOptions::new(10, 0.05, 1).unwrap();
    for kind in TestKind::all() {
        let a = run_test(kind, &model, &data, &KernelConfig::default(), &opts)
            .unwrap()
            .statistic;
        let b = run_test(kind, &model, &permuted, &KernelConfig::default(), &opts)
            .unwrap()
            .statistic;
        assert!(close(a, b, 1e-12), "{kind:?}: {a} vs {b}");
    }
}

#[test]
fn fixed_seed_is_deterministic() {
    let data = random_reg(50, 2, 81);
    let model = ResidualModel::regression(DVector::from_vec(vec![1.2, 1.0])).unwrap();
    let opts = BootstrapOptions::new(200, 0.05, 12345).unwrap();
    for kind in TestKind::all() {
        let a = run_test(kind, &model, &data, &KernelConfig::default(), &opts).unwrap();
        let b = run_test(kind, &model, &data, &KernelConfig::default(), &opts).unwrap();
        assert_eq!(a, b);
    }
    let other = BootstrapOptions::new(200, 0.05, 54321).unwrap();
    let a = kcm_test(&model, &data, &KernelConfig::default(), &opts).unwrap();
    let b = kcm_test(&model, &data, &KernelConfig::default(), &other).unwrap();
    assert_eq!(a.statistic, b.statistic);
    assert_ne!(a.bootstrap_draws, b.bootstrap_draws);
}

#[test]
fn kcm_statistic_is_n_times_u_statistic() {
    let data = random_reg(30, 2, 91);
    let model = ResidualModel::regression(DVector::from_vec(vec![0.7, 1.4])).unwrap();
    let kernel = KernelConfig::from_json(br#"{"family":"laplacian","bandwidth":1.5}"#).unwrap();
    let opts = BootstrapOptions::new(10, 0.05, 0).unwrap();
    let out = kcm_test(&model, &data, &kernel, &opts).unwrap();
    let h = h_matrix(&model, &data, &KernelSpec::laplacian(1.5).unwrap()).unwrap();
    assert!(close(
        out.statistic,
        30.0 * naive_u(&rows(h.matrix())),
        1e-12
    ));
}

#[test]
fn invalid_options_are_rejected() {
    assert!(BootstrapOptions::new(0, 0.05, 0).is_err());
    assert!(BootstrapOptions::new(10, 0.0, 0).is_err());
    assert!(BootstrapOptions::new(10, 1.0, 0).is_err());
    let data = random_reg(1, 1, 0);
    let model = ResidualModel::regression(DVector::from_element(1, 1.0)).unwrap();
    let opts = BootstrapOptions::new(10, 0.05, 0).unwrap();
    assert!(kcm_test(&model, &data, &KernelConfig::default(), &opts).is_err());
    assert!(smooth_stat(&model, &data, 1.0).is_err());
    let psi = rows(&model.residuals(&data).unwrap());
    assert_eq!(icm_stat(&model, &data).unwrap(), psi[0][0] * psi[0][0]);
}
