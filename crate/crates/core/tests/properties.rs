use proptest::prelude::*;

use widthcert::activation::softplus;
use widthcert::gram::{empirical_gram_khatri_rao, empirical_gram_matrix, hinfty_quadrature};
use widthcert::harness::{gen_dataset, DatasetKind};
use widthcert::linalg::{check_frobenius_entrywise, check_weyl_l2, khatri_rao, symmetric_eigen, Matrix};
use widthcert::model::{self, GradientMode};
use widthcert::rng;
use widthcert::theory::{m_threshold, theorem_report};
use widthcert::Dataset;

fn sphere(n: usize, d: usize, seed: u64) -> Dataset {
    gen_dataset(&DatasetKind::SphereRandom, n, d, 1.0, seed).unwrap()
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut r = rng::seeded(seed);
    Matrix::from_vec(rows, cols, rng::gaussian_vec(&mut r, rows * cols)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn empirical_gram_is_symmetric_psd(m in 1usize..40, d in 2usize..6, n in 1usize..7, seed in any::<u64>()) {
        let data = sphere(n, d, seed);
        let s = model::init_state(m, d, seed ^ 1).unwrap();
        let c = empirical_gram_matrix(&s, &softplus(), &data).unwrap();
        prop_assert_eq!(c.max_asymmetry(), 0.0);
        let spec = symmetric_eigen(&c).unwrap();
        prop_assert!(spec.lambda_min() >= -1e-12);
        prop_assert!((spec.eigenvalues.iter().sum::<f64>() - c.trace()).abs() < 1e-10);
    }

    #[test]
    fn khatri_rao_gram_matches_direct(m in 1usize..20, d in 2usize..6, n in 1usize..7, seed in any::<u64>()) {
        let data = sphere(n, d, seed);
        let s = model::init_state(m, d, seed ^ 2).unwrap();
        let a = empirical_gram_matrix(&s, &softplus(), &data).unwrap();
        let b = empirical_gram_khatri_rao(&s, &softplus(), &data).unwrap();
        prop_assert!(a.sub(&b).unwrap().max_abs() <= 1e-12);
    }

    #[test]
    fn gradient_paths_agree_and_are_linear(m in 1usize..16, d in 1usize..8, n in 1usize..8, seed in any::<u64>(), t in -3.0f64..3.0) {
        let mut r = rng::seeded(seed);
        let x = Matrix::from_fn(n, d, |i, j| if j == i % d { 0.2 + 0.1 * (i / d) as f64 } else { 0.0 });
        let data = Dataset::new(x, vec![0.0; n], 1.0).unwrap();
        let s = model::init_state(m, d, seed ^ 3).unwrap();
        let e = rng::gaussian_vec(&mut r, n);
        let direct = model::gradient_for_residual(&s, &softplus(), &data, &e, GradientMode::Direct).unwrap();
        let kr = model::gradient_for_residual(&s, &softplus(), &data, &e, GradientMode::KhatriRao).unwrap();
        prop_assert!(direct.sub(&kr).unwrap().max_abs() <= 1e-12);
        let te: Vec<f64> = e.iter().map(|v| t * v).collect();
        let scaled = model::gradient_for_residual(&s, &softplus(), &data, &te, GradientMode::Direct).unwrap();
        prop_assert!(scaled.sub(&direct.scale(t)).unwrap().max_abs() <= 1e-12 * (1.0 + direct.max_abs()));
    }

    #[test]
    fn khatri_rao_column_layout(ra in 1usize..5, rb in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        let a = gaussian_matrix(ra, cols, seed);
        let b = gaussian_matrix(rb, cols, seed ^ 4);
        let k = khatri_rao(&a, &b).unwrap();
        prop_assert_eq!(k.shape(), (ra * rb, cols));
        for i in 0..ra {
            for j in 0..rb {
                for c in 0..cols {
                    prop_assert_eq!(k[(i * rb + j, c)], a[(i, c)] * b[(j, c)]);
                }
            }
        }
    }

    #[test]
    fn eigen_reconstruction(n in 1usize..12, seed in any::<u64>()) {
        let b = gaussian_matrix(n, n, seed);
        let a = b.add(&b.transpose()).unwrap().scale(0.5);
        let spec = symmetric_eigen(&a).unwrap();
        let back = spec.apply_function(|l| l);
        prop_assert!(back.sub(&a).unwrap().max_abs() <= 1e-10 * (1.0 + a.max_abs()));
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn perturbation_lemmas_hold(n in 2usize..8, scale in -6.0f64..0.0, seed in any::<u64>()) {
        let g = gaussian_matrix(2 * n, n, seed);
        let e = gaussian_matrix(2 * n, n, seed ^ 5);
        let a = g.gram();
        let b = g.add(&e.scale(10f64.powf(scale))).unwrap().gram();
        prop_assert!(check_weyl_l2(&a, &b).unwrap());
        let eps = (n * n) as f64 * a.sub(&b).unwrap().max_abs() * (1.0 + 1e-12);
        prop_assert!(check_frobenius_entrywise(&a, &b, eps).unwrap());
    }

    #[test]
    fn threshold_monotone(n in 1usize..50, delta in 1e-4f64..0.5, lambda0 in 1e-3f64..1.0, bump in 1.0f64..3.0) {
        let base = m_threshold(n, delta, 1.0, 0.25, lambda0).unwrap();
        prop_assert!(m_threshold(n + 1, delta, 1.0, 0.25, lambda0).unwrap() >= base);
        prop_assert!(m_threshold(n, (delta * bump).min(0.99), 1.0, 0.25, lambda0).unwrap() <= base);
        prop_assert!(m_threshold(n, delta, 1.0, 0.25, lambda0 * bump).unwrap() <= base);
    }

    #[test]
    fn theorem_identities(n in 1usize..30, delta in 1e-4f64..0.5, kappa in 0.01f64..5.0, lambda0 in 1e-3f64..1.0) {
        let act = softplus();
        let r = theorem_report(n, delta, &act, kappa, lambda0).unwrap();
        prop_assert_eq!(r.d_constant, (kappa * kappa + act.c3).sqrt());
        prop_assert_eq!(r.delta_prime, n as f64 * delta + r.d_constant / (4.0 * act.c1 * act.c2 * (2.0 * n as f64 / delta).ln()));
        prop_assert_eq!(r.prob_lower_bound, 1.0 - r.delta_prime);
        prop_assert_eq!(r.valid, r.delta_prime < 1.0);
    }

    #[test]
    fn hinfty_is_psd(n in 1usize..7, d in 2usize..6, seed in any::<u64>()) {
        let data = sphere(n, d, seed);
        let h = hinfty_quadrature(&data, &softplus(), 40).unwrap();
        prop_assert!(h.lambda_min > 0.0);
        prop_assert!(h.matrix.max_asymmetry() == 0.0);
    }

    #[test]
    fn datasets_outside_unit_ball_rejected(scale in 1.001f64..3.0, d in 1usize..5) {
        let mut x = Matrix::zeros(1, d);
        x[(0, 0)] = scale;
        let err = Dataset::new(x, vec![0.0], 1.0).unwrap_err().to_string();
        prop_assert!(err.contains("unit ball"));
    }

    #[test]
    fn single_row_lipschitz_ratio(m in 1usize..64, row_pick in any::<usize>(), step in -4.0f64..0.5, seed in any::<u64>()) {
        let act = softplus();
        let data = gen_dataset(&DatasetKind::Orthonormal { rotate: false }, 4, 4, 1.0, 1).unwrap();
        let s = model::init_state(m, 4, seed).unwrap();
        let mut r = rng::seeded(seed ^ 6);
        let dir = rng::gaussian_vec(&mut r, 4);
        let row = row_pick % m;
        let mut w = s.weights().clone();
        let h = 10f64.powf(step);
        for (v, u) in w.row_mut(row).iter_mut().zip(&dir) {
            *v += h * u;
        }
        let dw = w.sub(s.weights()).unwrap().frobenius_norm();
        prop_assume!(dw > 0.0);
        let c0 = empirical_gram_matrix(&s, &act, &data).unwrap();
        let c1 = empirical_gram_matrix(&s.with_weights(w).unwrap(), &act, &data).unwrap();
        let ratio = c1.sub(&c0).unwrap().max_abs() * (m as f64).sqrt() / (4.0 * act.c1 * act.c2 * dw);
        prop_assert!(ratio <= 0.5 + 1e-12);
    }
}
