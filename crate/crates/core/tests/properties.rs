//! Structural properties over randomized designs and kernels.

mod common;

use common::*;
use nalgebra::{DMatrix, SymmetricEigen};
use nndp::kernel::{Direction, KernelParams, Smoothness};
use nndp::neighbors::{DegeneracyPolicy, Points};
use nndp::nndp::{conditional_law_fast, conditional_law_full, cov_grad_grad, cross_cov_value_grad, joint_covariance};
use nndp::nngp::c_tilde;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STRICT: DegeneracyPolicy = DegeneracyPolicy::Strict;

fn kernel_strategy() -> impl Strategy<Value = KernelParams> {
    (0.5f64..3.0, 2.0f64..8.0, prop::bool::ANY).prop_map(|(s2, phi, rbf)| {
        if rbf {
            KernelParams::new(s2, phi * 2.0, Smoothness::Rbf).unwrap()
        } else {
            KernelParams::new(s2, phi, Smoothness::Matern52).unwrap()
        }
    })
}

fn direction_strategy() -> impl Strategy<Value = Direction> {
    (0.0f64..std::f64::consts::TAU).prop_map(|a| Direction::new(vec![a.cos(), a.sin()]).unwrap())
}

fn reference_targets(m: &nndp::nngp::VecchiaModel, idx: &[usize]) -> Points {
    let so = ordered(m);
    Points::from_rows(&idx.iter().map(|&i| so.point(i).to_vec()).collect::<Vec<_>>()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn joint_covariance_is_psd(seed in 0u64..1000, kernel in kernel_strategy(), u in direction_strategy(), m in 3usize..8) {
        let s = random_points(40, seed, 0.03);
        let model = model(&s, m, kernel);
        let t = reference_targets(&model, &[0, 7, 13, 21, 39]);
        let dirs = vec![Direction::axis(2, 0), u];
        let j = joint_covariance(&model, &t, &dirs, STRICT).unwrap();
        let (nv, ng) = (t.len(), t.len() * dirs.len());
        let full = DMatrix::from_fn(nv + ng, nv + ng, |r, c| match (r < nv, c < nv) {
            (true, true) => j.values[(r, c)],
            (false, true) => j.cross[(r - nv, c)],
            (true, false) => j.cross[(c - nv, r)],
            (false, false) => j.gradients[(r - nv, c - nv)],
        });
        prop_assert!(max_abs_diff(&full, &full.transpose()) < 1e-10);
        let eig = SymmetricEigen::new(full);
        let top = eig.eigenvalues.max();
        prop_assert!(eig.eigenvalues.min() > -1e-8 * top, "min eigenvalue {} (max {top})", eig.eigenvalues.min());
    }

    #[test]
    fn ctilde_is_symmetric_and_inverts_precision(seed in 0u64..1000, kernel in kernel_strategy(), m in 2usize..8) {
        let s = random_points(30, seed, 0.03);
        let model = model(&s, m, kernel);
        let so = ordered(&model);
        for (a, b) in [(0usize, 5usize), (3, 29), (17, 11)] {
            let ab = c_tilde(so.point(a), so.point(b), &model, STRICT).unwrap();
            let ba = c_tilde(so.point(b), so.point(a), &model, STRICT).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12 * kernel.sigma2);
        }
        let x: Vec<f64> = (0..so.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let back = model.precision_apply(&model.ctilde_apply(&x));
        for (p, q) in back.iter().zip(&x) {
            prop_assert!((p - q).abs() < 1e-7, "{p} vs {q}");
        }
    }

    #[test]
    fn fast_path_matches_full_path(seed in 0u64..1000, kernel in kernel_strategy(), u in direction_strategy(), m in 3usize..8) {
        let s = random_points(50, seed, 0.02);
        let model = model(&s, m, kernel);
        let mut rows: Vec<Vec<f64>> = (0..3).map(|i| ordered(&model).point(i * 11).to_vec()).collect();
        rows.extend(random_points(3, seed + 7, 0.0).iter().map(|p| p.to_vec()));
        let t = Points::from_rows(&rows).unwrap();
        let dirs = vec![Direction::axis(2, 1), u];
        let w = model.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        let full = conditional_law_full(&model, &w, &t, &dirs, STRICT).unwrap();
        let fast = conditional_law_fast(&model, &w, &t, &dirs, STRICT).unwrap();
        let scale = fast.mean.iter().fold(1.0f64, |a, b| a.max(b.abs()));
        for (a, b) in full.mean.iter().zip(&fast.mean) {
            prop_assert!((a - b).abs() < 1e-6 * scale, "mean {a} vs {b}");
        }
        let cscale = fast.cov.diagonal().max().max(1.0);
        prop_assert!(max_abs_diff(&full.cov, &fast.cov) < 1e-6 * cscale);
    }

    #[test]
    fn difference_quotient_variance_matches_gradient_variance(seed in 0u64..1000, kernel in kernel_strategy(), u in direction_strategy(), m in 2usize..12, i in 0usize..30) {
        let s = random_points(30, seed, 0.03);
        let model = model(&s, m, kernel);
        let so = ordered(&model);
        let p = so.point(i);
        let h = 1e-4 * model.reference().min_separation();
        let q: Vec<f64> = p.iter().zip(u.as_slice()).map(|(a, b)| a + h * b).collect();
        let var = (c_tilde(&q, &q, &model, STRICT).unwrap() - 2.0 * c_tilde(&q, p, &model, STRICT).unwrap()
            + c_tilde(p, p, &model, STRICT).unwrap()) / (h * h);
        let target = cov_grad_grad(p, p, &u, &model, STRICT).unwrap();
        prop_assert!((var - target).abs() < 1e-2 * target, "difference quotient {var} vs {target}");
    }

    #[test]
    fn covariances_are_continuous_off_the_degenerate_sets(seed in 0u64..1000, kernel in kernel_strategy(), u in direction_strategy(), m in 3usize..8) {
        let s = random_points(40, seed, 0.03);
        let model = model(&s, m, kernel);
        let iota = model.reference().min_separation();
        let probes = random_points(2, seed + 1, 0.05);
        let (v1, v2) = (probes.point(0), probes.point(1));
        let shift: Vec<f64> = u.as_slice().to_vec();
        let funcs: [&dyn Fn(&[f64]) -> f64; 3] = [
            &|a| c_tilde(a, v2, &model, STRICT).unwrap(),
            &|a| cross_cov_value_grad(a, v2, &u, &model, STRICT).unwrap(),
            &|a| cov_grad_grad(a, v2, &u, &model, STRICT).unwrap(),
        ];
        for f in funcs {
            let base = f(v1);
            let gaps: Vec<f64> = [1e-3, 1e-4, 1e-5]
                .iter()
                .map(|d| {
                    let moved: Vec<f64> = v1.iter().zip(&shift).map(|(x, e)| x + d * iota * e).collect();
                    (f(&moved) - base).abs()
                })
                .collect();
            prop_assert!(gaps[1] <= 1.1 * gaps[0] && gaps[2] <= 1.1 * gaps[1], "gaps {gaps:?}");
            prop_assert!(gaps[2] <= 1e-3 * base.abs().max(1.0), "gaps {gaps:?}");
        }
    }

    #[test]
    fn conditional_means_are_linear_in_direction(seed in 0u64..1000, kernel in kernel_strategy(), angle in 0.0f64..std::f64::consts::TAU) {
        let s = random_points(50, seed, 0.02);
        let model = model(&s, 6, kernel);
        let mut rows: Vec<Vec<f64>> = (0..2).map(|i| ordered(&model).point(i * 17).to_vec()).collect();
        rows.extend(random_points(2, seed + 3, 0.0).iter().map(|p| p.to_vec()));
        let t = Points::from_rows(&rows).unwrap();
        let (a, b) = (angle.cos(), angle.sin());
        let dirs = vec![Direction::axis(2, 0), Direction::axis(2, 1), Direction::new(vec![a, b]).unwrap()];
        let w = model.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        let law = conditional_law_fast(&model, &w, &t, &dirs, STRICT).unwrap();
        for i in 0..t.len() {
            let (m1, m2, mu) = (law.mean[3 * i], law.mean[3 * i + 1], law.mean[3 * i + 2]);
            prop_assert!((mu - (a * m1 + b * m2)).abs() <= 1e-9 * m1.abs().max(m2.abs()).max(1.0));
        }
    }

    #[test]
    fn conditional_covariance_is_psd(seed in 0u64..1000, kernel in kernel_strategy(), u in direction_strategy(), m in 2usize..10) {
        let s = random_points(40, seed, 0.03);
        let model = model(&s, m, kernel);
        let mut rows: Vec<Vec<f64>> = (0..3).map(|i| ordered(&model).point(i * 13).to_vec()).collect();
        rows.extend(random_points(3, seed + 5, 0.0).iter().map(|p| p.to_vec()));
        let t = Points::from_rows(&rows).unwrap();
        let dirs = vec![Direction::axis(2, 0), u];
        let w = model.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        let law = conditional_law_full(&model, &w, &t, &dirs, STRICT).unwrap();
        let dim = law.cov.nrows() as f64;
        let eig = SymmetricEigen::new(law.cov.clone());
        prop_assert!(eig.eigenvalues.min() >= -1e-8 * law.cov.trace() / dim, "min eigenvalue {}", eig.eigenvalues.min());
    }
}
