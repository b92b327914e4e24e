//! Dense Gaussian-process oracle shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use nndp::kernel::{Direction, KernelParams};
use nndp::neighbors::{build_graph, order_reference, OrderingScheme, Points, StencilRule};
use nndp::nngp::{fit_factors, VecchiaModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `k` uniform points in the unit square with pairwise separation at least `min_sep`.
pub fn random_points(k: usize, seed: u64, min_sep: f64) -> Points {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let p = vec![rng.random::<f64>(), rng.random::<f64>()];
        if rows.iter().all(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() >= min_sep) {
            rows.push(p);
        }
    }
    Points::from_rows(&rows).unwrap()
}

/// Model on `points` with `m` nearest neighbors.
pub fn model(points: &Points, m: usize, kernel: KernelParams) -> VecchiaModel {
    let r = Arc::new(order_reference(points, OrderingScheme::CoordinateSum).unwrap());
    let g = Arc::new(build_graph(&r, m, StencilRule::Nearest).unwrap());
    fit_factors(&r, &g, kernel).unwrap()
}

pub fn cov_matrix(kernel: &KernelParams, a: &Points, b: &Points) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| kernel.cov(a.point(i), b.point(j)).unwrap())
}

/// `Cov(D w(t), w(x))`, rows target-major.
pub fn dcov_matrix(kernel: &KernelParams, t: &Points, x: &Points, dirs: &[Direction]) -> DMatrix<f64> {
    let nd = dirs.len();
    DMatrix::from_fn(t.len() * nd, x.len(), |r, j| kernel.d_cov(&dirs[r % nd], t.point(r / nd), x.point(j)).unwrap())
}

pub fn d2cov_matrix(kernel: &KernelParams, t: &Points, dirs: &[Direction]) -> DMatrix<f64> {
    let nd = dirs.len();
    let n = t.len() * nd;
    DMatrix::from_fn(n, n, |r, c| kernel.d2_cov_pair(&dirs[r % nd], &dirs[c % nd], t.point(r / nd), t.point(c / nd)).unwrap())
}

/// Dense conditional law of gradients at `t` given `w` at `s`.
pub fn dense_conditional(kernel: &KernelParams, s: &Points, w: &[f64], t: &Points, dirs: &[Direction]) -> (Vec<f64>, DMatrix<f64>) {
    let c = cov_matrix(kernel, s, s);
    let inv = c.try_inverse().expect("dense covariance invertible");
    let k = dcov_matrix(kernel, t, s, dirs);
    let mean = &k * &inv * DVector::from_column_slice(w);
    let cov = d2cov_matrix(kernel, t, dirs) - &k * &inv * k.transpose();
    (mean.as_slice().to_vec(), cov)
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}

/// Points of `model`'s reference set in its internal order.
pub fn ordered(model: &VecchiaModel) -> Points {
    model.reference().points().clone()
}
