//! Vecchia factors of the nearest-neighbor Gaussian process.
//!
//! For each ordered site `i` with neighbor set `N(s_i)`:
//!
//! ```text
//! b_i = C_{N(s_i)}^{-1} C_{N(s_i), s_i}
//! f_i = C(s_i, s_i) - b_i' C_{N(s_i), s_i}
//! ```
//!
//! The implied covariance `C~_S` has precision `(I - B)' F^{-1} (I - B)`.
//! Entries of `C~_S` are evaluated lazily by [`CTilde`], which follows the DAG:
//! `C~(i, j) = sum_l b_il C~(l, j)` for `j < i` and
//! `C~(i, i) = sum_l b_il C~(i, l) + f_i`.
//! Whole columns are cheaper through two sparse triangular solves
//! ([`VecchiaModel::ctilde_apply`]).

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{NndpError, Result};
use crate::kernel::KernelParams;
use crate::linalg::{cholesky_with_jitter, JitteredCholesky};
use crate::neighbors::{DegeneracyPolicy, Location, NeighborGraph, ReferenceSet};

/// Per-site regression weights and residual variances.
#[derive(Debug, Clone)]
pub struct VecchiaModel {
    reference: Arc<ReferenceSet>,
    graph: Arc<NeighborGraph>,
    kernel: KernelParams,
    weights: Vec<f64>,
    fvar: Vec<f64>,
    max_jitter: f64,
}

/// Kriging weights of an off-reference location on `N(v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NewSite {
    pub point: Vec<f64>,
    pub closest: usize,
    pub set: Vec<usize>,
    pub weights: Vec<f64>,
    /// `f_v`, the parent-kernel kriging variance.
    pub fvar: f64,
}

/// A location resolved against the reference set.
#[derive(Debug, Clone, PartialEq)]
pub enum Site {
    Reference(usize),
    New(NewSite),
}

impl Site {
    pub fn reference_index(&self) -> Option<usize> {
        match self {
            Site::Reference(i) => Some(*i),
            Site::New(_) => None,
        }
    }
}

/// Dense covariance matrix among reference sites `idx`.
pub(crate) fn gram(kernel: &KernelParams, reference: &ReferenceSet, idx: &[usize]) -> DMatrix<f64> {
    let n = idx.len();
    let mut c = DMatrix::zeros(n, n);
    for a in 0..n {
        c[(a, a)] = kernel.sigma2;
        for b in 0..a {
            let v = kernel.cov_unchecked(reference.point(idx[a]), reference.point(idx[b]));
            c[(a, b)] = v;
            c[(b, a)] = v;
        }
    }
    c
}

pub(crate) fn factor_neighbors(
    kernel: &KernelParams,
    reference: &ReferenceSet,
    idx: &[usize],
    site: usize,
) -> Result<JitteredCholesky> {
    cholesky_with_jitter(&gram(kernel, reference, idx), kernel.sigma2)
        .map_err(|jitter| NndpError::SingularNeighborSystem { site, jitter })
}

/// Kriging weights of `v` on `N0(s_closest)` under `kernel`.
pub(crate) fn krige_weights(
    kernel: &KernelParams,
    reference: &ReferenceSet,
    graph: &NeighborGraph,
    v: &[f64],
    closest: usize,
) -> Result<NewSite> {
    let set = graph.stencil(closest).to_vec();
    let chol = factor_neighbors(kernel, reference, &set, closest)?;
    let c = DVector::from_iterator(set.len(), set.iter().map(|&j| kernel.cov_unchecked(v, reference.point(j))));
    let b = chol.solve(&c);
    let fvar = kernel.sigma2 - b.dot(&c);
    Ok(NewSite { point: v.to_vec(), closest, set, weights: b.as_slice().to_vec(), fvar })
}

/// Computes `b_i` and `f_i` for every site, in parallel.
pub fn fit_factors(reference: &Arc<ReferenceSet>, graph: &Arc<NeighborGraph>, kernel: KernelParams) -> Result<VecchiaModel> {
    if graph.len() != reference.len() {
        return Err(NndpError::LengthMismatch { what: "neighbor graph", expected: reference.len(), found: graph.len() });
    }
    let per_site: Vec<(Vec<f64>, f64, f64)> = (0..reference.len())
        .into_par_iter()
        .map(|i| {
            let nb = graph.neighbors(i);
            if nb.is_empty() {
                return Ok((Vec::new(), kernel.sigma2, 0.0));
            }
            let chol = factor_neighbors(&kernel, reference, nb, i)?;
            let c = DVector::from_iterator(nb.len(), nb.iter().map(|&j| kernel.cov_unchecked(reference.point(i), reference.point(j))));
            let b = chol.solve(&c);
            let f = kernel.sigma2 - b.dot(&c);
            if !(f > 0.0) {
                return Err(NndpError::SingularNeighborSystem { site: i, jitter: chol.jitter });
            }
            Ok((b.as_slice().to_vec(), f, chol.jitter))
        })
        .collect::<Result<_>>()?;
    let mut weights = Vec::with_capacity(graph.neighbor_lists().total());
    let mut fvar = Vec::with_capacity(reference.len());
    let mut max_jitter: f64 = 0.0;
    for (b, f, j) in per_site {
        weights.extend(b);
        fvar.push(f);
        max_jitter = max_jitter.max(j);
    }
    Ok(VecchiaModel { reference: Arc::clone(reference), graph: Arc::clone(graph), kernel, weights, fvar, max_jitter })
}

impl VecchiaModel {
    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn reference(&self) -> &Arc<ReferenceSet> {
        &self.reference
    }

    pub fn graph(&self) -> &Arc<NeighborGraph> {
        &self.graph
    }

    pub fn len(&self) -> usize {
        self.fvar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fvar.is_empty()
    }

    /// `b_i`, aligned with `graph.neighbors(i)`.
    pub fn weights(&self, i: usize) -> &[f64] {
        let nl = self.graph.neighbor_lists();
        &self.weights[nl.offset(i)..nl.offset(i + 1)]
    }

    pub fn residual_variance(&self, i: usize) -> f64 {
        self.fvar[i]
    }

    pub fn residual_variances(&self) -> &[f64] {
        &self.fvar
    }

    /// Smallest `f_i / sigma2` over the sites with neighbors.
    pub fn min_relative_residual(&self) -> f64 {
        self.graph_sites_with_neighbors().map(|i| self.fvar[i] / self.kernel.sigma2).fold(f64::INFINITY, f64::min)
    }

    fn graph_sites_with_neighbors(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.fvar.len()).filter(|&i| !self.graph.neighbors(i).is_empty())
    }

    /// Largest diagonal jitter any neighbor system needed.
    pub fn max_jitter(&self) -> f64 {
        self.max_jitter
    }

    /// The same factors under marginal variance `sigma2`; weights are
    /// invariant and residual variances scale linearly.
    pub fn rescaled(&self, sigma2: f64) -> VecchiaModel {
        let r = sigma2 / self.kernel.sigma2;
        VecchiaModel {
            reference: Arc::clone(&self.reference),
            graph: Arc::clone(&self.graph),
            kernel: self.kernel.with_sigma2(sigma2),
            weights: self.weights.clone(),
            fvar: self.fvar.iter().map(|f| f * r).collect(),
            max_jitter: self.max_jitter * r,
        }
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.len() {
            return Err(NndpError::LengthMismatch { what: "latent vector", expected: self.len(), found: w.len() });
        }
        Ok(())
    }

    /// `b_i' w_{N(s_i)}`.
    pub fn conditional_mean(&self, i: usize, w: &[f64]) -> f64 {
        self.graph.neighbors(i).iter().zip(self.weights(i)).map(|(&j, b)| b * w[j]).sum()
    }

    /// `w_i - b_i' w_{N(s_i)}` for every site.
    pub fn residuals(&self, w: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| w[i] - self.conditional_mean(i, w)).collect()
    }

    /// `w' C~^{-1} w`.
    pub fn quad_form(&self, w: &[f64]) -> Result<f64> {
        self.check_len(w)?;
        Ok(self.residuals(w).iter().zip(&self.fvar).map(|(r, f)| r * r / f).sum())
    }

    /// `log det C~ = sum_i log f_i`.
    pub fn log_det(&self) -> f64 {
        self.fvar.iter().map(|f| f.ln()).sum()
    }

    pub fn log_likelihood(&self, w: &[f64]) -> Result<f64> {
        self.check_len(w)?;
        if w.iter().any(|x| !x.is_finite()) {
            return Err(NndpError::NonFinite("latent vector"));
        }
        let q = self.quad_form(w)?;
        let k = self.len() as f64;
        Ok(-0.5 * (k * (2.0 * std::f64::consts::PI).ln() + self.log_det() + q))
    }

    /// Draws `w ~ N(0, C~_S)` site by site.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut w = vec![0.0; self.len()];
        for i in 0..self.len() {
            let z: f64 = rng.sample(StandardNormal);
            w[i] = self.conditional_mean(i, &w) + self.fvar[i].sqrt() * z;
        }
        w
    }

    /// `(I - B)' F^{-1} (I - B) x`.
    pub fn precision_apply(&self, x: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = self.residuals(x).iter().zip(&self.fvar).map(|(r, f)| r / f).collect();
        let mut out = r.clone();
        for i in 0..self.len() {
            for (&l, b) in self.graph.neighbors(i).iter().zip(self.weights(i)) {
                out[l] -= b * r[i];
            }
        }
        out
    }

    /// `C~_S x`, via `(I - B)^{-1} F (I - B)^{-T}`.
    pub fn ctilde_apply(&self, x: &[f64]) -> Vec<f64> {
        let k = self.len();
        let mut y = x.to_vec();
        for i in (0..k).rev() {
            let yi = y[i];
            for (&l, b) in self.graph.neighbors(i).iter().zip(self.weights(i)) {
                y[l] += b * yi;
            }
        }
        for i in 0..k {
            y[i] *= self.fvar[i];
        }
        for i in 0..k {
            let m = self.conditional_mean(i, &y);
            y[i] += m;
        }
        y
    }

    /// Column `j` of `C~_S`.
    pub fn ctilde_column(&self, j: usize) -> Vec<f64> {
        let mut e = vec![0.0; self.len()];
        e[j] = 1.0;
        self.ctilde_apply(&e)
    }

    /// Kriging weights of `v` on `N(v)` under the parent kernel.
    pub fn new_site(&self, v: &[f64]) -> Result<NewSite> {
        match self.reference.locate(v)? {
            Location::Reference(i) => Err(NndpError::CoincidesWithReference(i)),
            Location::Off { closest } => self.new_site_near(v, closest),
        }
    }

    pub(crate) fn new_site_near(&self, v: &[f64], closest: usize) -> Result<NewSite> {
        krige_weights(&self.kernel, &self.reference, &self.graph, v, closest)
    }

    /// Resolves a location, applying `policy` to equidistant queries.
    pub fn site(&self, v: &[f64], policy: DegeneracyPolicy) -> Result<Site> {
        let (v, loc) = self.reference.locate_with(v, policy)?;
        match loc {
            Location::Reference(i) => Ok(Site::Reference(i)),
            Location::Off { closest } => Ok(Site::New(self.new_site_near(&v, closest)?)),
        }
    }

    /// Kriging mean `b_v' w_{N(v)}` and variance `f_v` at `v` off the reference set.
    pub fn krige_new(&self, v: &[f64], w: &[f64]) -> Result<(f64, f64)> {
        self.check_len(w)?;
        let s = self.new_site(v)?;
        let mean = s.set.iter().zip(&s.weights).map(|(&j, b)| b * w[j]).sum();
        Ok((mean, s.fvar))
    }

    /// Full conditional of `w_i` given all other entries under `N(0, C~_S)`,
    /// as `(precision, precision * mean)`.
    pub fn latent_conditional(&self, i: usize, w: &[f64]) -> (f64, f64) {
        let mut prec = 1.0 / self.fvar[i];
        let mut lin = self.conditional_mean(i, w) / self.fvar[i];
        for &j in self.graph.children(i) {
            let nb = self.graph.neighbors(j);
            let bj = self.weights(j);
            let mut rest = w[j];
            let mut bji = 0.0;
            for (&l, b) in nb.iter().zip(bj) {
                if l == i {
                    bji = *b;
                } else {
                    rest -= b * w[l];
                }
            }
            prec += bji * bji / self.fvar[j];
            lin += bji * rest / self.fvar[j];
        }
        (prec, lin)
    }

    pub fn ctilde(&self) -> CTilde<'_> {
        CTilde::new(self)
    }
}

/// Memoized evaluator of `C~` entries.
#[derive(Debug)]
pub struct CTilde<'a> {
    model: &'a VecchiaModel,
    memo: HashMap<(usize, usize), f64>,
}

impl<'a> CTilde<'a> {
    pub fn new(model: &'a VecchiaModel) -> Self {
        Self { model, memo: HashMap::new() }
    }

    pub fn cached_pairs(&self) -> usize {
        self.memo.len()
    }

    fn key(i: usize, j: usize) -> (usize, usize) {
        if i >= j {
            (i, j)
        } else {
            (j, i)
        }
    }

    /// `C~(s_i, s_j)` for reference sites.
    pub fn get(&mut self, i: usize, j: usize) -> f64 {
        let root = Self::key(i, j);
        if let Some(v) = self.memo.get(&root) {
            return *v;
        }
        let model = self.model;
        let mut stack = vec![root];
        while let Some(&(a, b)) = stack.last() {
            if self.memo.contains_key(&(a, b)) {
                stack.pop();
                continue;
            }
            let nb = model.graph.neighbors(a);
            let deps = nb.iter().map(|&l| if a == b { Self::key(a, l) } else { Self::key(l, b) });
            let mut missing = false;
            for d in deps.clone() {
                if !self.memo.contains_key(&d) {
                    stack.push(d);
                    missing = true;
                }
            }
            if missing {
                continue;
            }
            let mut v: f64 = deps.zip(model.weights(a)).map(|(d, w)| w * self.memo[&d]).sum();
            if a == b {
                v += model.fvar[a];
            }
            self.memo.insert((a, b), v);
            stack.pop();
        }
        self.memo[&root]
    }

    /// `C~` between a reference site and any site.
    pub fn reference_site(&mut self, i: usize, s: &Site) -> f64 {
        match s {
            Site::Reference(j) => self.get(i, *j),
            Site::New(n) => n.set.iter().zip(&n.weights).map(|(&l, b)| b * self.get(i, l)).sum(),
        }
    }

    /// `C~(v1, v2)`; `same` adds `f_v` when both are the same new location.
    pub fn sites(&mut self, a: &Site, b: &Site, same: bool) -> f64 {
        match (a, b) {
            (Site::Reference(i), _) => self.reference_site(*i, b),
            (_, Site::Reference(j)) => self.reference_site(*j, a),
            (Site::New(x), Site::New(y)) => {
                let mut v = 0.0;
                for (&l, bl) in x.set.iter().zip(&x.weights) {
                    for (&r, br) in y.set.iter().zip(&y.weights) {
                        v += bl * br * self.get(l, r);
                    }
                }
                if same {
                    v += x.fvar;
                }
                v
            }
        }
    }

    /// Dense block `C~_{I,J}` over reference sites.
    pub fn block(&mut self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.get(rows[a], cols[b]))
    }
}

/// `C~(v1, v2)` for arbitrary locations.
pub fn c_tilde(v1: &[f64], v2: &[f64], model: &VecchiaModel, policy: DegeneracyPolicy) -> Result<f64> {
    let a = model.site(v1, policy)?;
    let b = model.site(v2, policy)?;
    let same = v1 == v2;
    Ok(model.ctilde().sites(&a, &b, same))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Smoothness;
    use crate::neighbors::{build_graph, order_reference, OrderingScheme, Points, StencilRule};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(k: usize, m: usize, seed: u64, kernel: KernelParams) -> VecchiaModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Points::new(2, (0..2 * k).map(|_| rng.random::<f64>()).collect()).unwrap();
        let r = Arc::new(order_reference(&p, OrderingScheme::CoordinateSum).unwrap());
        let g = Arc::new(build_graph(&r, m, StencilRule::Nearest).unwrap());
        fit_factors(&r, &g, kernel).unwrap()
    }

    fn dense(model: &VecchiaModel) -> DMatrix<f64> {
        let idx: Vec<usize> = (0..model.len()).collect();
        gram(model.kernel(), model.reference(), &idx)
    }

    fn kernels() -> Vec<KernelParams> {
        vec![KernelParams::matern52(1.3, 2.0).unwrap(), KernelParams::rbf(0.7, 3.0).unwrap()]
    }

    #[test]
    fn single_site() {
        let p = Points::new(2, vec![0.2, 0.4]).unwrap();
        let r = Arc::new(order_reference(&p, OrderingScheme::CoordinateSum).unwrap());
        let g = Arc::new(build_graph(&r, 3, StencilRule::Nearest).unwrap());
        let m = fit_factors(&r, &g, KernelParams::matern52(2.5, 1.0).unwrap()).unwrap();
        assert!(m.weights(0).is_empty());
        assert_eq!(m.residual_variance(0), 2.5);
        assert_eq!(m.ctilde().get(0, 0), 2.5);
    }

    #[test]
    fn two_sites_schur_complement() {
        let k = KernelParams::matern52(1.0, 2.0).unwrap();
        let m = setup(2, 1, 11, k);
        let (a, b) = (m.reference().point(0).to_vec(), m.reference().point(1).to_vec());
        let c = k.cov(&a, &b).unwrap();
        assert!((m.residual_variance(1) - (1.0 - c * c)).abs() < 1e-14);
    }

    #[test]
    fn weights_match_dense_solve() {
        let m = setup(80, 8, 12, KernelParams::matern52(1.0, 3.0).unwrap());
        let r = m.reference();
        for i in [10, 40, 79] {
            let nb = m.graph().neighbors(i);
            let cn = gram(m.kernel(), r, nb);
            let c = DVector::from_iterator(nb.len(), nb.iter().map(|&j| m.kernel().cov(r.point(i), r.point(j)).unwrap()));
            let b = cn.lu().solve(&c).unwrap();
            for (x, y) in b.iter().zip(m.weights(i)) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn saturation_recovers_dense_covariance() {
        for kernel in kernels() {
            for k in [5, 12, 30] {
                let m = setup(k, k - 1, k as u64, kernel);
                let c = dense(&m);
                let mut ct = m.ctilde();
                for i in 0..k {
                    for j in 0..k {
                        assert!((ct.get(i, j) - c[(i, j)]).abs() < 1e-8, "k={k} ({i},{j})");
                    }
                }
            }
        }
    }

    #[test]
    fn recursion_matches_triangular_solves() {
        let m = setup(120, 6, 13, KernelParams::matern52(1.0, 4.0).unwrap());
        let mut ct = m.ctilde();
        for j in [0, 57, 119] {
            let col = m.ctilde_column(j);
            for i in 0..120 {
                assert!((ct.get(i, j) - col[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn precision_identity() {
        let m = setup(200, 10, 14, KernelParams::matern52(1.0, 8.0).unwrap());
        let mut ct = m.ctilde();
        let c = ct.block(&(0..200).collect::<Vec<_>>(), &(0..200).collect::<Vec<_>>());
        for j in 0..200 {
            let col: Vec<f64> = c.column(j).iter().copied().collect();
            let q = m.precision_apply(&col);
            for i in 0..200 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((q[i] - target).abs() < 1e-6, "({i},{j}) {}", q[i]);
            }
        }
    }

    #[test]
    fn zero_field_likelihood() {
        let m = setup(30, 5, 15, KernelParams::matern52(1.0, 3.0).unwrap());
        let expected: f64 = m.residual_variances().iter().map(|f| -0.5 * (2.0 * std::f64::consts::PI * f).ln()).sum();
        assert!((m.log_likelihood(&vec![0.0; 30]).unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn saturated_likelihood_matches_dense() {
        for kernel in kernels() {
            let m = setup(20, 19, 16, kernel);
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let w = m.sample(&mut rng);
            let chol = dense(&m).cholesky().unwrap();
            let wv = DVector::from_vec(w.clone());
            let q = wv.dot(&chol.solve(&wv));
            let logdet: f64 = chol.l().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
            let want = -0.5 * (20.0 * (2.0 * std::f64::consts::PI).ln() + logdet + q);
            assert!((m.log_likelihood(&w).unwrap() - want).abs() < 1e-8);
        }
    }

    #[test]
    fn variance_rescaling_identity() {
        let m = setup(25, 4, 18, KernelParams::matern52(1.0, 3.0).unwrap());
        let w: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let s2: f64 = 2.0;
        let scaled: Vec<f64> = w.iter().map(|x| x / s2.sqrt()).collect();
        let lhs = m.rescaled(s2).log_likelihood(&w).unwrap();
        let rhs = m.log_likelihood(&scaled).unwrap() - 12.5 * s2.ln();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn non_finite_rejected() {
        let m = setup(5, 2, 19, KernelParams::matern52(1.0, 3.0).unwrap());
        assert!(m.log_likelihood(&[0.0, f64::NAN, 0.0, 0.0, 0.0]).is_err());
        assert!(m.log_likelihood(&[0.0; 4]).is_err());
    }

    #[test]
    fn kriging_interpolates_near_a_site() {
        let m = setup(50, 8, 20, KernelParams::matern52(1.0, 3.0).unwrap());
        let w: Vec<f64> = (0..50).map(|i| (i as f64).cos()).collect();
        let iota = m.reference().min_separation();
        let v: Vec<f64> = m.reference().point(7).iter().map(|c| c + 1e-8 * iota).collect();
        let (mean, var) = m.krige_new(&v, &w).unwrap();
        assert!((mean - w[7]).abs() < 1e-6);
        assert!(var.abs() < 1e-8);
        let (_, var2) = m.krige_new(&v, &vec![0.0; 50]).unwrap();
        assert_eq!(var, var2);
    }

    #[test]
    fn saturated_kriging_matches_dense() {
        for kernel in kernels() {
            let m = setup(20, 19, 21, kernel);
            let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).sin()).collect();
            let c = dense(&m);
            let v = [0.31, 0.47];
            let cv = DVector::from_iterator(20, (0..20).map(|j| kernel.cov(&v, m.reference().point(j)).unwrap()));
            let a = c.cholesky().unwrap().solve(&cv);
            let (mean, var) = m.krige_new(&v, &w).unwrap();
            assert!((mean - a.dot(&DVector::from_vec(w.clone()))).abs() < 1e-8);
            assert!((var - (kernel.sigma2 - a.dot(&cv))).abs() < 1e-8);
            assert!(var > 0.0);
        }
    }

    #[test]
    fn preserved_neighbor_blocks_preserve_row_and_variance() {
        let m = setup(80, 5, 22, KernelParams::matern52(1.0, 3.0).unwrap());
        let c = dense(&m);
        let mut ct = m.ctilde();
        let mut hits = 0;
        for i in 0..80 {
            let nb = m.graph().neighbors(i);
            let matched = nb.iter().all(|&a| nb.iter().all(|&b| (ct.get(a, b) - c[(a, b)]).abs() <= 1e-10));
            if matched {
                hits += 1;
                for &j in nb {
                    assert!((ct.get(i, j) - c[(i, j)]).abs() <= 1e-10);
                }
                assert!((ct.get(i, i) - c[(i, i)]).abs() <= 1e-10);
            }
        }
        assert!(hits >= 6);
    }

    #[test]
    fn c_tilde_first_site_and_new_points() {
        let kernel = KernelParams::new(1.0, 3.0, Smoothness::Matern32).unwrap();
        let m = setup(40, 39, 23, kernel);
        let p = DegeneracyPolicy::Strict;
        let s0 = m.reference().point(0).to_vec();
        assert!((c_tilde(&s0, &s0, &m, p).unwrap() - 1.0).abs() < 1e-14);
        let (v1, v2) = ([0.123, 0.456], [0.789, 0.321]);
        for (a, b) in [(&v1[..], &s0[..]), (&v1[..], &v1[..])] {
            assert!((c_tilde(a, b, &m, p).unwrap() - kernel.cov(a, b).unwrap()).abs() < 1e-8);
        }
        // distinct new points only share the reference-set component
        let idx: Vec<usize> = (0..40).collect();
        let c = dense(&m);
        let cv = |v: &[f64]| DVector::from_iterator(40, idx.iter().map(|&j| kernel.cov(v, m.reference().point(j)).unwrap()));
        let want = cv(&v1).dot(&c.clone().cholesky().unwrap().solve(&cv(&v2)));
        assert!((c_tilde(&v1, &v2, &m, p).unwrap() - want).abs() < 1e-8);
    }

    #[test]
    fn latent_conditional_matches_dense_precision() {
        let m = setup(20, 19, 24, KernelParams::matern52(1.0, 3.0).unwrap());
        let q = dense(&m).try_inverse().unwrap();
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 1.3).sin()).collect();
        for i in [0, 9, 19] {
            let (prec, lin) = m.latent_conditional(i, &w);
            let want_mean = -(0..20).filter(|&j| j != i).map(|j| q[(i, j)] * w[j]).sum::<f64>() / q[(i, i)];
            assert!((prec - q[(i, i)]).abs() < 1e-8 * q[(i, i)]);
            assert!((lin / prec - want_mean).abs() < 1e-8);
        }
    }

    #[test]
    fn prior_draws_have_model_covariance() {
        let m = setup(6, 2, 25, KernelParams::matern52(1.0, 2.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 40_000;
        let mut acc = DMatrix::<f64>::zeros(6, 6);
        for _ in 0..n {
            let w = DVector::from_vec(m.sample(&mut rng));
            acc += &w * w.transpose();
        }
        acc /= n as f64;
        let mut ct = m.ctilde();
        for i in 0..6 {
            for j in 0..6 {
                assert!((acc[(i, j)] - ct.get(i, j)).abs() < 0.05);
            }
        }
    }
}
