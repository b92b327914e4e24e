//! Directional derivatives of the NNGP.
//!
//! A target `v` is anchored on `A = N0(s_i)` (reference site `s_i`) or on
//! `A = N(v)` (new location). With `a_u = C_A^{-1} D_u C(v, A)'`:
//!
//! ```text
//! Cov(D_u w~(v), w~(x))          = a_u' C~_{A, x}
//! Cov(D_u w~(v1), D_w w~(v2))    = a_u' C~_{A1, A2} a_w
//!                                  + [v1 == v2] (D2_{u,w} C(v, v) - D_u C(v, A) C_A^{-1} D_w C(A, v))
//! ```
//!
//! Conditioning on `w~_S` gives the law used for posterior draws:
//! mean `a_u' w~_A` and covariance equal to the bracketed residual term,
//! independently across targets. [`sample_gradient_fast`] uses these closed
//! forms; [`sample_gradient_reference`] assembles the joint covariance from
//! `C~` columns and conditions numerically.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{NndpError, Result};
use crate::kernel::{Direction, KernelParams};
use crate::linalg::cholesky_with_jitter;
use crate::neighbors::{DegeneracyPolicy, Location, Points, ReferenceSet};
use crate::nngp::{factor_neighbors, fit_factors, VecchiaModel};
use crate::posterior::PosteriorDraw;

/// Target locations and directions of a gradient request.
#[derive(Debug, Clone)]
pub struct GradientQuery {
    pub points: Points,
    pub directions: Vec<Direction>,
    pub policy: DegeneracyPolicy,
}

impl GradientQuery {
    pub fn new(points: Points, directions: Vec<Direction>) -> Result<Self> {
        if directions.is_empty() {
            return Err(NndpError::Empty("direction list"));
        }
        for d in &directions {
            if d.dim() != points.dim() {
                return Err(NndpError::DimensionMismatch { expected: points.dim(), found: d.dim() });
            }
        }
        Ok(Self { points, directions, policy: DegeneracyPolicy::Strict })
    }

    /// Canonical directions `e_1..e_d`.
    pub fn canonical(points: Points) -> Self {
        let directions = Direction::canonical(points.dim());
        Self { points, directions, policy: DegeneracyPolicy::Strict }
    }

    pub fn with_policy(mut self, policy: DegeneracyPolicy) -> Self {
        self.policy = policy;
        self
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Anchor {
    pub point: Vec<f64>,
    pub reference: Option<usize>,
    pub closest: usize,
    pub anchors: Vec<usize>,
}

pub(crate) fn anchor(model: &VecchiaModel, point: &[f64], policy: DegeneracyPolicy) -> Result<Anchor> {
    let (point, loc) = model.reference().locate_with(point, policy)?;
    let (reference, closest) = match loc {
        Location::Reference(i) => (Some(i), i),
        Location::Off { closest } => (None, closest),
    };
    Ok(Anchor { point, reference, closest, anchors: model.graph().stencil(closest).to_vec() })
}

/// Conditional weights and residual covariance of the gradient at one target.
#[derive(Debug, Clone)]
pub struct GradientStencil {
    pub point: Vec<f64>,
    pub reference: Option<usize>,
    pub anchors: Vec<usize>,
    /// `C_A^{-1} D C(A, v)`, one column per direction.
    pub weights: DMatrix<f64>,
    /// `D2 C(v, v) - D C(v, A) C_A^{-1} D C(A, v)`.
    pub residual: DMatrix<f64>,
}

impl GradientStencil {
    /// `a_d' w_A`.
    pub fn mean(&self, d: usize, w: &[f64]) -> f64 {
        self.anchors.iter().enumerate().map(|(l, &j)| self.weights[(l, d)] * w[j]).sum()
    }
}

fn stencil_for(kernel: &KernelParams, reference: &ReferenceSet, a: &Anchor, dirs: &[Direction]) -> Result<GradientStencil> {
    let chol = factor_neighbors(kernel, reference, &a.anchors, a.closest)?;
    let nd = dirs.len();
    let dc = DMatrix::from_fn(a.anchors.len(), nd, |l, d| {
        kernel.d_cov_unchecked(dirs[d].as_slice(), &a.point, reference.point(a.anchors[l]))
    });
    let weights = chol.factor.solve(&dc);
    let mut residual = DMatrix::from_fn(nd, nd, |u, w| {
        kernel.d2_cov_unchecked(dirs[u].as_slice(), dirs[w].as_slice(), &a.point, &a.point) - dc.column(u).dot(&weights.column(w))
    });
    residual = (&residual + residual.transpose()) * 0.5;
    Ok(GradientStencil { point: a.point.clone(), reference: a.reference, anchors: a.anchors.clone(), weights, residual })
}

fn check_query(model: &VecchiaModel, dirs: &[Direction]) -> Result<()> {
    model.kernel().require_differentiable()?;
    let dim = model.reference().dim();
    for d in dirs {
        if d.dim() != dim {
            return Err(NndpError::DimensionMismatch { expected: dim, found: d.dim() });
        }
    }
    Ok(())
}

/// Gradient stencil of `point` under the model's kernel.
pub fn gradient_stencil(
    model: &VecchiaModel,
    point: &[f64],
    dirs: &[Direction],
    policy: DegeneracyPolicy,
) -> Result<GradientStencil> {
    check_query(model, dirs)?;
    let a = anchor(model, point, policy)?;
    stencil_for(model.kernel(), model.reference(), &a, dirs)
}

/// `Cov(D_u w~(v1), w~(v2))`.
pub fn cross_cov_value_grad(
    v1: &[f64],
    v2: &[f64],
    u: &Direction,
    model: &VecchiaModel,
    policy: DegeneracyPolicy,
) -> Result<f64> {
    let st = gradient_stencil(model, v1, std::slice::from_ref(u), policy)?;
    if st.reference.is_none() && v1 == v2 {
        return Err(NndpError::CoincidentNewPair);
    }
    let site = model.site(v2, policy)?;
    let mut ct = model.ctilde();
    Ok(st.anchors.iter().enumerate().map(|(l, &j)| st.weights[(l, 0)] * ct.reference_site(j, &site)).sum())
}

/// `Cov(D_u w~(v1), D_u w~(v2))`.
pub fn cov_grad_grad(v1: &[f64], v2: &[f64], u: &Direction, model: &VecchiaModel, policy: DegeneracyPolicy) -> Result<f64> {
    cov_grad_grad_pair(v1, v2, u, u, model, policy)
}

/// `Cov(D_u w~(v1), D_w w~(v2))`.
pub fn cov_grad_grad_pair(
    v1: &[f64],
    v2: &[f64],
    u: &Direction,
    w: &Direction,
    model: &VecchiaModel,
    policy: DegeneracyPolicy,
) -> Result<f64> {
    let s1 = gradient_stencil(model, v1, &[u.clone(), w.clone()], policy)?;
    let s2 = gradient_stencil(model, v2, std::slice::from_ref(w), policy)?;
    let mut ct = model.ctilde();
    let mut v = 0.0;
    for (l, &i) in s1.anchors.iter().enumerate() {
        for (r, &j) in s2.anchors.iter().enumerate() {
            v += s1.weights[(l, 0)] * s2.weights[(r, 0)] * ct.get(i, j);
        }
    }
    if v1 == v2 {
        v += s1.residual[(0, 1)];
    }
    Ok(v)
}

/// Joint covariance of values and gradients at a set of locations.
///
/// Gradient rows are ordered target-major: row `t * nd + d`.
#[derive(Debug, Clone)]
pub struct JointCovariance {
    pub values: DMatrix<f64>,
    /// `Cov(D w~(t), w~(x))`, gradient rows by value columns.
    pub cross: DMatrix<f64>,
    pub gradients: DMatrix<f64>,
}

impl JointCovariance {
    /// The assembled `(n + n*nd)` square matrix.
    pub fn full(&self) -> DMatrix<f64> {
        let n = self.values.nrows();
        let g = self.gradients.nrows();
        let mut m = DMatrix::zeros(n + g, n + g);
        m.view_mut((0, 0), (n, n)).copy_from(&self.values);
        m.view_mut((n, 0), (g, n)).copy_from(&self.cross);
        m.view_mut((0, n), (n, g)).copy_from(&self.cross.transpose());
        m.view_mut((n, n), (g, g)).copy_from(&self.gradients);
        m
    }
}

pub fn joint_covariance(
    model: &VecchiaModel,
    points: &Points,
    dirs: &[Direction],
    policy: DegeneracyPolicy,
) -> Result<JointCovariance> {
    check_query(model, dirs)?;
    let n = points.len();
    let nd = dirs.len();
    let mut stencils = Vec::with_capacity(n);
    let mut sites = Vec::with_capacity(n);
    for p in points.iter() {
        let a = anchor(model, p, policy)?;
        sites.push(model.site(&a.point, DegeneracyPolicy::Strict)?);
        stencils.push(stencil_for(model.kernel(), model.reference(), &a, dirs)?);
    }
    let mut ct = model.ctilde();
    let values = DMatrix::from_fn(n, n, |i, j| ct.sites(&sites[i], &sites[j], i == j));
    let mut cross = DMatrix::zeros(n * nd, n);
    for (t, st) in stencils.iter().enumerate() {
        for (x, site) in sites.iter().enumerate() {
            if t == x && st.reference.is_none() {
                return Err(NndpError::CoincidentNewPair);
            }
            let c: Vec<f64> = st.anchors.iter().map(|&j| ct.reference_site(j, site)).collect();
            for d in 0..nd {
                cross[(t * nd + d, x)] = (0..c.len()).map(|l| st.weights[(l, d)] * c[l]).sum();
            }
        }
    }
    let mut gradients = DMatrix::zeros(n * nd, n * nd);
    for t in 0..n {
        for t2 in 0..=t {
            let block = ct.block(&stencils[t].anchors, &stencils[t2].anchors);
            let mut g = stencils[t].weights.transpose() * block * &stencils[t2].weights;
            if t == t2 {
                g += &stencils[t].residual;
            }
            for d in 0..nd {
                for d2 in 0..nd {
                    gradients[(t * nd + d, t2 * nd + d2)] = g[(d, d2)];
                    gradients[(t2 * nd + d2, t * nd + d)] = g[(d, d2)];
                }
            }
        }
    }
    Ok(JointCovariance { values, cross, gradients })
}

/// Gaussian law of gradients given `w~_S`, rows ordered target-major.
#[derive(Debug, Clone)]
pub struct ConditionalLaw {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

/// Conditions the assembled joint covariance on `w`, using `C~_S` columns from
/// triangular solves and the sparse precision.
pub fn conditional_law_full(
    model: &VecchiaModel,
    w: &[f64],
    points: &Points,
    dirs: &[Direction],
    policy: DegeneracyPolicy,
) -> Result<ConditionalLaw> {
    check_query(model, dirs)?;
    if w.len() != model.len() {
        return Err(NndpError::LengthMismatch { what: "latent vector", expected: model.len(), found: w.len() });
    }
    let k = model.len();
    let nd = dirs.len();
    let mut stencils = Vec::with_capacity(points.len());
    for p in points.iter() {
        let a = anchor(model, p, policy)?;
        stencils.push(stencil_for(model.kernel(), model.reference(), &a, dirs)?);
    }
    let rows = points.len() * nd;
    let mut sparse = Vec::with_capacity(rows);
    for st in &stencils {
        for d in 0..nd {
            let mut e = vec![0.0; k];
            for (l, &j) in st.anchors.iter().enumerate() {
                e[j] += st.weights[(l, d)];
            }
            sparse.push(e);
        }
    }
    // G rows: Cov(D w~(t), w~_S)
    let g: Vec<Vec<f64>> = sparse.par_iter().map(|e| model.ctilde_apply(e)).collect();
    let h: Vec<Vec<f64>> = g.par_iter().map(|r| model.precision_apply(r)).collect();
    let qw = model.precision_apply(w);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mean: Vec<f64> = g.iter().map(|r| dot(r, &qw)).collect();
    let mut cov = DMatrix::zeros(rows, rows);
    for r in 0..rows {
        for c in 0..=r {
            let mut v = dot(&sparse[r], &g[c]) - dot(&g[r], &h[c]);
            if r / nd == c / nd {
                v += stencils[r / nd].residual[(r % nd, c % nd)];
            }
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    Ok(ConditionalLaw { mean, cov })
}

/// Per-target closed-form conditional law; cross-target blocks are zero.
pub fn conditional_law_fast(
    model: &VecchiaModel,
    w: &[f64],
    points: &Points,
    dirs: &[Direction],
    policy: DegeneracyPolicy,
) -> Result<ConditionalLaw> {
    let nd = dirs.len();
    let rows = points.len() * nd;
    let mut mean = vec![0.0; rows];
    let mut cov = DMatrix::zeros(rows, rows);
    for (t, p) in points.iter().enumerate() {
        let st = gradient_stencil(model, p, dirs, policy)?;
        for d in 0..nd {
            mean[t * nd + d] = st.mean(d, w);
            for d2 in 0..nd {
                cov[(t * nd + d, t * nd + d2)] = st.residual[(d, d2)];
            }
        }
    }
    Ok(ConditionalLaw { mean, cov })
}

/// Lower factor of a covariance matrix with jitter relative to its largest
/// diagonal entry. An all-zero matrix yields a zero factor.
pub fn factor_covariance(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let scale = cov.diagonal().amax();
    if scale == 0.0 && cov.amax() == 0.0 {
        return Ok(DMatrix::zeros(cov.nrows(), cov.ncols()));
    }
    match cholesky_with_jitter(cov, scale.max(f64::MIN_POSITIVE)) {
        Ok(c) => Ok(c.l()),
        Err(jitter) => Err(NndpError::NotPositiveDefinite(format!(
            "gradient conditional covariance ({}x{}, min diagonal {:.3e}, trace {:.3e}) after jitter {jitter:.3e}",
            cov.nrows(),
            cov.ncols(),
            cov.diagonal().min(),
            cov.trace()
        ))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplingOptions {
    pub batch: usize,
    pub seed: u64,
    pub keep_samples: bool,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self { batch: 100, seed: 1, keep_samples: false }
    }
}

/// Posterior summaries per target and direction, indexed `t * nd + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    /// Locations as evaluated (after any perturbation).
    pub points: Vec<Vec<f64>>,
    pub directions: Vec<Direction>,
    pub estimate: Vec<f64>,
    pub sd: Vec<f64>,
    pub n_samples: Vec<usize>,
    pub samples: Option<Vec<Vec<f64>>>,
}

impl GradientField {
    pub fn n_targets(&self) -> usize {
        self.points.len()
    }

    pub fn estimate(&self, t: usize, d: usize) -> f64 {
        self.estimate[t * self.directions.len() + d]
    }

    pub fn sd(&self, t: usize, d: usize) -> f64 {
        self.sd[t * self.directions.len() + d]
    }

    /// All estimates along direction `d`.
    pub fn direction_estimates(&self, d: usize) -> Vec<f64> {
        (0..self.n_targets()).map(|t| self.estimate(t, d)).collect()
    }

    pub(crate) fn assemble(
        points: Vec<Vec<f64>>,
        directions: Vec<Direction>,
        per_target: Vec<Vec<Vec<f64>>>,
        opts: &SamplingOptions,
    ) -> Result<Self> {
        let nd = directions.len();
        let mut estimate = Vec::with_capacity(points.len() * nd);
        let mut sd = Vec::with_capacity(points.len() * nd);
        let mut n_samples = Vec::with_capacity(points.len() * nd);
        let mut kept = opts.keep_samples.then(Vec::new);
        for target in per_target {
            for s in target {
                let (e, v) = summarize(&s, opts.batch)?;
                estimate.push(e);
                sd.push(v);
                n_samples.push(s.len());
                if let Some(k) = kept.as_mut() {
                    k.push(s);
                }
            }
        }
        Ok(Self { points, directions, estimate, sd, n_samples, samples: kept })
    }
}

pub(crate) fn summarize(samples: &[f64], batch: usize) -> Result<(f64, f64)> {
    let est = batch_median(samples, batch)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 { samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok((est, var.sqrt()))
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean of the medians of consecutive batches; a trailing partial batch is kept.
pub fn batch_median(samples: &[f64], batch: usize) -> Result<f64> {
    if batch == 0 {
        return Err(NndpError::InvalidParameter("batch size must be at least 1".into()));
    }
    if samples.is_empty() {
        return Err(NndpError::Empty("sample list"));
    }
    let medians: Vec<f64> = samples.chunks(batch).map(|c| median(&mut c.to_vec())).collect();
    Ok(medians.iter().sum::<f64>() / medians.len() as f64)
}

/// L2 norm of the per-target estimates over the canonical directions.
pub fn gradient_magnitude(field: &GradientField) -> Result<Vec<f64>> {
    let dim = field.points.first().map_or_else(|| field.directions.first().map_or(0, |d| d.dim()), |p| p.len());
    let mut cols = Vec::with_capacity(dim);
    for axis in 0..dim {
        let pos = field
            .directions
            .iter()
            .position(|d| d.canonical_axis() == Some(axis))
            .ok_or_else(|| NndpError::MissingDirection(format!("e{}", axis + 1)))?;
        cols.push(pos);
    }
    Ok((0..field.n_targets()).map(|t| cols.iter().map(|&d| field.estimate(t, d).powi(2)).sum::<f64>().sqrt()).collect())
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for one (target, direction) stream.
pub fn sub_seed(seed: u64, target: usize, direction: usize) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ target as u64) ^ direction as u64)
}

pub(crate) fn streams(seed: u64, target: usize, nd: usize) -> Vec<ChaCha8Rng> {
    (0..nd).map(|d| ChaCha8Rng::seed_from_u64(sub_seed(seed, target, d))).collect()
}

pub(crate) fn check_draws(draws: &[PosteriorDraw], k: usize) -> Result<()> {
    if draws.is_empty() {
        return Err(NndpError::Empty("posterior draws"));
    }
    for d in draws {
        if d.latent.len() != k {
            return Err(NndpError::LengthMismatch { what: "latent vector", expected: k, found: d.latent.len() });
        }
    }
    Ok(())
}

/// Closed-form per-target sampler, parallel across targets.
///
/// `model` supplies the reference set, graph and smoothness; each draw
/// supplies `sigma2`, `phi` and the latent field.
pub fn sample_gradient_fast(
    draws: &[PosteriorDraw],
    query: &GradientQuery,
    model: &VecchiaModel,
    opts: &SamplingOptions,
) -> Result<GradientField> {
    check_query(model, &query.directions)?;
    check_draws(draws, model.len())?;
    let nd = query.directions.len();
    let smooth = model.kernel().smoothness;
    let reference = model.reference();
    let results: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..query.points.len())
        .into_par_iter()
        .map(|t| {
            let a = anchor(model, query.points.point(t), query.policy)?;
            let mut rngs = streams(opts.seed, t, nd);
            let mut out = vec![Vec::with_capacity(draws.len()); nd];
            let mut cached: Option<(u64, GradientStencil, DMatrix<f64>)> = None;
            let mut z = vec![0.0; nd];
            let mut wa = vec![0.0; a.anchors.len()];
            for draw in draws {
                if cached.as_ref().is_none_or(|c| c.0 != draw.phi.to_bits()) {
                    let st = stencil_for(&KernelParams::new(1.0, draw.phi, smooth)?, reference, &a, &query.directions)?;
                    let l = factor_covariance(&st.residual)?;
                    cached = Some((draw.phi.to_bits(), st, l));
                }
                let (_, st, l) = cached.as_ref().expect("stencil cached");
                for (d, rng) in rngs.iter_mut().enumerate() {
                    z[d] = rng.sample(StandardNormal);
                }
                for (x, &j) in wa.iter_mut().zip(&a.anchors) {
                    *x = draw.latent[j];
                }
                let sd = draw.sigma2.sqrt();
                for (d, o) in out.iter_mut().enumerate() {
                    let mean: f64 = st.weights.column(d).iter().zip(&wa).map(|(b, x)| b * x).sum();
                    let dev: f64 = (0..=d).map(|e| l[(d, e)] * z[e]).sum();
                    o.push(mean + sd * dev);
                }
            }
            Ok((a.point, out))
        })
        .collect::<Result<_>>()?;
    let (points, per_target): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    GradientField::assemble(points, query.directions.clone(), per_target, opts)
}

/// Joint sampler built from the assembled `C~` covariances. Intended for
/// validation on small problems.
pub fn sample_gradient_reference(
    draws: &[PosteriorDraw],
    query: &GradientQuery,
    model: &VecchiaModel,
    opts: &SamplingOptions,
) -> Result<GradientField> {
    check_query(model, &query.directions)?;
    check_draws(draws, model.len())?;
    let nd = query.directions.len();
    let nt = query.points.len();
    let smooth = model.kernel().smoothness;
    let mut rngs: Vec<Vec<ChaCha8Rng>> = (0..nt).map(|t| streams(opts.seed, t, nd)).collect();
    let mut per_target = vec![vec![Vec::with_capacity(draws.len()); nd]; nt];
    let mut unit: Option<(u64, Arc<VecchiaModel>)> = None;
    let mut points = Vec::with_capacity(nt);
    for p in query.points.iter() {
        points.push(anchor(model, p, query.policy)?.point);
    }
    let targets = Points::new(model.reference().dim(), points.concat())?;
    for draw in draws {
        if unit.as_ref().is_none_or(|u| u.0 != draw.phi.to_bits()) {
            let m = fit_factors(model.reference(), model.graph(), KernelParams::new(1.0, draw.phi, smooth)?)?;
            unit = Some((draw.phi.to_bits(), Arc::new(m)));
        }
        let scaled = unit.as_ref().expect("model cached").1.rescaled(draw.sigma2);
        let law = conditional_law_full(&scaled, &draw.latent, &targets, &query.directions, DegeneracyPolicy::Strict)?;
        let l = factor_covariance(&law.cov)?;
        let z = DVector::from_fn(nt * nd, |r, _| rngs[r / nd][r % nd].sample(StandardNormal));
        let x = DVector::from_vec(law.mean) + l * z;
        for r in 0..nt * nd {
            per_target[r / nd][r % nd].push(x[r]);
        }
    }
    GradientField::assemble(points, query.directions.clone(), per_target, opts)
}
