//! MCMC for the latent NNGP model
//!
//! ```text
//! y ~ N(X beta + w, tau2 I),   w ~ N(0, C~(sigma2, phi)),
//! beta ~ N(mu, V), sigma2 ~ IG(a_s, b_s), phi ~ U(a_phi, b_phi), tau2 ~ IG(a_t, b_t)
//! ```
//!
//! Inverse-gamma laws are shape-scale: density proportional to
//! `x^(-a-1) exp(-b/x)`.
//!
//! `phi` is updated with `sigma2` integrated out: a random walk on `log phi`,
//! reflected at the prior bounds, targets
//! `prod f_i^(-1/2) (b_s + q/2)^(-(a_s + k/2))` where `f_i` and `q` are the
//! unit-variance residual variances and quadratic form. `sigma2` is then drawn
//! from its conjugate conditional. In noise-free mode `w = y` and only this
//! block runs. The full model adds single-site latent updates and conjugate
//! `beta` and `tau2` draws.
//!
//! All inputs are aligned with the ordered reference set.

use std::sync::Arc;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{NndpError, Result};
use crate::kernel::{KernelParams, Smoothness};
use crate::neighbors::{NeighborGraph, ReferenceSet};
use crate::nngp::{fit_factors, VecchiaModel};

const TARGET_ACCEPTANCE: f64 = 0.3;
const ADAPT_WINDOW: usize = 25;
const INIT_GRID: usize = 32;
const GOLDEN_STEPS: usize = 24;
const CURVATURE_DELTA: f64 = 0.01;
/// Range parameters whose smallest relative residual variance falls below
/// this are treated as numerically unsupported.
pub const RESIDUAL_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
    pub phi_lower: f64,
    pub phi_upper: f64,
    pub tau2_shape: f64,
    pub tau2_scale: f64,
    pub beta_mean: Vec<f64>,
    /// Prior covariance of `beta`; `None` means `1e4 I`.
    pub beta_cov: Option<DMatrix<f64>>,
}

impl Default for Priors {
    fn default() -> Self {
        Self {
            sigma2_shape: 0.01,
            sigma2_scale: 10.0,
            phi_lower: 0.01,
            phi_upper: 300.0,
            tau2_shape: 2.0,
            tau2_scale: 1.0,
            beta_mean: Vec::new(),
            beta_cov: None,
        }
    }
}

impl Priors {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("sigma2 shape", self.sigma2_shape),
            ("sigma2 scale", self.sigma2_scale),
            ("tau2 shape", self.tau2_shape),
            ("tau2 scale", self.tau2_scale),
            ("phi lower bound", self.phi_lower),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NndpError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.phi_lower < self.phi_upper) || !self.phi_upper.is_finite() {
            return Err(NndpError::InvalidConfig(format!(
                "phi bounds must satisfy lower < upper, got ({}, {})",
                self.phi_lower, self.phi_upper
            )));
        }
        if let Some(v) = &self.beta_cov {
            if !v.is_square() || v.clone().cholesky().is_none() || (v - v.transpose()).amax() > 1e-12 * v.amax() {
                return Err(NndpError::InvalidConfig("beta prior covariance must be symmetric positive definite".into()));
            }
        }
        Ok(())
    }

    fn beta_prior(&self, p: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let mean = if self.beta_mean.is_empty() {
            DVector::zeros(p)
        } else if self.beta_mean.len() == p {
            DVector::from_vec(self.beta_mean.clone())
        } else {
            return Err(NndpError::LengthMismatch { what: "beta prior mean", expected: p, found: self.beta_mean.len() });
        };
        let cov = match &self.beta_cov {
            Some(v) if v.nrows() == p => v.clone(),
            Some(v) => return Err(NndpError::LengthMismatch { what: "beta prior covariance", expected: p, found: v.nrows() }),
            None => DMatrix::identity(p, p) * 1e4,
        };
        let prec = cov.try_inverse().ok_or_else(|| NndpError::InvalidConfig("beta prior covariance is singular".into()))?;
        Ok((mean, prec))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// `w = y`; only `sigma2` and `phi` are sampled.
    #[default]
    NoiseFree,
    /// Latent field, `beta` and `tau2` are sampled as well.
    FullHierarchical,
}

impl std::str::FromStr for Mode {
    type Err = NndpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise-free" | "noisefree" => Ok(Self::NoiseFree),
            "full" | "full-hierarchical" => Ok(Self::FullHierarchical),
            other => Err(NndpError::InvalidConfig(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Initial standard deviation of the `log phi` proposal. With adaptation
    /// on, a smaller scale taken from the local curvature may replace it.
    pub log_phi_step: f64,
    pub adapt: bool,
    pub mode: Mode,
    /// Starting `phi`; a coarse profile search is used when absent.
    pub phi_init: Option<f64>,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { iterations: 1000, burn_in: 500, thin: 1, seed: 1, log_phi_step: 0.1, adapt: true, mode: Mode::NoiseFree, phi_init: None }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(NndpError::InvalidConfig(format!(
                "iterations ({}) must exceed burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(NndpError::InvalidConfig("thinning must be at least 1".into()));
        }
        if !(self.log_phi_step > 0.0 && self.log_phi_step.is_finite()) {
            return Err(NndpError::InvalidConfig("log-phi proposal step must be positive".into()));
        }
        Ok(())
    }
}

/// One retained MCMC state.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraw {
    pub iteration: usize,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub phi: f64,
    pub tau2: Option<f64>,
    /// Latent field on the ordered reference set. Shared across draws in
    /// noise-free mode.
    pub latent: Arc<Vec<f64>>,
}

impl PosteriorDraw {
    pub fn kernel(&self, smoothness: Smoothness) -> Result<KernelParams> {
        KernelParams::new(self.sigma2, self.phi, smoothness)
    }
}

#[derive(Debug, Clone)]
pub struct Chain {
    pub draws: Vec<PosteriorDraw>,
    pub smoothness: Smoothness,
    /// Post-burn-in acceptance rate of the `phi` proposal.
    pub acceptance_rate: f64,
    pub final_step: f64,
}

impl Chain {
    /// Posterior medians of `(sigma2, phi)`.
    pub fn median_params(&self) -> (f64, f64) {
        let med = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        };
        (med(self.draws.iter().map(|d| d.sigma2).collect()), med(self.draws.iter().map(|d| d.phi).collect()))
    }

    pub fn median_kernel(&self) -> Result<KernelParams> {
        let (s, p) = self.median_params();
        KernelParams::new(s, p, self.smoothness)
    }
}

/// Shape and scale of `sigma2 | phi, w`.
pub fn sigma2_conditional(w: &[f64], unit: &VecchiaModel, priors: &Priors) -> Result<(f64, f64)> {
    let q = unit.quad_form(w)?;
    Ok((priors.sigma2_shape + 0.5 * w.len() as f64, priors.sigma2_scale + 0.5 * q))
}

/// Draws from `IG(shape, scale)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0).expect("positive shape");
    scale / g.sample(rng)
}

/// One reflected random-walk Metropolis step on `x = log phi`.
///
/// `log_target` is the log density of `phi` (without the Jacobian), and
/// `current` its value at `x`. Returns the new state, its value and whether
/// the proposal was accepted.
pub fn reflected_log_walk<R: Rng + ?Sized>(
    x: f64,
    current: f64,
    step: f64,
    bounds: (f64, f64),
    log_target: impl FnOnce(f64) -> f64,
    rng: &mut R,
) -> (f64, f64, bool) {
    let (lo, hi) = (bounds.0.ln(), bounds.1.ln());
    let z: f64 = rng.sample(StandardNormal);
    let mut y = x + step * z;
    while y < lo || y > hi {
        if y < lo {
            y = 2.0 * lo - y;
        }
        if y > hi {
            y = 2.0 * hi - y;
        }
    }
    let proposed = log_target(y.exp());
    let log_ratio = proposed + y - current - x;
    let u: f64 = rng.random();
    if proposed.is_finite() && u.ln() < log_ratio {
        (y, proposed, true)
    } else {
        (x, current, false)
    }
}

struct Sampler<'a> {
    reference: &'a Arc<ReferenceSet>,
    graph: &'a Arc<NeighborGraph>,
    smoothness: Smoothness,
    priors: &'a Priors,
}

impl Sampler<'_> {
    fn unit_model(&self, phi: f64) -> Result<VecchiaModel> {
        fit_factors(self.reference, self.graph, KernelParams::new(1.0, phi, self.smoothness)?)
    }

    /// Log density of `phi | w` with `sigma2` integrated out.
    fn collapsed_phi(&self, unit: &VecchiaModel, w: &[f64]) -> Result<f64> {
        let (shape, scale) = sigma2_conditional(w, unit, self.priors)?;
        Ok(-0.5 * unit.log_det() - shape * scale.ln())
    }

    fn collapsed_at(&self, phi: f64, w: &[f64]) -> Option<(VecchiaModel, f64)> {
        let unit = self.unit_model(phi).ok()?;
        if unit.min_relative_residual() < RESIDUAL_FLOOR {
            return None;
        }
        let v = self.collapsed_phi(&unit, w).ok()?;
        v.is_finite().then_some((unit, v))
    }

    /// Log-grid profile search followed by a golden-section refinement
    /// between the neighbors of the best grid point.
    fn initial_phi(&self, w: &[f64]) -> Result<(f64, VecchiaModel, f64)> {
        let (lo, hi) = (self.priors.phi_lower.ln(), self.priors.phi_upper.ln());
        let node = |g: f64| lo + (hi - lo) * (g + 0.5) / INIT_GRID as f64;
        let mut best: Option<(usize, f64)> = None;
        for g in 0..INIT_GRID {
            if let Some((_, v)) = self.collapsed_at(node(g as f64).exp(), w) {
                if best.is_none_or(|b| v > b.1) {
                    best = Some((g, v));
                }
            }
        }
        let (g, _) = best.ok_or_else(|| NndpError::NotPositiveDefinite("no phi on the initial grid gives valid neighbor systems".into()))?;
        let eval = |x: f64| self.collapsed_at(x.exp(), w).map_or(f64::NEG_INFINITY, |(_, v)| v);
        let (mut a, mut b) = (node(g as f64 - 1.0).max(lo), node(g as f64 + 1.0).min(hi));
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let (mut c, mut d) = (b - ratio * (b - a), a + ratio * (b - a));
        let (mut fc, mut fd) = (eval(c), eval(d));
        for _ in 0..GOLDEN_STEPS {
            if fc >= fd {
                b = d;
                (d, fd) = (c, fc);
                c = b - ratio * (b - a);
                fc = eval(c);
            } else {
                a = c;
                (c, fc) = (d, fd);
                d = a + ratio * (b - a);
                fd = eval(d);
            }
        }
        let candidates = [node(g as f64), c, d];
        let x = candidates.into_iter().map(|x| (x, eval(x))).fold((node(g as f64), f64::NEG_INFINITY), |acc, p| if p.1 > acc.1 { p } else { acc }).0;
        let (m, v) = self.collapsed_at(x.exp(), w).expect("refined point was evaluated");
        Ok((x.exp(), m, v))
    }

    /// Proposal scale from the local shape of the collapsed target in
    /// `log phi`: the curvature when it is concave, otherwise the slope, as
    /// happens at the edge of the supported range.
    fn local_step(&self, phi: f64, value: f64, w: &[f64]) -> Option<f64> {
        let up = self.collapsed_at(phi * CURVATURE_DELTA.exp(), w).map(|p| p.1);
        let down = self.collapsed_at(phi * (-CURVATURE_DELTA).exp(), w).map(|p| p.1);
        if let (Some(u), Some(d)) = (up, down) {
            let c = (u + d - 2.0 * value) / (CURVATURE_DELTA * CURVATURE_DELTA);
            if c < 0.0 {
                return Some(2.4 / (-c).sqrt());
            }
        }
        let slope = [up, down].into_iter().flatten().map(|v| (v - value).abs() / CURVATURE_DELTA).fold(0.0, f64::max);
        (slope > 0.0).then(|| 1.0 / slope)
    }
}

/// Full conditional of `w_i` as `(mean, variance)`, combining the scaled
/// NNGP prior with the observation `y_i` at mean offset `xb_i`.
pub fn latent_full_conditional(
    unit: &VecchiaModel,
    i: usize,
    w: &[f64],
    sigma2: f64,
    y_i: f64,
    xb_i: f64,
    tau2: f64,
) -> (f64, f64) {
    let (pu, lu) = unit.latent_conditional(i, w);
    let prec = pu / sigma2 + 1.0 / tau2;
    let lin = lu / sigma2 + (y_i - xb_i) / tau2;
    (lin / prec, 1.0 / prec)
}

/// One sweep of single-site latent updates followed by conjugate `beta` and
/// `tau2` draws.
pub fn gibbs_latent_update<R: Rng + ?Sized>(
    state: &PosteriorDraw,
    y: &[f64],
    x: Option<&DMatrix<f64>>,
    unit: &VecchiaModel,
    priors: &Priors,
    rng: &mut R,
) -> Result<PosteriorDraw> {
    let k = y.len();
    let tau2 = state.tau2.ok_or_else(|| NndpError::InvalidParameter("latent update requires tau2".into()))?;
    let xb = match x {
        Some(x) => x * DVector::from_column_slice(&state.beta),
        None => DVector::zeros(k),
    };
    let mut w = state.latent.as_ref().clone();
    for i in 0..k {
        let (mean, var) = latent_full_conditional(unit, i, &w, state.sigma2, y[i], xb[i], tau2);
        let z: f64 = rng.sample(StandardNormal);
        w[i] = mean + var.sqrt() * z;
    }
    let beta = match x {
        Some(x) => {
            let (mu, vinv) = priors.beta_prior(x.ncols())?;
            let resid = DVector::from_iterator(k, y.iter().zip(&w).map(|(a, b)| a - b));
            let prec = &vinv + x.transpose() * x / tau2;
            let lin = &vinv * mu + x.transpose() * resid / tau2;
            let chol = prec.cholesky().ok_or_else(|| NndpError::NotPositiveDefinite("beta full conditional".into()))?;
            let mean = chol.solve(&lin);
            let z = DVector::from_fn(x.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let l = chol.l();
            let dev = l.transpose().solve_upper_triangular(&z).expect("triangular factor is nonsingular");
            (mean + dev).as_slice().to_vec()
        }
        None => Vec::new(),
    };
    let xb = match x {
        Some(x) => x * DVector::from_column_slice(&beta),
        None => DVector::zeros(k),
    };
    let ss: f64 = (0..k).map(|i| (y[i] - xb[i] - w[i]).powi(2)).sum();
    let tau2 = sample_inverse_gamma(priors.tau2_shape + 0.5 * k as f64, priors.tau2_scale + 0.5 * ss, rng);
    Ok(PosteriorDraw { iteration: state.iteration, beta, sigma2: state.sigma2, phi: state.phi, tau2: Some(tau2), latent: Arc::new(w) })
}

/// Runs one chain and returns the retained draws.
pub fn fit(
    y: &[f64],
    x: Option<&DMatrix<f64>>,
    reference: &Arc<ReferenceSet>,
    graph: &Arc<NeighborGraph>,
    smoothness: Smoothness,
    priors: &Priors,
    cfg: &ChainConfig,
) -> Result<Chain> {
    priors.validate()?;
    cfg.validate()?;
    let k = reference.len();
    if y.len() != k {
        return Err(NndpError::LengthMismatch { what: "response", expected: k, found: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(NndpError::NonFinite("response"));
    }
    if let Some(x) = x {
        if cfg.mode == Mode::NoiseFree {
            return Err(NndpError::InvalidConfig("noise-free mode takes no design matrix".into()));
        }
        if x.nrows() != k {
            return Err(NndpError::LengthMismatch { what: "design matrix rows", expected: k, found: x.nrows() });
        }
    }
    KernelParams::new(1.0, 1.0, smoothness)?;
    let sampler = Sampler { reference, graph, smoothness, priors };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut latent = Arc::new(y.to_vec());
    let (mut phi, mut unit, mut current) = match cfg.phi_init {
        Some(p) => {
            if !(p >= priors.phi_lower && p <= priors.phi_upper) {
                return Err(NndpError::InvalidConfig(format!("initial phi {p} outside prior bounds")));
            }
            let (m, v) = sampler
                .collapsed_at(p, &latent)
                .ok_or_else(|| NndpError::NotPositiveDefinite(format!("neighbor systems at initial phi {p}")))?;
            (p, m, v)
        }
        None => sampler.initial_phi(&latent)?,
    };
    info!("starting chain at phi = {phi:.4}");
    let p = x.map_or(0, |x| x.ncols());
    let mut state = PosteriorDraw {
        iteration: 0,
        beta: vec![0.0; p],
        sigma2: {
            let (a, b) = sigma2_conditional(&latent, &unit, priors)?;
            b / (a + 1.0)
        },
        phi,
        tau2: (cfg.mode == Mode::FullHierarchical).then_some(priors.tau2_scale / (priors.tau2_shape + 1.0)),
        latent: Arc::clone(&latent),
    };

    let mut step = cfg.log_phi_step;
    if cfg.adapt {
        if let Some(s) = sampler.local_step(phi, current, &latent) {
            step = step.min(s);
        }
    }
    debug!("initial log-phi step {step:.4}");
    let mut window_accepts = 0usize;
    let mut accepted_after = 0usize;
    let mut draws = Vec::with_capacity((cfg.iterations - cfg.burn_in).div_ceil(cfg.thin));
    for it in 0..cfg.iterations {
        if cfg.mode == Mode::FullHierarchical {
            state = gibbs_latent_update(&state, y, x, &unit, priors, &mut rng)?;
            latent = Arc::clone(&state.latent);
            current = sampler.collapsed_phi(&unit, &latent)?;
        }
        let mut next_unit = None;
        let (lx, val, acc) = reflected_log_walk(
            phi.ln(),
            current,
            step,
            (priors.phi_lower, priors.phi_upper),
            |cand| match sampler.collapsed_at(cand, &latent) {
                Some((m, v)) => {
                    next_unit = Some(m);
                    v
                }
                None => f64::NEG_INFINITY,
            },
            &mut rng,
        );
        if acc {
            phi = lx.exp().clamp(priors.phi_lower, priors.phi_upper);
            current = val;
            unit = next_unit.expect("accepted proposal has a model");
        }
        let (a, b) = sigma2_conditional(&latent, &unit, priors)?;
        state.sigma2 = sample_inverse_gamma(a, b, &mut rng);
        state.phi = phi;
        state.iteration = it;

        if it < cfg.burn_in {
            window_accepts += acc as usize;
            if cfg.adapt && (it + 1) % ADAPT_WINDOW == 0 {
                let rate = window_accepts as f64 / ADAPT_WINDOW as f64;
                let gain = 1.0 / (((it + 1) / ADAPT_WINDOW) as f64).sqrt();
                step *= (2.0 * gain * (rate - TARGET_ACCEPTANCE)).exp();
                debug!("iteration {it}: acceptance {rate:.2}, step {step:.4}");
                window_accepts = 0;
            }
        } else {
            accepted_after += acc as usize;
            if (it - cfg.burn_in) % cfg.thin == 0 {
                draws.push(state.clone());
            }
        }
    }
    let acceptance_rate = accepted_after as f64 / (cfg.iterations - cfg.burn_in) as f64;
    info!("chain finished: {} draws, phi acceptance {:.3}", draws.len(), acceptance_rate);
    Ok(Chain { draws, smoothness, acceptance_rate, final_step: step })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::{build_graph, order_reference, OrderingScheme, Points, StencilRule};

    fn grid_setup(side: usize, m: usize) -> (Arc<ReferenceSet>, Arc<NeighborGraph>) {
        let mut c = Vec::new();
        for i in 0..side {
            for j in 0..side {
                c.push(i as f64 / (side - 1) as f64);
                c.push(j as f64 / (side - 1) as f64);
            }
        }
        let r = Arc::new(order_reference(&Points::new(2, c).unwrap(), OrderingScheme::CoordinateSum).unwrap());
        let g = Arc::new(build_graph(&r, m, StencilRule::Nearest).unwrap());
        (r, g)
    }

    fn random_setup(k: usize, m: usize, seed: u64) -> (Arc<ReferenceSet>, Arc<NeighborGraph>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Points::new(2, (0..2 * k).map(|_| rng.random::<f64>()).collect()).unwrap();
        let r = Arc::new(order_reference(&p, OrderingScheme::CoordinateSum).unwrap());
        let g = Arc::new(build_graph(&r, m, StencilRule::Nearest).unwrap());
        (r, g)
    }

    #[test]
    fn default_priors_match_simulation_setup() {
        let p = Priors::default();
        assert_eq!((p.phi_lower, p.phi_upper), (0.01, 300.0));
        assert_eq!((p.sigma2_shape, p.sigma2_scale), (0.01, 10.0));
        p.validate().unwrap();
    }

    #[test]
    fn invalid_priors_and_config() {
        let p = Priors { phi_lower: 5.0, phi_upper: 1.0, ..Priors::default() };
        assert!(p.validate().is_err());
        let p = Priors { sigma2_shape: 0.0, ..Priors::default() };
        assert!(p.validate().is_err());
        let c = ChainConfig { iterations: 10, burn_in: 10, ..ChainConfig::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn single_iteration_chain() {
        let (r, g) = random_setup(30, 5, 1);
        let y: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).sin()).collect();
        let cfg = ChainConfig { iterations: 1, burn_in: 0, ..ChainConfig::default() };
        let chain = fit(&y, None, &r, &g, Smoothness::Matern52, &Priors::default(), &cfg).unwrap();
        assert_eq!(chain.draws.len(), 1);
        let d = &chain.draws[0];
        assert!(d.phi >= 0.01 && d.phi <= 300.0 && d.sigma2 > 0.0);
        assert!(d.tau2.is_none() && d.beta.is_empty());
    }

    #[test]
    fn flat_target_gives_uniform_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bounds = (1.0, 2.0);
        let (mut x, mut cur) = (1.5f64.ln(), 0.0);
        let mut accepted = 0;
        let mut samples = Vec::new();
        for it in 0..100_000 {
            let (nx, nv, acc) = reflected_log_walk(x, cur, 0.5, bounds, |_| 0.0, &mut rng);
            x = nx;
            cur = nv;
            accepted += acc as usize;
            if it % 10 == 0 {
                samples.push(x.exp());
            }
        }
        let rate = accepted as f64 / 100_000.0;
        assert!(rate > 0.0 && rate < 1.0);
        samples.sort_by(f64::total_cmp);
        let n = samples.len() as f64;
        let d = samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let f = s - 1.0;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
    }

    #[test]
    fn sigma2_conditional_matches_quadrature() {
        let (r, g) = random_setup(5, 4, 3);
        let unit = fit_factors(&r, &g, KernelParams::matern52(1.0, 2.0).unwrap()).unwrap();
        let w = [0.3, -1.2, 0.8, 2.1, -0.4];
        let priors = Priors { sigma2_shape: 2.0, sigma2_scale: 1.0, ..Priors::default() };
        let (a, b) = sigma2_conditional(&w, &unit, &priors).unwrap();
        // unnormalized log posterior from the likelihood itself, on a log grid
        let log_post = |s: f64| {
            unit.rescaled(s).log_likelihood(&w).unwrap() - (priors.sigma2_shape + 1.0) * s.ln() - priors.sigma2_scale / s
        };
        let (lo, hi, n) = (-8.0f64, 8.0f64, 20_000usize);
        let h = (hi - lo) / n as f64;
        let mut z = 0.0;
        let mut m1 = 0.0;
        for j in 0..=n {
            let t = lo + j as f64 * h;
            let s = t.exp();
            let wgt = if j == 0 || j == n { 1.0 } else if j % 2 == 1 { 4.0 } else { 2.0 };
            let dens = (log_post(s) + t).exp();
            z += wgt * dens;
            m1 += wgt * dens * s;
        }
        let mean = m1 / z;
        let want = b / (a - 1.0);
        assert!((mean - want).abs() / want < 1e-3, "{mean} vs {want}");
    }

    #[test]
    fn chains_are_reproducible() {
        let (r, g) = random_setup(60, 6, 4);
        let y: Vec<f64> = (0..60).map(|i| (i as f64 * 0.2).cos()).collect();
        let cfg = ChainConfig { iterations: 60, burn_in: 20, seed: 99, ..ChainConfig::default() };
        let a = fit(&y, None, &r, &g, Smoothness::Matern52, &Priors::default(), &cfg).unwrap();
        let b = fit(&y, None, &r, &g, Smoothness::Matern52, &Priors::default(), &cfg).unwrap();
        let bits = |c: &Chain| c.draws.iter().map(|d| (d.sigma2.to_bits(), d.phi.to_bits())).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = fit(&y, None, &r, &g, Smoothness::Matern52, &Priors::default(), &ChainConfig { seed: 100, ..cfg }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn recovers_simulated_parameters() {
        let (r, g) = grid_setup(40, 10);
        let truth = fit_factors(&r, &g, KernelParams::matern52(4.0, 12.0).unwrap()).unwrap();
        for seed in 0..3 {
            let y = truth.sample(&mut ChaCha8Rng::seed_from_u64(1000 + seed));
            let cfg = ChainConfig { iterations: 600, burn_in: 300, seed, ..ChainConfig::default() };
            let chain = fit(&y, None, &r, &g, Smoothness::Matern52, &Priors::default(), &cfg).unwrap();
            let (s2, phi) = chain.median_params();
            assert!((2.0..=8.0).contains(&s2), "seed {seed}: sigma2 {s2}");
            assert!((6.0..=24.0).contains(&phi), "seed {seed}: phi {phi}");
        }
    }

    #[test]
    fn latent_conditional_limits() {
        let (r, g) = random_setup(20, 5, 5);
        let unit = fit_factors(&r, &g, KernelParams::matern52(1.0, 3.0).unwrap()).unwrap();
        let w: Vec<f64> = (0..20).map(|i| (i as f64).sin()).collect();
        let last = (0..20).find(|&i| g.children(i).is_empty()).unwrap();
        let (mean, _) = latent_full_conditional(&unit, last, &w, 2.0, 5.0, 0.5, 1e12);
        assert!((mean - unit.conditional_mean(last, &w)).abs() < 1e-9);
        let (mean, var) = latent_full_conditional(&unit, 3, &w, 2.0, 5.0, 0.5, 1e-12);
        assert!((mean - 4.5).abs() < 1e-6 && var < 1e-11);
    }

    #[test]
    fn latent_conditional_matches_dense_gp() {
        let (r, g) = random_setup(20, 19, 6);
        let kernel = KernelParams::matern52(1.5, 3.0).unwrap();
        let unit = fit_factors(&r, &g, kernel.with_sigma2(1.0)).unwrap();
        let c = DMatrix::from_fn(20, 20, |a, b| kernel.cov(r.point(a), r.point(b)).unwrap());
        let q = c.try_inverse().unwrap();
        let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos()).collect();
        let (tau2, y_i, xb) = (0.3, 1.1, 0.2);
        for i in [0, 10, 19] {
            let prec = q[(i, i)] + 1.0 / tau2;
            let lin = -(0..20).filter(|&j| j != i).map(|j| q[(i, j)] * w[j]).sum::<f64>() + (y_i - xb) / tau2;
            let (mean, var) = latent_full_conditional(&unit, i, &w, 1.5, y_i, xb, tau2);
            assert!((mean - lin / prec).abs() < 1e-8);
            assert!((var - 1.0 / prec).abs() < 1e-8);
        }
    }

    #[test]
    fn full_hierarchical_chain_runs() {
        let (r, g) = random_setup(80, 8, 7);
        let truth = fit_factors(&r, &g, KernelParams::matern52(1.0, 4.0).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = truth.sample(&mut rng);
        let y: Vec<f64> = w.iter().map(|v| 2.0 + v + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let x = DMatrix::from_element(80, 1, 1.0);
        let cfg = ChainConfig { iterations: 400, burn_in: 200, mode: Mode::FullHierarchical, ..ChainConfig::default() };
        let chain = fit(&y, Some(&x), &r, &g, Smoothness::Matern52, &Priors::default(), &cfg).unwrap();
        assert_eq!(chain.draws.len(), 200);
        // the intercept is only identified together with the latent mean
        let ybar = y.iter().sum::<f64>() / 80.0;
        let fitted: f64 =
            chain.draws.iter().map(|d| d.beta[0] + d.latent.iter().sum::<f64>() / 80.0).sum::<f64>() / 200.0;
        assert!((fitted - ybar).abs() < 0.1, "{fitted} vs {ybar}");
        assert!(chain.draws.iter().all(|d| d.tau2.unwrap() > 0.0));
    }
}
