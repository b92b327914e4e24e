//! End-to-end runs on data given in input order.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::baselines::{exact_gradient_posterior, fd_gradient, FdConfig, FdResult};
use crate::error::{NndpError, Result};
use crate::kernel::{Direction, KernelParams, Smoothness};
use crate::neighbors::{build_graph, order_reference, NeighborGraph, OrderingScheme, Points, ReferenceSet, StencilRule};
use crate::nndp::{sample_gradient_fast, sample_gradient_reference, GradientField, GradientQuery, SamplingOptions};
use crate::nngp::{fit_factors, VecchiaModel};
use crate::posterior::{fit, Chain, ChainConfig, Priors};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSettings {
    pub m: usize,
    pub smoothness: Smoothness,
    pub ordering: OrderingScheme,
    pub stencil: StencilRule,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self { m: 10, smoothness: Smoothness::Matern52, ordering: OrderingScheme::CoordinateSum, stencil: StencilRule::Nearest }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Engine {
    #[default]
    Fast,
    Reference,
}

impl std::str::FromStr for Engine {
    type Err = NndpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Self::Fast),
            "reference" | "full" => Ok(Self::Reference),
            other => Err(NndpError::InvalidConfig(format!("unknown engine '{other}'"))),
        }
    }
}

/// A fitted chain together with the geometry it was fitted on.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub reference: Arc<ReferenceSet>,
    pub graph: Arc<NeighborGraph>,
    pub chain: Chain,
    /// The model at the posterior-median parameters.
    pub model: VecchiaModel,
}

/// Orders the data, builds the graph and runs the chain. `y` and the rows of
/// `x` follow the input order of `points`.
pub fn fit_model(
    points: &Points,
    y: &[f64],
    x: Option<&DMatrix<f64>>,
    settings: &ModelSettings,
    priors: &Priors,
    cfg: &ChainConfig,
) -> Result<FittedModel> {
    if y.len() != points.len() {
        return Err(NndpError::LengthMismatch { what: "response", expected: points.len(), found: y.len() });
    }
    let reference = Arc::new(order_reference(points, settings.ordering)?);
    let graph = Arc::new(build_graph(&reference, settings.m, settings.stencil)?);
    let perm = reference.permutation();
    let y_ord: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let x_ord = x.map(|x| DMatrix::from_fn(x.nrows(), x.ncols(), |r, c| x[(perm[r], c)]));
    let chain = fit(&y_ord, x_ord.as_ref(), &reference, &graph, settings.smoothness, priors, cfg)?;
    let model = fit_factors(&reference, &graph, chain.median_kernel()?)?;
    Ok(FittedModel { reference, graph, chain, model })
}

impl FittedModel {
    /// Restores a fit from stored draws, as read back from a chain file.
    pub fn from_chain(points: &Points, settings: &ModelSettings, chain: Chain) -> Result<Self> {
        let reference = Arc::new(order_reference(points, settings.ordering)?);
        let graph = Arc::new(build_graph(&reference, settings.m, settings.stencil)?);
        let model = fit_factors(&reference, &graph, chain.median_kernel()?)?;
        Ok(FittedModel { reference, graph, chain, model })
    }

    pub fn gradients(&self, query: &GradientQuery, opts: &SamplingOptions, engine: Engine) -> Result<GradientField> {
        match engine {
            Engine::Fast => sample_gradient_fast(&self.chain.draws, query, &self.model, opts),
            Engine::Reference => sample_gradient_reference(&self.chain.draws, query, &self.model, opts),
        }
    }

    pub fn finite_differences(
        &self,
        targets: &Points,
        directions: &[Direction],
        cfg: &FdConfig,
        opts: &SamplingOptions,
    ) -> Result<FdResult> {
        fd_gradient(&self.chain.draws, targets, directions, &self.model, cfg, opts)
    }

    /// Posterior-median kernel of the chain.
    pub fn median_kernel(&self) -> KernelParams {
        *self.model.kernel()
    }
}

/// Exact-GP gradients at the posterior-median parameters of `fitted`. Latent
/// values are the posterior mean of the chain (equal to `y` without noise).
pub fn exact_from_fit(
    fitted: &FittedModel,
    targets: &Points,
    directions: &[Direction],
    cap: usize,
) -> Result<GradientField> {
    let k = fitted.reference.len();
    if k > cap {
        return Err(NndpError::CapExceeded { n: k, cap });
    }
    let mut mean = vec![0.0; k];
    for d in &fitted.chain.draws {
        for (m, w) in mean.iter_mut().zip(d.latent.iter()) {
            *m += w;
        }
    }
    let r = fitted.chain.draws.len() as f64;
    mean.iter_mut().for_each(|m| *m /= r);
    exact_gradient_posterior(&mean, fitted.reference.points(), &fitted.median_kernel(), targets, directions, cap)
}
