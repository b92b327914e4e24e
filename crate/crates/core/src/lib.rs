//! Scalable Bayesian inference for spatial gradients with the
//! nearest-neighbor derivative process.
//!
//! A nearest-neighbor Gaussian process (NNGP) replaces the dense covariance
//! of a spatial field by per-site regressions on a few neighbors. Its
//! mean-square directional derivative is again a Gaussian process whose
//! cross-covariances with the field have closed forms, so gradients can be
//! sampled jointly with the field at `O(n m^3)` cost.
//!
//! Typical use:
//!
//! ```no_run
//! use nndp::prelude::*;
//!
//! let data = generate(&PatternSpec { pattern: Pattern::Sinusoid, sampling: Sampling::Grid { mesh: 0.05 }, seed: 1 })?;
//! let fitted = fit_model(&data.points, &data.values, None, &ModelSettings::default(), &Priors::default(), &ChainConfig::default())?;
//! let query = GradientQuery::canonical(data.points.clone());
//! let field = fitted.gradients(&query, &SamplingOptions::default(), Engine::Fast)?;
//! println!("cor e1 = {}", correlation(&field.direction_estimates(0), &data.axis_truth(0))?);
//! # Ok::<(), nndp::NndpError>(())
//! ```
//!
//! Module map: [`kernel`] covariance functions and derivatives, [`neighbors`]
//! ordering and neighbor search, [`nngp`] Vecchia factors and the implied
//! covariance, [`posterior`] the MCMC sampler, [`nndp`] gradient laws and
//! samplers, [`baselines`] exact-GP and finite-difference estimators,
//! [`simulation`] synthetic surfaces, [`pipeline`] end-to-end runs and [`io`]
//! file formats.

pub mod error;
pub mod kernel;
pub mod linalg;
pub mod neighbors;
pub mod nngp;
pub mod posterior;
pub mod nndp;
pub mod baselines;
pub mod simulation;
pub mod pipeline;
pub mod io;

pub use error::{NndpError, Result};

/// The types needed for a typical fit-then-differentiate run.
pub mod prelude {
    pub use crate::baselines::{exact_gradient_posterior, fd_gradient, FdConfig, FdMode, FdResult};
    pub use crate::error::{NndpError, Result};
    pub use crate::kernel::{Direction, KernelParams, Smoothness};
    pub use crate::neighbors::{DegeneracyPolicy, OrderingScheme, Points, StencilRule};
    pub use crate::nndp::{gradient_magnitude, GradientField, GradientQuery, SamplingOptions};
    pub use crate::nngp::VecchiaModel;
    pub use crate::pipeline::{exact_from_fit, fit_model, Engine, FittedModel, ModelSettings};
    pub use crate::posterior::{Chain, ChainConfig, Mode, Priors};
    pub use crate::simulation::{correlation, generate, mse, Dataset, Pattern, PatternSpec, Sampling};
}
