//! Comparison methods: the exact joint GP and forward finite differences.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{NndpError, Result};
use crate::kernel::{Direction, KernelParams};
use crate::linalg::cholesky_with_jitter;
use crate::neighbors::{DegeneracyPolicy, Location, Points};
use crate::nndp::{check_draws, streams, ConditionalLaw, GradientField, SamplingOptions};
use crate::nngp::{krige_weights, NewSite, VecchiaModel};
use crate::posterior::PosteriorDraw;

/// Largest problem the exact baseline accepts by default.
pub const DEFAULT_EXACT_CAP: usize = 2000;

/// Offset mixed into the seed so finite-difference streams differ from the
/// gradient sampler's.
const FD_STREAM: u64 = 0xFD00_FD00_FD00_FD00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FdMode {
    /// Each draw samples the surface at `s + h u` from its kriging law.
    #[default]
    Sampled,
    /// Each draw uses the kriging mean at `s + h u`.
    PosteriorMean,
}

impl std::str::FromStr for FdMode {
    type Err = NndpError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "mean" | "posterior-mean" => Ok(Self::PosteriorMean),
            other => Err(NndpError::InvalidConfig(format!("unknown finite-difference mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdConfig {
    /// Step as a multiple of the minimal separation: `h = scale * iota`.
    pub scale: f64,
    pub mode: FdMode,
    /// Applied to step points that land on the equidistance set.
    pub policy: DegeneracyPolicy,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self { scale: 1.0, mode: FdMode::Sampled, policy: DegeneracyPolicy::Perturb }
    }
}

impl FdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(NndpError::InvalidConfig(format!("finite-difference scale must be positive, got {}", self.scale)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdResult {
    pub field: GradientField,
    pub step: f64,
    /// Per target and direction: the step point left the bounding box.
    pub extrapolated: Vec<bool>,
}

/// `(f(s + h u) - f(s)) / h`.
pub fn finite_difference(f: impl Fn(&[f64]) -> f64, s: &[f64], u: &Direction, h: f64) -> f64 {
    let moved: Vec<f64> = s.iter().zip(u.as_slice()).map(|(x, d)| x + h * d).collect();
    (f(&moved) - f(s)) / h
}

/// The surface at one evaluation point, re-weighted whenever `phi` changes.
struct Probe {
    point: Vec<f64>,
    location: Location,
    cached: Option<(u64, NewSite)>,
}

impl Probe {
    fn value<R: Rng>(&mut self, model: &VecchiaModel, draw: &PosteriorDraw, mode: FdMode, rng: &mut R) -> Result<f64> {
        let closest = match self.location {
            Location::Reference(j) => return Ok(draw.latent[j]),
            Location::Off { closest } => closest,
        };
        if self.cached.as_ref().is_none_or(|c| c.0 != draw.phi.to_bits()) {
            let kernel = KernelParams::new(1.0, draw.phi, model.kernel().smoothness)?;
            let site = krige_weights(&kernel, model.reference(), model.graph(), &self.point, closest)?;
            self.cached = Some((draw.phi.to_bits(), site));
        }
        let site = &self.cached.as_ref().expect("site cached").1;
        let mean: f64 = site.set.iter().zip(&site.weights).map(|(&j, b)| b * draw.latent[j]).sum();
        Ok(match mode {
            FdMode::PosteriorMean => mean,
            FdMode::Sampled => {
                let z: f64 = rng.sample(StandardNormal);
                mean + (draw.sigma2 * site.fvar.max(0.0)).sqrt() * z
            }
        })
    }
}

/// Forward-difference gradient estimates from the NNGP surface, one per draw,
/// summarized by batch medians.
pub fn fd_gradient(
    draws: &[PosteriorDraw],
    targets: &Points,
    directions: &[Direction],
    model: &VecchiaModel,
    cfg: &FdConfig,
    opts: &SamplingOptions,
) -> Result<FdResult> {
    cfg.validate()?;
    check_draws(draws, model.len())?;
    if directions.is_empty() {
        return Err(NndpError::Empty("direction list"));
    }
    let reference = model.reference();
    let dim = reference.dim();
    if targets.dim() != dim {
        return Err(NndpError::DimensionMismatch { expected: dim, found: targets.dim() });
    }
    let h = cfg.scale * reference.scale();
    let (lo, hi) = reference.bounding_box();
    let nd = directions.len();
    let seed = opts.seed ^ FD_STREAM;
    type TargetOut = (Vec<f64>, Vec<Vec<f64>>, Vec<bool>, usize);
    let results: Vec<TargetOut> = (0..targets.len())
        .into_par_iter()
        .map(|t| {
            let (s, loc, mut moved) = reference.locate_quiet(targets.point(t), cfg.policy).map(|(p, l, m)| (p, l, m as usize))?;
            let mut base = Probe { point: s.clone(), location: loc, cached: None };
            let mut rngs = streams(seed, t, nd + 1);
            let mut probes = Vec::with_capacity(nd);
            let mut outside = Vec::with_capacity(nd);
            for u in directions {
                let p: Vec<f64> = s.iter().zip(u.as_slice()).map(|(x, d)| x + h * d).collect();
                outside.push(p.iter().zip(lo.iter().zip(&hi)).any(|(x, (l, hh))| x < l || x > hh));
                let (p, l, m) = reference.locate_quiet(&p, cfg.policy)?;
                moved += m as usize;
                probes.push(Probe { point: p, location: l, cached: None });
            }
            let mut out = vec![Vec::with_capacity(draws.len()); nd];
            for draw in draws {
                let (base_rng, dir_rngs) = rngs.split_last_mut().expect("one stream per direction plus base");
                let f0 = base.value(model, draw, cfg.mode, base_rng)?;
                for (d, probe) in probes.iter_mut().enumerate() {
                    let f1 = probe.value(model, draw, cfg.mode, &mut dir_rngs[d])?;
                    out[d].push((f1 - f0) / h);
                }
            }
            Ok((s, out, outside, moved))
        })
        .collect::<Result<_>>()?;
    let mut points = Vec::with_capacity(results.len());
    let mut per_target = Vec::with_capacity(results.len());
    let mut extrapolated = Vec::with_capacity(results.len() * nd);
    let mut moved = 0;
    for (p, o, e, m) in results {
        points.push(p);
        per_target.push(o);
        extrapolated.extend(e);
        moved += m;
    }
    let n_out = extrapolated.iter().filter(|&&e| e).count();
    if n_out > 0 {
        warn!("{n_out} finite-difference step points lie outside the data bounding box");
    }
    if moved > 0 {
        warn!("{moved} finite-difference evaluation points were equidistant to two sites and were perturbed");
    }
    let field = GradientField::assemble(points, directions.to_vec(), per_target, opts)?;
    Ok(FdResult { field, step: h, extrapolated })
}

struct DenseSystem {
    l: DMatrix<f64>,
    alpha: DVector<f64>,
    /// `D C(t, S)`, rows target-major.
    k: DMatrix<f64>,
}

fn dense_system(
    y: &[f64],
    locations: &Points,
    kernel: &KernelParams,
    targets: &Points,
    dirs: &[Direction],
    cap: usize,
) -> Result<DenseSystem> {
    kernel.require_differentiable()?;
    let n = locations.len();
    if n > cap {
        return Err(NndpError::CapExceeded { n, cap });
    }
    if n == 0 {
        return Err(NndpError::Empty("observations"));
    }
    if y.len() != n {
        return Err(NndpError::LengthMismatch { what: "response", expected: n, found: y.len() });
    }
    let dim = locations.dim();
    if targets.dim() != dim {
        return Err(NndpError::DimensionMismatch { expected: dim, found: targets.dim() });
    }
    for d in dirs {
        if d.dim() != dim {
            return Err(NndpError::DimensionMismatch { expected: dim, found: d.dim() });
        }
    }
    let c = DMatrix::from_fn(n, n, |i, j| kernel.cov_unchecked(locations.point(i), locations.point(j)));
    let chol = cholesky_with_jitter(&c, kernel.sigma2)
        .map_err(|j| NndpError::NotPositiveDefinite(format!("dense covariance of {n} locations after jitter {j:.3e}")))?;
    let alpha = chol.solve(&DVector::from_column_slice(y));
    let nd = dirs.len();
    let k = DMatrix::from_fn(targets.len() * nd, n, |r, j| {
        kernel.d_cov_unchecked(dirs[r % nd].as_slice(), targets.point(r / nd), locations.point(j))
    });
    Ok(DenseSystem { l: chol.l(), alpha, k })
}

/// Exact conditional law of gradients at `targets` given noise-free values
/// `y` at `locations`, with the full covariance.
pub fn exact_conditional_law(
    y: &[f64],
    locations: &Points,
    kernel: &KernelParams,
    targets: &Points,
    dirs: &[Direction],
    cap: usize,
) -> Result<ConditionalLaw> {
    let sys = dense_system(y, locations, kernel, targets, dirs, cap)?;
    let nd = dirs.len();
    let rows = targets.len() * nd;
    let v = sys.l.solve_lower_triangular(&sys.k.transpose()).expect("triangular factor is nonsingular");
    let reduce = v.transpose() * &v;
    let cov = DMatrix::from_fn(rows, rows, |r, c| {
        kernel.d2_cov_unchecked(dirs[r % nd].as_slice(), dirs[c % nd].as_slice(), targets.point(r / nd), targets.point(c / nd))
            - reduce[(r, c)]
    });
    let mean = (&sys.k * &sys.alpha).as_slice().to_vec();
    Ok(ConditionalLaw { mean, cov })
}

/// Exact-GP gradient posterior mean and sd at fixed kernel parameters.
/// The returned field has `n_samples = 0`.
pub fn exact_gradient_posterior(
    y: &[f64],
    locations: &Points,
    kernel: &KernelParams,
    targets: &Points,
    dirs: &[Direction],
    cap: usize,
) -> Result<GradientField> {
    let sys = dense_system(y, locations, kernel, targets, dirs, cap)?;
    let nd = dirs.len();
    let v = sys.l.solve_lower_triangular(&sys.k.transpose()).expect("triangular factor is nonsingular");
    let mean = &sys.k * &sys.alpha;
    let sd: Vec<f64> = (0..targets.len() * nd)
        .map(|r| {
            let p = targets.point(r / nd);
            let u = dirs[r % nd].as_slice();
            (kernel.d2_cov_unchecked(u, u, p, p) - v.column(r).norm_squared()).max(0.0).sqrt()
        })
        .collect();
    Ok(GradientField {
        points: targets.iter().map(|p| p.to_vec()).collect(),
        directions: dirs.to_vec(),
        estimate: mean.as_slice().to_vec(),
        sd,
        n_samples: vec![0; targets.len() * nd],
        samples: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neighbors::{build_graph, order_reference, OrderingScheme, StencilRule};
    use crate::nngp::fit_factors;
    use std::sync::Arc;

    #[test]
    fn affine_surface_is_exact() {
        let a = [2.5, -1.25];
        let f = |s: &[f64]| 0.7 + a[0] * s[0] + a[1] * s[1];
        let u = Direction::new(vec![0.6, 0.8]).unwrap();
        for h in [1e-3, 0.1, 5.0] {
            let g = finite_difference(f, &[0.3, 0.9], &u, h);
            assert!((g - (0.6 * a[0] + 0.8 * a[1])).abs() < 1e-9, "h={h} {g}");
        }
    }

    #[test]
    fn invalid_scale() {
        assert!(FdConfig { scale: 0.0, ..FdConfig::default() }.validate().is_err());
        assert!(FdConfig { scale: f64::NAN, ..FdConfig::default() }.validate().is_err());
    }

    #[test]
    fn single_observation_at_target() {
        let loc = Points::new(2, vec![0.4, 0.6]).unwrap();
        let k = KernelParams::rbf(1.0, 2.0).unwrap();
        let f = exact_gradient_posterior(&[3.7], &loc, &k, &loc, &Direction::canonical(2), DEFAULT_EXACT_CAP).unwrap();
        assert!(f.estimate.iter().all(|e| e.abs() < 1e-15));
        assert!((f.sd[0] - 2.0f64.sqrt() * 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cap_enforced() {
        let loc = Points::new(1, (0..11).map(f64::from).collect()).unwrap();
        let k = KernelParams::matern52(1.0, 1.0).unwrap();
        let r = exact_gradient_posterior(&[0.0; 11], &loc, &k, &loc, &Direction::canonical(1), 10);
        assert!(matches!(r, Err(NndpError::CapExceeded { n: 11, cap: 10 })));
    }

    #[test]
    fn diagonal_matches_full_law() {
        let loc = Points::new(2, vec![0.0, 0.0, 0.3, 0.1, 0.7, 0.5, 0.2, 0.9, 1.0, 1.0]).unwrap();
        let y = [0.1, -0.5, 0.8, 0.3, 1.2];
        let k = KernelParams::matern52(1.5, 2.0).unwrap();
        let t = Points::new(2, vec![0.5, 0.5, 0.3, 0.1]).unwrap();
        let d = Direction::canonical(2);
        let f = exact_gradient_posterior(&y, &loc, &k, &t, &d, 100).unwrap();
        let law = exact_conditional_law(&y, &loc, &k, &t, &d, 100).unwrap();
        for r in 0..4 {
            assert!((f.estimate[r] - law.mean[r]).abs() < 1e-12);
            assert!((f.sd[r] - law.cov[(r, r)].max(0.0).sqrt()).abs() < 1e-7);
        }
    }

    fn grid_model(side: usize, phi: f64) -> (VecchiaModel, Vec<f64>) {
        let mut c = Vec::new();
        for i in 0..side {
            for j in 0..side {
                c.push(i as f64 / (side - 1) as f64);
                c.push(j as f64 / (side - 1) as f64);
            }
        }
        let r = Arc::new(order_reference(&Points::new(2, c).unwrap(), OrderingScheme::CoordinateSum).unwrap());
        let g = Arc::new(build_graph(&r, 10, StencilRule::Nearest).unwrap());
        let m = fit_factors(&r, &g, KernelParams::matern52(1.0, phi).unwrap()).unwrap();
        let w: Vec<f64> = (0..r.len()).map(|i| 2.0 * r.point(i)[0] - r.point(i)[1]).collect();
        (m, w)
    }

    #[test]
    fn unit_step_on_grid_is_exact_difference() {
        let (m, w) = grid_model(11, 3.0);
        let draw = PosteriorDraw { iteration: 0, beta: vec![], sigma2: 1.0, phi: 3.0, tau2: None, latent: Arc::new(w) };
        let targets = m.reference().points().subset(&[0, 5, 17]);
        let cfg = FdConfig { scale: 1.0, ..FdConfig::default() };
        let r = fd_gradient(&[draw], &targets, &Direction::canonical(2), &m, &cfg, &SamplingOptions::default()).unwrap();
        for t in 0..3 {
            let p = &r.field.points[t];
            if p[0] < 0.95 && p[1] < 0.95 {
                assert!((r.field.estimate(t, 0) - 2.0).abs() < 1e-9);
                assert!((r.field.estimate(t, 1) + 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn extrapolation_flagged() {
        let (m, w) = grid_model(6, 3.0);
        let draw = PosteriorDraw { iteration: 0, beta: vec![], sigma2: 1.0, phi: 3.0, tau2: None, latent: Arc::new(w) };
        let top = (0..m.len()).find(|&i| m.reference().point(i) == [1.0, 1.0]).unwrap();
        let targets = m.reference().points().subset(&[0, top]);
        let cfg = FdConfig { scale: 0.5, mode: FdMode::PosteriorMean, ..FdConfig::default() };
        let r = fd_gradient(&[draw], &targets, &Direction::canonical(2), &m, &cfg, &SamplingOptions::default()).unwrap();
        assert_eq!(r.extrapolated, vec![false, false, true, true]);
    }

    #[test]
    fn mean_mode_is_deterministic_and_sampled_mode_reproducible() {
        let (m, w) = grid_model(8, 3.0);
        let draws: Vec<_> = (0..6)
            .map(|i| PosteriorDraw { iteration: i, beta: vec![], sigma2: 1.0, phi: 3.0 + i as f64, tau2: None, latent: Arc::new(w.clone()) })
            .collect();
        let targets = Points::new(2, vec![0.33, 0.41, 0.5, 0.52]).unwrap();
        let dirs = Direction::canonical(2);
        let opts = SamplingOptions { batch: 3, seed: 4, keep_samples: false };
        for mode in [FdMode::PosteriorMean, FdMode::Sampled] {
            let cfg = FdConfig { scale: 0.3, mode, ..FdConfig::default() };
            let a = fd_gradient(&draws, &targets, &dirs, &m, &cfg, &opts).unwrap();
            let b = fd_gradient(&draws, &targets, &dirs, &m, &cfg, &opts).unwrap();
            assert_eq!(a, b);
        }
    }
}
