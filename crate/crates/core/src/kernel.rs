//! Isotropic covariance functions and their directional derivatives.
//!
//! Every kernel here is a function of the distance `r = |x - y|` only. Writing
//! `K(r)` for the radial profile, the derivatives used by the gradient engine
//! reduce to two radial helpers:
//!
//! ```text
//! psi1(r) = K'(r) / r
//! psi2(r) = psi1'(r) / r
//! ```
//!
//! so that with `delta = x - y`
//!
//! ```text
//! d_cov(u, x, y)      = psi1 * <u, delta>                       = Cov(D_u w(x), w(y))
//! d2_cov(u, v, x, y)  = -(psi1 * <u, v> + psi2 * <u, delta><v, delta>)
//!                     = Cov(D_u w(x), D_v w(y))
//! ```
//!
//! `d2_cov` is the mixed partial with respect to both arguments, which is the
//! covariance of the derivative process and is positive on the diagonal.
//!
//! Matérn closed forms use the scaled distance `a = sqrt(2 nu) * phi * r`, so
//! Matérn-5/2 reads `sigma2 * (1 + a + a^2/3) * exp(-a)` with `a = sqrt(5) phi r`.
//! In terms of the `alpha` of the usual `(alpha r)^nu K_nu(alpha r)` form,
//! `alpha = sqrt(2 nu) * phi`. The normalization is the standard
//! `2^(1-nu) / Gamma(nu)` one, so `cov(x, x) == sigma2`; fitted `sigma2` is the
//! marginal variance. The RBF kernel is `sigma2 * exp(-phi * r^2)`, i.e. `phi`
//! plays the role of the squared-exponential rate `alpha`.

use std::fmt;

use crate::error::{NndpError, Result};

/// Smoothness class of the covariance function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Smoothness {
    /// Matérn with `nu = 1/2` (exponential). Continuous but not mean-square
    /// differentiable; only `cov` is available.
    Matern12,
    /// Matérn with `nu = 3/2`: once mean-square differentiable.
    Matern32,
    /// Matérn with `nu = 5/2`: twice mean-square differentiable.
    Matern52,
    /// Squared exponential.
    Rbf,
}

impl Smoothness {
    /// Map a Matérn smoothness index to a supported closed form.
    pub fn from_nu(nu: f64) -> Result<Self> {
        const EPS: f64 = 1e-12;
        if (nu - 0.5).abs() < EPS {
            Ok(Smoothness::Matern12)
        } else if (nu - 1.5).abs() < EPS {
            Ok(Smoothness::Matern32)
        } else if (nu - 2.5).abs() < EPS {
            Ok(Smoothness::Matern52)
        } else {
            Err(NndpError::UnsupportedSmoothness(nu))
        }
    }

    /// The Matérn index, `None` for RBF.
    pub fn nu(self) -> Option<f64> {
        match self {
            Smoothness::Matern12 => Some(0.5),
            Smoothness::Matern32 => Some(1.5),
            Smoothness::Matern52 => Some(2.5),
            Smoothness::Rbf => None,
        }
    }

    pub fn is_differentiable(self) -> bool {
        !matches!(self, Smoothness::Matern12)
    }

    pub fn name(self) -> &'static str {
        match self {
            Smoothness::Matern12 => "matern12",
            Smoothness::Matern32 => "matern32",
            Smoothness::Matern52 => "matern52",
            Smoothness::Rbf => "rbf",
        }
    }
}

impl fmt::Display for Smoothness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Smoothness {
    type Err = NndpError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "matern12" | "exponential" | "0.5" => Ok(Smoothness::Matern12),
            "matern32" | "1.5" => Ok(Smoothness::Matern32),
            "matern52" | "2.5" => Ok(Smoothness::Matern52),
            "rbf" | "gaussian" | "squared-exponential" => Ok(Smoothness::Rbf),
            other => Err(NndpError::InvalidConfig(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Covariance parameters: marginal variance, decay and smoothness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma2: f64,
    pub phi: f64,
    pub smoothness: Smoothness,
}

impl KernelParams {
    pub fn new(sigma2: f64, phi: f64, smoothness: Smoothness) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(NndpError::InvalidParameter(format!("sigma2 must be positive, got {sigma2}")));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(NndpError::InvalidParameter(format!("phi must be positive, got {phi}")));
        }
        Ok(Self { sigma2, phi, smoothness })
    }

    pub fn matern52(sigma2: f64, phi: f64) -> Result<Self> {
        Self::new(sigma2, phi, Smoothness::Matern52)
    }

    pub fn rbf(sigma2: f64, alpha: f64) -> Result<Self> {
        Self::new(sigma2, alpha, Smoothness::Rbf)
    }

    /// Same decay and smoothness with a different variance.
    pub fn with_sigma2(self, sigma2: f64) -> Self {
        Self { sigma2, ..self }
    }

    /// Covariance between two locations.
    pub fn cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        Ok(self.cov_unchecked(x, y))
    }

    /// `Cov(D_u w(x), w(y))`: derivative along `u` in the first argument.
    pub fn d_cov(&self, u: &Direction, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        check_dims(u.as_slice(), x)?;
        self.require_differentiable()?;
        Ok(self.d_cov_unchecked(u.as_slice(), x, y))
    }

    /// `Cov(D_u w(x), D_u w(y))`.
    pub fn d2_cov(&self, u: &Direction, x: &[f64], y: &[f64]) -> Result<f64> {
        self.d2_cov_pair(u, u, x, y)
    }

    /// `Cov(D_u w(x), D_v w(y))` for two directions.
    pub fn d2_cov_pair(&self, u: &Direction, v: &Direction, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dims(x, y)?;
        check_dims(u.as_slice(), x)?;
        check_dims(v.as_slice(), x)?;
        self.require_differentiable()?;
        Ok(self.d2_cov_unchecked(u.as_slice(), v.as_slice(), x, y))
    }

    pub(crate) fn require_differentiable(&self) -> Result<()> {
        if self.smoothness.is_differentiable() {
            Ok(())
        } else {
            Err(NndpError::NotDifferentiable(self.smoothness))
        }
    }

    #[inline]
    pub(crate) fn cov_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let r = dist(x, y);
        self.radial(r)
    }

    #[inline]
    pub(crate) fn d_cov_unchecked(&self, u: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let mut r2 = 0.0;
        let mut ud = 0.0;
        for ((&xi, &yi), &ui) in x.iter().zip(y).zip(u) {
            let d = xi - yi;
            r2 += d * d;
            ud += ui * d;
        }
        self.psi1(r2.sqrt()) * ud
    }

    #[inline]
    pub(crate) fn d2_cov_unchecked(&self, u: &[f64], v: &[f64], x: &[f64], y: &[f64]) -> f64 {
        let mut r2 = 0.0;
        let mut ud = 0.0;
        let mut vd = 0.0;
        let mut uv = 0.0;
        for i in 0..x.len() {
            let d = x[i] - y[i];
            r2 += d * d;
            ud += u[i] * d;
            vd += v[i] * d;
            uv += u[i] * v[i];
        }
        let r = r2.sqrt();
        let cross = if ud == 0.0 || vd == 0.0 { 0.0 } else { self.psi2_times_r2(r) * ud * vd / r2 };
        -(self.psi1(r) * uv + cross)
    }

    /// Radial profile `K(r)`.
    #[inline]
    pub fn radial(&self, r: f64) -> f64 {
        let s2 = self.sigma2;
        match self.smoothness {
            Smoothness::Matern12 => s2 * (-self.phi * r).exp(),
            Smoothness::Matern32 => {
                let a = SQRT_3 * self.phi * r;
                s2 * (1.0 + a) * (-a).exp()
            }
            Smoothness::Matern52 => {
                let a = SQRT_5 * self.phi * r;
                s2 * (1.0 + a + a * a / 3.0) * (-a).exp()
            }
            Smoothness::Rbf => s2 * (-self.phi * r * r).exp(),
        }
    }

    /// `K'(r) / r`, finite at `r = 0` for differentiable kernels.
    #[inline]
    fn psi1(&self, r: f64) -> f64 {
        let s2 = self.sigma2;
        match self.smoothness {
            Smoothness::Matern12 => f64::NAN,
            Smoothness::Matern32 => {
                let c = SQRT_3 * self.phi;
                -s2 * c * c * (-c * r).exp()
            }
            Smoothness::Matern52 => {
                let c = SQRT_5 * self.phi;
                let a = c * r;
                -s2 * c * c * (1.0 + a) * (-a).exp() / 3.0
            }
            Smoothness::Rbf => -2.0 * self.phi * s2 * (-self.phi * r * r).exp(),
        }
    }

    /// `psi1'(r) * r`, which stays finite for Matérn-3/2 at the origin where
    /// `psi2` itself blows up like `1/r`.
    #[inline]
    fn psi2_times_r2(&self, r: f64) -> f64 {
        let s2 = self.sigma2;
        match self.smoothness {
            Smoothness::Matern12 => f64::NAN,
            Smoothness::Matern32 => {
                let c = SQRT_3 * self.phi;
                s2 * c * c * c * r * (-c * r).exp()
            }
            Smoothness::Matern52 => {
                let c = SQRT_5 * self.phi;
                s2 * c.powi(4) * r * r * (-c * r).exp() / 3.0
            }
            Smoothness::Rbf => 4.0 * self.phi * self.phi * s2 * r * r * (-self.phi * r * r).exp(),
        }
    }
}

const SQRT_3: f64 = 1.732_050_807_568_877_2;
const SQRT_5: f64 = 2.236_067_977_499_79;

/// Unit direction vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Direction(Vec<f64>);

impl Direction {
    /// Accepts vectors whose norm is one within `1e-12`.
    pub fn new(components: Vec<f64>) -> Result<Self> {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if components.is_empty() || (norm - 1.0).abs() > 1e-12 {
            return Err(NndpError::InvalidDirection(norm));
        }
        Ok(Self(components))
    }

    /// Normalizes an arbitrary nonzero vector.
    pub fn normalized(components: Vec<f64>) -> Result<Self> {
        let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(NndpError::InvalidDirection(norm));
        }
        Ok(Self(components.into_iter().map(|c| c / norm).collect()))
    }

    /// Canonical basis vector `e_{axis+1}` in `dim` dimensions.
    pub fn axis(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis {axis} out of range for dimension {dim}");
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Self(v)
    }

    pub fn canonical(dim: usize) -> Vec<Self> {
        (0..dim).map(|a| Self::axis(dim, a)).collect()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the basis vector this direction equals, if any.
    pub fn canonical_axis(&self) -> Option<usize> {
        let mut axis = None;
        for (i, &c) in self.0.iter().enumerate() {
            if c == 1.0 && axis.is_none() {
                axis = Some(i);
            } else if c != 0.0 {
                return None;
            }
        }
        axis
    }

    /// `e1`, `e2`, ... for basis vectors, otherwise the components joined by `:`.
    pub fn label(&self) -> String {
        match self.canonical_axis() {
            Some(a) => format!("e{}", a + 1),
            None => self.0.iter().map(|c| format!("{c}")).collect::<Vec<_>>().join(":"),
        }
    }

    /// Parses `e<k>` (1-based axis) or an `a:b[:c]` vector in dimension `dim`.
    pub fn parse(s: &str, dim: usize) -> Result<Self> {
        let t = s.trim();
        if let Some(k) = t.strip_prefix('e').or_else(|| t.strip_prefix('E')) {
            let k: usize = k.parse().map_err(|_| NndpError::InvalidConfig(format!("cannot parse direction '{s}'")))?;
            if k == 0 || k > dim {
                return Err(NndpError::InvalidConfig(format!("axis direction '{s}' outside dimension {dim}")));
            }
            return Ok(Self::axis(dim, k - 1));
        }
        let d: Self = t.parse()?;
        if d.dim() != dim {
            return Err(NndpError::DimensionMismatch { expected: dim, found: d.dim() });
        }
        Ok(d)
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }
}

impl std::str::FromStr for Direction {
    type Err = NndpError;

    /// Parses an explicit `a:b[:c]` vector and normalizes it.
    fn from_str(s: &str) -> Result<Self> {
        let comps: std::result::Result<Vec<f64>, _> = s.split(':').map(|c| c.trim().parse::<f64>()).collect();
        match comps {
            Ok(c) => Self::normalized(c),
            Err(_) => Err(NndpError::InvalidConfig(format!("cannot parse direction '{s}'"))),
        }
    }
}

#[inline]
pub(crate) fn dist2(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
pub(crate) fn dist(x: &[f64], y: &[f64]) -> f64 {
    dist2(x, y).sqrt()
}

fn check_dims(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        Err(NndpError::DimensionMismatch { expected: x.len(), found: y.len() })
    } else {
        Ok(())
    }
}
