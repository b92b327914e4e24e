//! Synthetic surfaces with known gradients, and accuracy metrics.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NndpError, Result};
use crate::neighbors::Points;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    /// `10 (sin(3 pi s1) + cos(3 pi s2))` on the plane.
    Sinusoid,
    /// `sin(100 (s1 - 0.5)^2)`, a function of the first coordinate.
    Chirp,
}

impl Pattern {
    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            1 => Ok(Self::Sinusoid),
            2 => Ok(Self::Chirp),
            other => Err(NndpError::InvalidConfig(format!("unknown pattern {other}; expected 1 or 2"))),
        }
    }

    pub fn id(self) -> u8 {
        match self {
            Self::Sinusoid => 1,
            Self::Chirp => 2,
        }
    }

    /// Dimension of the default grid.
    pub fn natural_dim(self) -> usize {
        match self {
            Self::Sinusoid => 2,
            Self::Chirp => 1,
        }
    }

    pub fn value(self, s: &[f64]) -> f64 {
        match self {
            Self::Sinusoid => 10.0 * ((3.0 * PI * s[0]).sin() + (3.0 * PI * s[1]).cos()),
            Self::Chirp => (100.0 * (s[0] - 0.5).powi(2)).sin(),
        }
    }

    pub fn gradient(self, s: &[f64]) -> Vec<f64> {
        match self {
            Self::Sinusoid => vec![30.0 * PI * (3.0 * PI * s[0]).cos(), -30.0 * PI * (3.0 * PI * s[1]).sin()],
            Self::Chirp => {
                let x = s[0] - 0.5;
                let mut g = vec![0.0; s.len()];
                g[0] = 200.0 * (100.0 * x * x).cos() * x;
                g
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sampling {
    /// Regular grid on the unit cube of the pattern's natural dimension.
    Grid { mesh: f64 },
    /// Independent uniform coordinates on per-axis ranges.
    Uniform { n: usize, ranges: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternSpec {
    pub pattern: Pattern,
    pub sampling: Sampling,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub points: Points,
    pub values: Vec<f64>,
    /// True gradient per point, one entry per coordinate.
    pub gradients: Vec<Vec<f64>>,
}

impl Dataset {
    /// True gradients along axis `a`.
    pub fn axis_truth(&self, a: usize) -> Vec<f64> {
        self.gradients.iter().map(|g| g[a]).collect()
    }
}

fn grid_axis(mesh: f64) -> Result<Vec<f64>> {
    if !(mesh > 0.0 && mesh <= 1.0) {
        return Err(NndpError::InvalidConfig(format!("grid mesh must lie in (0, 1], got {mesh}")));
    }
    let steps = 1.0 / mesh;
    let n = if (steps - steps.round()).abs() < 1e-9 { steps.round() as usize } else { steps.floor() as usize };
    Ok((0..=n).map(|i| i as f64 * mesh).collect())
}

pub fn generate(spec: &PatternSpec) -> Result<Dataset> {
    let (dim, coords) = match &spec.sampling {
        Sampling::Grid { mesh } => {
            let axis = grid_axis(*mesh)?;
            match spec.pattern.natural_dim() {
                1 => (1, axis),
                _ => {
                    let mut c = Vec::with_capacity(2 * axis.len() * axis.len());
                    for &x in &axis {
                        for &y in &axis {
                            c.push(x);
                            c.push(y);
                        }
                    }
                    (2, c)
                }
            }
        }
        Sampling::Uniform { n, ranges } => {
            if *n == 0 {
                return Err(NndpError::InvalidConfig("uniform sample size must be positive".into()));
            }
            if ranges.len() < spec.pattern.natural_dim() {
                return Err(NndpError::InvalidConfig(format!(
                    "pattern {} needs {} coordinate ranges",
                    spec.pattern.id(),
                    spec.pattern.natural_dim()
                )));
            }
            if ranges.iter().any(|(a, b)| !(a < b)) {
                return Err(NndpError::InvalidConfig("each range must satisfy lower < upper".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            let mut c = Vec::with_capacity(n * ranges.len());
            for _ in 0..*n {
                for &(a, b) in ranges {
                    c.push(rng.random_range(a..b));
                }
            }
            (ranges.len(), c)
        }
    };
    let points = Points::new(dim, coords)?;
    let values = points.iter().map(|p| spec.pattern.value(p)).collect();
    let gradients = points.iter().map(|p| spec.pattern.gradient(p)).collect();
    Ok(Dataset { points, values, gradients })
}

fn check_pair(est: &[f64], truth: &[f64]) -> Result<()> {
    if est.len() != truth.len() {
        return Err(NndpError::LengthMismatch { what: "metric inputs", expected: truth.len(), found: est.len() });
    }
    if est.len() < 2 {
        return Err(NndpError::InvalidParameter("metrics need at least two values".into()));
    }
    Ok(())
}

/// Pearson correlation.
pub fn correlation(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(est, truth)?;
    let n = est.len() as f64;
    let (me, mt) = (est.iter().sum::<f64>() / n, truth.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in est.iter().zip(truth) {
        sxy += (x - me) * (y - mt);
        sxx += (x - me).powi(2);
        syy += (y - mt).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(NndpError::ZeroVariance);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn mse(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(est, truth)?;
    Ok(est.iter().zip(truth).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / est.len() as f64)
}
