//! Small dense solves with the jitter escalation shared by every module.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// First jitter tried, relative to the kernel variance.
pub const JITTER_START: f64 = 1e-10;
/// Largest jitter tried before a system is declared singular.
pub const JITTER_MAX: f64 = 1e-6;

/// Cholesky factor together with the absolute jitter that was needed.
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    pub factor: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl JitteredCholesky {
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(b)
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.factor.l()
    }
}

/// Tries a plain factorization, then adds `scale * 1e-10` to the diagonal and
/// multiplies by ten up to `scale * 1e-6`. Returns the largest jitter tried on
/// failure.
pub fn cholesky_with_jitter(mat: &DMatrix<f64>, scale: f64) -> Result<JitteredCholesky, f64> {
    if let Some(factor) = Cholesky::new(mat.clone()) {
        return Ok(JitteredCholesky { factor, jitter: 0.0 });
    }
    let mut rel = JITTER_START;
    let mut last = 0.0;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * scale;
        let mut m = mat.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(factor) = Cholesky::new(m) {
            return Ok(JitteredCholesky { factor, jitter });
        }
        last = jitter;
        rel *= 10.0;
    }
    Err(last)
}

/// Solves `L x = b` for lower-triangular `L` in place.
pub fn forward_substitute(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}
