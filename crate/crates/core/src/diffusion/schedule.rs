//! Noise schedule and the forward (noising) process.

use super::DiffusionError;
use crate::mat::{Mat, Scalar};

/// Linear beta schedule with precomputed cumulative products. Timesteps are
/// 1-based: `t = 1..=len()`, and `alpha_bar(0) == 1` by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_T: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("steps must be >= 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "require 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let mut betas = Vec::with_capacity(steps);
        for i in 0..steps {
            let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
            betas.push(beta_start + (beta_end - beta_start) * frac);
        }
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut prod = 1.0f64;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    /// The production schedule: 1000 steps, beta from 1e-4 to 2e-2.
    pub fn default_linear() -> Self {
        Self::linear(DEFAULT_T, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("valid constants")
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn check(&self, t: usize) -> Result<(), DiffusionError> {
        if t == 0 || t > self.len() {
            return Err(DiffusionError::TimestepOutOfRange { t, max: self.len() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.check(t).expect("timestep in range");
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    /// Cumulative product of alphas up to `t`; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            return 1.0;
        }
        self.check(t).expect("timestep in range");
        self.alpha_bars[t - 1]
    }
}

/// Forward process: `x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`.
pub fn q_sample<F: Scalar>(
    x0: &Mat<F>,
    t: usize,
    eps: &Mat<F>,
    schedule: &NoiseSchedule,
) -> Result<Mat<F>, DiffusionError> {
    schedule.check(t)?;
    if (x0.rows(), x0.cols()) != (eps.rows(), eps.cols()) {
        return Err(DiffusionError::ShapeMismatch {
            expected: format!("{}x{}", x0.rows(), x0.cols()),
            got: format!("{}x{}", eps.rows(), eps.cols()),
        });
    }
    let ab = schedule.alpha_bar(t);
    let a = F::of(ab.sqrt());
    let b = F::of((1.0 - ab).sqrt());
    let mut out = x0.map(|v| v * a);
    out.scaled_add(b, eps);
    Ok(out)
}
