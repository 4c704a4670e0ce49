//! Ancestral and deterministic fast sampling from a trained denoiser.

use super::model::{denoise_predict, ConditioningBundle, ModelParams};
use super::schedule::NoiseSchedule;
use super::DiffusionError;
use crate::mat::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Anything that can estimate the noise component of `x_t` at timestep `t`.
pub trait Denoiser {
    fn predict(&self, x_t: &Mat<f32>, t: usize) -> Result<Mat<f32>, DiffusionError>;
}

/// The trained model plus a frozen conditioning bundle.
pub struct ModelDenoiser<'a> {
    pub params: &'a ModelParams<f32>,
    pub cond: &'a ConditioningBundle,
}

impl Denoiser for ModelDenoiser<'_> {
    fn predict(&self, x_t: &Mat<f32>, t: usize) -> Result<Mat<f32>, DiffusionError> {
        denoise_predict(self.params, x_t, t, self.cond)
    }
}

fn gaussian_mat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Mat<f32> {
    Mat::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        z as f32
    })
}

fn check_shape(frames: usize, n_mels: usize) -> Result<(), DiffusionError> {
    if frames == 0 || n_mels == 0 {
        return Err(DiffusionError::ShapeMismatch {
            expected: "nonzero frames x mels".into(),
            got: format!("{frames} x {n_mels}"),
        });
    }
    Ok(())
}

/// Full ancestral reverse process: T denoiser evaluations, fresh noise at
/// every step but the last.
pub fn ddpm_sample<D: Denoiser>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    frames: usize,
    n_mels: usize,
    seed: u64,
) -> Result<Mat<f32>, DiffusionError> {
    check_shape(frames, n_mels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian_mat(frames, n_mels, &mut rng);
    for t in (1..=schedule.len()).rev() {
        let eps_hat = denoiser.predict(&x, t)?;
        let beta = schedule.beta(t);
        let alpha = schedule.alpha(t);
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t - 1);
        let mean_x = (1.0 / alpha.sqrt()) as f32;
        let mean_e = (beta / ((1.0 - ab).sqrt() * alpha.sqrt())) as f32;
        // posterior variance of the forward process
        let sigma = ((1.0 - ab_prev) / (1.0 - ab) * beta).sqrt() as f32;

        let noise = if t > 1 { Some(gaussian_mat(frames, n_mels, &mut rng)) } else { None };
        for i in 0..x.data().len() {
            let mut v = mean_x * x.data()[i] - mean_e * eps_hat.data()[i];
            if let Some(z) = &noise {
                v += sigma * z.data()[i];
            }
            x.data_mut()[i] = v;
        }
    }
    Ok(x)
}

/// The decreasing timestep ladder for the fast sampler: `steps` evaluation
/// points spread evenly over `1..=t_steps`, starting at `t_steps`.
pub fn ddim_timesteps(t_steps: usize, steps: usize) -> Result<Vec<usize>, DiffusionError> {
    if steps == 0 || steps > t_steps {
        return Err(DiffusionError::InvalidSteps(format!(
            "need 1..={t_steps} sampling steps, got {steps}"
        )));
    }
    let taus: Vec<usize> = (0..steps)
        .map(|j| (t_steps as f64 * (steps - j) as f64 / steps as f64).round() as usize)
        .collect();
    for w in taus.windows(2) {
        if w[1] >= w[0] {
            return Err(DiffusionError::InvalidSteps(format!(
                "ladder not strictly decreasing near t={}",
                w[0]
            )));
        }
    }
    debug_assert_eq!(taus[0], t_steps);
    debug_assert!(*taus.last().unwrap() >= 1);
    Ok(taus)
}

/// Deterministic (eta = 0) or partially stochastic fast sampler over a
/// `steps`-point ladder.
pub fn ddim_sample<D: Denoiser>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    frames: usize,
    n_mels: usize,
    steps: usize,
    eta: f64,
    seed: u64,
) -> Result<Mat<f32>, DiffusionError> {
    check_shape(frames, n_mels)?;
    if !(0.0..=1.0).contains(&eta) || !eta.is_finite() {
        return Err(DiffusionError::InvalidSteps(format!("eta must be in [0, 1], got {eta}")));
    }
    let taus = ddim_timesteps(schedule.len(), steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian_mat(frames, n_mels, &mut rng);
    for (j, &t) in taus.iter().enumerate() {
        let t_prev = if j + 1 < taus.len() { taus[j + 1] } else { 0 };
        let eps_hat = denoiser.predict(&x, t)?;
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(t_prev);
        let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_prev).sqrt();
        let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();

        let c_x0 = (ab_prev / ab).sqrt() as f32;
        let c_eps = (dir - (ab_prev * (1.0 - ab) / ab).sqrt()) as f32;
        let sigma = sigma as f32;

        let noise = if sigma > 0.0 { Some(gaussian_mat(frames, n_mels, &mut rng)) } else { None };
        for i in 0..x.data().len() {
            // sqrt(ab_prev) * x0_hat + dir * eps_hat (+ sigma z), with
            // x0_hat = (x - sqrt(1-ab) eps_hat) / sqrt(ab)
            let mut v = c_x0 * x.data()[i] + c_eps * eps_hat.data()[i];
            if let Some(z) = &noise {
                v += sigma * z.data()[i];
            }
            x.data_mut()[i] = v;
        }
    }
    Ok(x)
}
