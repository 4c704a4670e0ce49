//! Adam with bias correction, operating on the flat tensor views exposed by
//! `ModelParams::tensors_mut`.

use super::model::ModelParams;
use crate::mat::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState<F: Scalar> {
    m: ModelParams<F>,
    v: ModelParams<F>,
    step: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        AdamState { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update in place. `grads` must have been produced against the
    /// current `params`.
    pub fn update(&mut self, params: &mut ModelParams<F>, grads: &ModelParams<F>, lr: f64) {
        self.step += 1;
        let b1 = F::of(ADAM_BETA1);
        let b2 = F::of(ADAM_BETA2);
        let one = F::one();
        let eps = F::of(ADAM_EPS);
        // fold the bias correction into the step size
        let corr1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let corr2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        let alpha = F::of(lr * corr2.sqrt() / corr1);

        let mut mt = self.m.tensors_mut();
        let mut vt = self.v.tensors_mut();
        let gt = grads.tensors();
        let mut pt = params.tensors_mut();
        debug_assert_eq!(mt.len(), pt.len());
        for i in 0..pt.len() {
            let (pname, p) = &mut pt[i];
            let (gname, g) = &gt[i];
            debug_assert_eq!(pname, gname);
            let m = &mut mt[i].1;
            let v = &mut vt[i].1;
            for j in 0..p.len() {
                let gj = g[j];
                m[j] = b1 * m[j] + (one - b1) * gj;
                v[j] = b2 * v[j] + (one - b2) * gj * gj;
                p[j] -= alpha * m[j] / (v[j].sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::tests::{random_draws, random_item, tiny_config};
    use crate::diffusion::model::{loss_and_grad, loss_only};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn adam_descends_on_a_fixed_batch() {
        let cfg = tiny_config();
        let mut params = ModelParams::<f32>::init(&cfg, 21).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let items = vec![
            random_item::<f32>(&cfg, 8, true, &mut rng),
            random_item::<f32>(&cfg, 8, false, &mut rng),
        ];
        let draws = random_draws(&cfg, &items, &mut rng);
        let sched = cfg.schedule().unwrap();
        let before = loss_only(&params, &items, &draws, &sched).unwrap();
        let mut opt = AdamState::new(&params);
        for _ in 0..60 {
            let mut grads = params.zeros_like();
            loss_and_grad(&params, &items, &draws, &sched, &mut grads).unwrap();
            opt.update(&mut params, &grads, 1e-2);
        }
        let after = loss_only(&params, &items, &draws, &sched).unwrap();
        assert!(
            after < 0.5 * before,
            "expected clear descent on a frozen batch: {before} -> {after}"
        );
    }

    #[test]
    fn first_step_is_signed_gradient_descent() {
        // with zeroed moments the first Adam step has magnitude ~lr in the
        // direction of -sign(g)
        let cfg = tiny_config();
        let mut params = ModelParams::<f64>::init(&cfg, 31).unwrap();
        let reference = params.clone();
        let mut grads = params.zeros_like();
        grads.b_out[0] = 0.5;
        grads.b_out[1] = -0.25;
        let mut opt = AdamState::new(&params);
        let lr = 1e-3;
        opt.update(&mut params, &grads, lr);
        let d0 = params.b_out[0] - reference.b_out[0];
        let d1 = params.b_out[1] - reference.b_out[1];
        assert!((d0 + lr).abs() < 1e-7, "got {d0}");
        assert!((d1 - lr).abs() < 1e-7, "got {d1}");
        // untouched coordinates stay put
        assert_eq!(params.w_in, reference.w_in);
    }
}
