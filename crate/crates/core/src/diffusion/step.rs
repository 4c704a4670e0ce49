//! Timestep embedding: fixed sinusoidal encoding refined by a small MLP.

use crate::mat::{axpy, dot, Mat, Scalar};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Sinusoidal encoding of a (1-based) timestep. `dim` must be even: the first
/// half is sines, the second cosines, over frequencies falling geometrically
/// from 1 to 1e-4.
pub fn sinusoidal_step_embedding<F: Scalar>(t: usize, dim: usize) -> Vec<F> {
    assert!(dim >= 2 && dim % 2 == 0, "step embedding dim must be even, got {dim}");
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let exponent = if half == 1 { 0.0 } else { -4.0 * i as f64 / (half - 1) as f64 };
        let omega = 10f64.powf(exponent);
        let arg = omega * t as f64;
        out[i] = F::of(arg.sin());
        out[half + i] = F::of(arg.cos());
    }
    out
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `swish(x) = x * sigmoid(x)` and its derivative.
#[inline]
pub fn swish<F: Scalar>(x: F) -> F {
    let xf = x.as_f64();
    F::of(xf * sigmoid(xf))
}

#[inline]
fn swish_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Two-layer MLP with swish activations mapping the sinusoidal encoding to
/// the vector consumed by every residual block.
#[derive(Debug, Clone, PartialEq)]
pub struct StepMlp<F: Scalar> {
    /// `dim x hidden`
    pub w1: Mat<F>,
    pub b1: Vec<F>,
    /// `hidden x out`
    pub w2: Mat<F>,
    pub b2: Vec<F>,
}

/// Intermediates needed to backprop through one forward call.
#[derive(Debug, Clone)]
pub struct StepCache<F: Scalar> {
    pub enc: Vec<F>,
    pub z1: Vec<F>,
    pub h1: Vec<F>,
    pub z2: Vec<F>,
}

impl<F: Scalar> StepMlp<F> {
    pub fn init(dim: usize, hidden: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut gauss = |rows: usize, cols: usize, scale: f64| {
            Mat::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                F::of(z * scale)
            })
        };
        let w1 = gauss(dim, hidden, 1.0 / (dim as f64).sqrt());
        let w2 = gauss(hidden, out, 1.0 / (hidden as f64).sqrt());
        StepMlp { w1, b1: vec![F::zero(); hidden], w2, b2: vec![F::zero(); out] }
    }

    pub fn zeros_like(&self) -> Self {
        StepMlp {
            w1: Mat::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![F::zero(); self.b1.len()],
            w2: Mat::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![F::zero(); self.b2.len()],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.b2.len()
    }

    pub fn forward(&self, t: usize) -> (Vec<F>, StepCache<F>) {
        let enc = sinusoidal_step_embedding::<F>(t, self.in_dim());
        let mut z1 = self.b1.clone();
        for (j, &e) in enc.iter().enumerate() {
            axpy(e, self.w1.row(j), &mut z1);
        }
        let h1: Vec<F> = z1.iter().map(|&z| swish(z)).collect();
        let mut z2 = self.b2.clone();
        for (j, &h) in h1.iter().enumerate() {
            axpy(h, self.w2.row(j), &mut z2);
        }
        let out: Vec<F> = z2.iter().map(|&z| swish(z)).collect();
        (out, StepCache { enc, z1, h1, z2 })
    }

    /// Accumulate parameter gradients for `d(out)` into `grads`.
    pub fn backward(&self, cache: &StepCache<F>, dout: &[F], grads: &mut StepMlp<F>) {
        let dz2: Vec<F> = cache
            .z2
            .iter()
            .zip(dout.iter())
            .map(|(&z, &d)| d * F::of(swish_deriv(z.as_f64())))
            .collect();
        for (j, &h) in cache.h1.iter().enumerate() {
            axpy(h, &dz2, grads.w2.row_mut(j));
        }
        for (gb, &d) in grads.b2.iter_mut().zip(dz2.iter()) {
            *gb += d;
        }
        let dh1: Vec<F> = (0..cache.h1.len()).map(|j| dot(self.w2.row(j), &dz2)).collect();
        let dz1: Vec<F> = cache
            .z1
            .iter()
            .zip(dh1.iter())
            .map(|(&z, &d)| d * F::of(swish_deriv(z.as_f64())))
            .collect();
        for (j, &e) in cache.enc.iter().enumerate() {
            axpy(e, &dz1, grads.w1.row_mut(j));
        }
        for (gb, &d) in grads.b1.iter_mut().zip(dz1.iter()) {
            *gb += d;
        }
    }
}
