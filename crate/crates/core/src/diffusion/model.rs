//! The conditional denoiser and its hand-written backward pass.
//!
//! Architecture, per frame: the noisy mel frame is concatenated with all
//! conditioning channels, projected to a working width, passed through a
//! stack of dilated 1-D convolution blocks with additive tanh residuals
//! (each block also receives a learned projection of the timestep
//! embedding), and projected back to mel width as the noise estimate.
//!
//! Channel layout of the assembled input, in order:
//! `mel | f0_log2 | voiced | amplitude | content | timbre | style`.
//!
//! Everything is generic over the scalar so the same arithmetic runs in f32
//! for training and f64 for finite-difference verification.

use super::schedule::{q_sample, NoiseSchedule};
use super::step::{StepCache, StepMlp};
use super::DiffusionError;
use crate::embed::{ContentEmbeddingSequence, EncoderParams, TimbreEmbedding, LEAKY_SLOPE};
use crate::feature::{AmplitudeEnvelope, F0Curve};
use crate::mat::{axpy, dot, Mat, Scalar};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Reference frequency for the log-F0 conditioning channel.
pub const F0_REFERENCE_HZ: f64 = 440.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_mels: usize,
    pub channels: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub content_dim: usize,
    pub timbre_dim: usize,
    pub style_dim: usize,
    pub n_phonemes: usize,
    pub phoneme_embed_dim: usize,
    pub step_dim: usize,
    pub step_hidden: usize,
    pub step_out: usize,
    pub t_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_mels: 80,
            channels: 64,
            kernel: 3,
            dilations: vec![1, 2, 4, 8],
            content_dim: crate::embed::CONTENT_DIM,
            timbre_dim: crate::embed::TIMBRE_DIM,
            style_dim: crate::embed::STYLE_DIM,
            n_phonemes: crate::score::PHONEME_INVENTORY.len(),
            phoneme_embed_dim: 32,
            step_dim: 128,
            step_hidden: 512,
            step_out: 512,
            t_steps: super::schedule::DEFAULT_T,
            beta_start: super::schedule::DEFAULT_BETA_START,
            beta_end: super::schedule::DEFAULT_BETA_END,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        let bad = |m: String| Err(DiffusionError::ConfigMismatch(m));
        if self.kernel % 2 == 0 {
            return bad(format!("kernel must be odd, got {}", self.kernel));
        }
        if self.dilations.is_empty() {
            return bad("at least one block required".into());
        }
        for &d in [
            self.n_mels,
            self.channels,
            self.content_dim,
            self.timbre_dim,
            self.style_dim,
            self.n_phonemes,
            self.phoneme_embed_dim,
            self.step_hidden,
            self.step_out,
            self.t_steps,
        ]
        .iter()
        {
            if d == 0 {
                return bad("zero-sized dimension".into());
            }
        }
        if self.step_dim < 2 || self.step_dim % 2 != 0 {
            return bad(format!("step_dim must be even and >= 2, got {}", self.step_dim));
        }
        Ok(())
    }

    /// Conditioning channels: f0 + voiced + amplitude + content + timbre + style.
    pub fn cond_channels(&self) -> usize {
        3 + self.content_dim + self.timbre_dim + self.style_dim
    }

    pub fn in_channels(&self) -> usize {
        self.n_mels + self.cond_channels()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        NoiseSchedule::linear(self.t_steps, self.beta_start, self.beta_end)
    }

    fn content_offset(&self) -> usize {
        self.n_mels + 3
    }

    fn timbre_offset(&self) -> usize {
        self.content_offset() + self.content_dim
    }

    fn style_offset(&self) -> usize {
        self.timbre_offset() + self.timbre_dim
    }
}

/// One dilated residual block. `w[k]` is the `channels x channels` weight of
/// kernel tap `k` (tap offsets are `(k - kernel/2) * dilation` frames).
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock<F: Scalar> {
    pub w: Vec<Mat<F>>,
    pub b: Vec<F>,
    /// `step_out x channels` projection of the timestep vector.
    pub w_step: Mat<F>,
    pub b_step: Vec<F>,
    pub dilation: usize,
}

impl<F: Scalar> ResBlock<F> {
    fn init(channels: usize, kernel: usize, step_out: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (kernel * channels) as f64;
        let w = (0..kernel)
            .map(|_| {
                Mat::from_fn(channels, channels, |_, _| {
                    let z: f64 = StandardNormal.sample(rng);
                    F::of(z / fan_in.sqrt())
                })
            })
            .collect();
        let w_step = Mat::from_fn(step_out, channels, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            F::of(z / (step_out as f64).sqrt())
        });
        ResBlock { w, b: vec![F::zero(); channels], w_step, b_step: vec![F::zero(); channels], dilation }
    }

    fn zeros_like(&self) -> Self {
        ResBlock {
            w: self.w.iter().map(|m| Mat::zeros(m.rows(), m.cols())).collect(),
            b: vec![F::zero(); self.b.len()],
            w_step: Mat::zeros(self.w_step.rows(), self.w_step.cols()),
            b_step: vec![F::zero(); self.b_step.len()],
            dilation: self.dilation,
        }
    }
}

/// All trainable parameters. The same struct doubles as the gradient
/// accumulator (`zeros_like`) so the two always stay structurally in sync.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Scalar> {
    pub cfg: ModelConfig,
    /// `in_channels x channels`
    pub w_in: Mat<F>,
    pub b_in: Vec<F>,
    pub blocks: Vec<ResBlock<F>>,
    /// `channels x n_mels`
    pub w_out: Mat<F>,
    pub b_out: Vec<F>,
    /// `n_mels x n_mels` passthrough of the noisy input channels, scaled by a
    /// step-dependent scalar gate. The trunk is narrower than the mel axis,
    /// so the full-rank part of the noise estimate rides this path.
    pub w_skip: Mat<F>,
    /// gate = `b_gate[0] + w_gate . step_vector`
    pub w_gate: Vec<F>,
    pub b_gate: Vec<F>,
    pub step: StepMlp<F>,
    pub encoder: EncoderParams<F>,
    /// `4 x style_dim`, one row per style token.
    pub style_table: Mat<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self, DiffusionError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let in_ch = cfg.in_channels();
        let c = cfg.channels;
        let w_in = Mat::from_fn(in_ch, c, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            F::of(z / (in_ch as f64).sqrt())
        });
        let blocks = cfg
            .dilations
            .iter()
            .map(|&d| ResBlock::init(c, cfg.kernel, cfg.step_out, d, &mut rng))
            .collect();
        let w_out = Mat::from_fn(c, cfg.n_mels, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            F::of(z / (c as f64).sqrt())
        });
        let step = StepMlp::init(cfg.step_dim, cfg.step_hidden, cfg.step_out, &mut rng);
        let encoder = EncoderParams::init(
            cfg.n_phonemes,
            cfg.phoneme_embed_dim,
            cfg.content_dim,
            cfg.content_dim,
            &mut rng,
        );
        let style_table = Mat::from_fn(crate::score::StyleToken::COUNT, cfg.style_dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            F::of(z)
        });
        // identity passthrough with a unit gate: at high t the noise estimate
        // starts out as x_t itself, which is already near-optimal there
        let w_skip = Mat::from_fn(cfg.n_mels, cfg.n_mels, |r, col| {
            if r == col {
                F::one()
            } else {
                F::zero()
            }
        });
        Ok(ModelParams {
            cfg: cfg.clone(),
            w_in,
            b_in: vec![F::zero(); c],
            blocks,
            w_out,
            b_out: vec![F::zero(); cfg.n_mels],
            w_skip,
            w_gate: vec![F::zero(); cfg.step_out],
            b_gate: vec![F::one()],
            step,
            encoder,
            style_table,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            cfg: self.cfg.clone(),
            w_in: Mat::zeros(self.w_in.rows(), self.w_in.cols()),
            b_in: vec![F::zero(); self.b_in.len()],
            blocks: self.blocks.iter().map(|b| b.zeros_like()).collect(),
            w_out: Mat::zeros(self.w_out.rows(), self.w_out.cols()),
            b_out: vec![F::zero(); self.b_out.len()],
            w_skip: Mat::zeros(self.w_skip.rows(), self.w_skip.cols()),
            w_gate: vec![F::zero(); self.w_gate.len()],
            b_gate: vec![F::zero(); self.b_gate.len()],
            step: self.step.zeros_like(),
            encoder: self.encoder.zeros_like(),
            style_table: Mat::zeros(self.style_table.rows(), self.style_table.cols()),
        }
    }

    /// Named views of every tensor, in a fixed order shared by the optimizer,
    /// the checkpoint format, and the gradient checker.
    pub fn tensors(&self) -> Vec<(String, &[F])> {
        let mut out: Vec<(String, &[F])> = vec![
            ("w_in".into(), self.w_in.data()),
            ("b_in".into(), &self.b_in),
        ];
        for (i, blk) in self.blocks.iter().enumerate() {
            for (k, w) in blk.w.iter().enumerate() {
                out.push((format!("block{i}.w{k}"), w.data()));
            }
            out.push((format!("block{i}.b"), &blk.b));
            out.push((format!("block{i}.w_step"), blk.w_step.data()));
            out.push((format!("block{i}.b_step"), &blk.b_step));
        }
        out.push(("w_out".into(), self.w_out.data()));
        out.push(("b_out".into(), &self.b_out));
        out.push(("w_skip".into(), self.w_skip.data()));
        out.push(("w_gate".into(), &self.w_gate));
        out.push(("b_gate".into(), &self.b_gate));
        out.push(("step.w1".into(), self.step.w1.data()));
        out.push(("step.b1".into(), &self.step.b1));
        out.push(("step.w2".into(), self.step.w2.data()));
        out.push(("step.b2".into(), &self.step.b2));
        out.push(("enc.table".into(), self.encoder.table.data()));
        out.push(("enc.w1".into(), self.encoder.w1.data()));
        out.push(("enc.b1".into(), &self.encoder.b1));
        out.push(("enc.w2".into(), self.encoder.w2.data()));
        out.push(("enc.b2".into(), &self.encoder.b2));
        out.push(("style_table".into(), self.style_table.data()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [F])> {
        let ModelParams {
            w_in,
            b_in,
            blocks,
            w_out,
            b_out,
            w_skip,
            w_gate,
            b_gate,
            step,
            encoder,
            style_table,
            ..
        } = self;
        let mut out: Vec<(String, &mut [F])> = vec![
            ("w_in".into(), w_in.data_mut()),
            ("b_in".into(), b_in.as_mut_slice()),
        ];
        for (i, blk) in blocks.iter_mut().enumerate() {
            for (k, w) in blk.w.iter_mut().enumerate() {
                out.push((format!("block{i}.w{k}"), w.data_mut()));
            }
            out.push((format!("block{i}.b"), blk.b.as_mut_slice()));
            out.push((format!("block{i}.w_step"), blk.w_step.data_mut()));
            out.push((format!("block{i}.b_step"), blk.b_step.as_mut_slice()));
        }
        out.push(("w_out".into(), w_out.data_mut()));
        out.push(("b_out".into(), b_out.as_mut_slice()));
        out.push(("w_skip".into(), w_skip.data_mut()));
        out.push(("w_gate".into(), w_gate.as_mut_slice()));
        out.push(("b_gate".into(), b_gate.as_mut_slice()));
        out.push(("step.w1".into(), step.w1.data_mut()));
        out.push(("step.b1".into(), step.b1.as_mut_slice()));
        out.push(("step.w2".into(), step.w2.data_mut()));
        out.push(("step.b2".into(), step.b2.as_mut_slice()));
        out.push(("enc.table".into(), encoder.table.data_mut()));
        out.push(("enc.w1".into(), encoder.w1.data_mut()));
        out.push(("enc.b1".into(), encoder.b1.as_mut_slice()));
        out.push(("enc.w2".into(), encoder.w2.data_mut()));
        out.push(("enc.b2".into(), encoder.b2.as_mut_slice()));
        out.push(("style_table".into(), style_table.data_mut()));
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Where an item's content channels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ContentSpec<F: Scalar> {
    /// Per-frame `(phoneme id, within-phoneme position)`; runs through the
    /// trainable lyric encoder, so gradients flow into it.
    Lyric(Vec<(usize, F)>),
    /// Precomputed content rows (`T x content_dim`); treated as constants.
    Fixed(Mat<F>),
}

/// One training example with all conditioning realized at frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem<F: Scalar> {
    /// Normalized mel target, `T x n_mels`.
    pub x0: Mat<F>,
    pub f0_log2: Vec<F>,
    pub voiced: Vec<F>,
    pub amp: Vec<F>,
    pub timbre: Vec<F>,
    pub style_index: usize,
    pub content: ContentSpec<F>,
}

impl<F: Scalar> TrainItem<F> {
    pub fn frames(&self) -> usize {
        self.x0.rows()
    }

    fn validate(&self, cfg: &ModelConfig) -> Result<(), DiffusionError> {
        let t = self.frames();
        let mismatch = |what: &str, got: usize, want: usize| {
            Err(DiffusionError::ShapeMismatch {
                expected: format!("{what} len {want}"),
                got: format!("{got}"),
            })
        };
        if self.x0.cols() != cfg.n_mels {
            return mismatch("x0 cols", self.x0.cols(), cfg.n_mels);
        }
        if self.f0_log2.len() != t {
            return mismatch("f0", self.f0_log2.len(), t);
        }
        if self.voiced.len() != t {
            return mismatch("voiced", self.voiced.len(), t);
        }
        if self.amp.len() != t {
            return mismatch("amp", self.amp.len(), t);
        }
        if self.timbre.len() != cfg.timbre_dim {
            return mismatch("timbre", self.timbre.len(), cfg.timbre_dim);
        }
        if self.style_index >= crate::score::StyleToken::COUNT {
            return Err(DiffusionError::ConfigMismatch(format!(
                "style index {} out of range",
                self.style_index
            )));
        }
        match &self.content {
            ContentSpec::Lyric(v) if v.len() != t => mismatch("lyric content", v.len(), t),
            ContentSpec::Fixed(m) if m.rows() != t || m.cols() != cfg.content_dim => {
                mismatch("fixed content rows", m.rows(), t)
            }
            _ => Ok(()),
        }
    }
}

/// Everything needed to run the denoiser at inference time.
#[derive(Debug, Clone)]
pub struct ConditioningBundle {
    pub f0: F0Curve,
    pub amp: AmplitudeEnvelope,
    pub content: ContentEmbeddingSequence,
    pub timbre: TimbreEmbedding,
    pub style: Vec<f32>,
}

impl ConditioningBundle {
    pub fn new(
        f0: F0Curve,
        amp: AmplitudeEnvelope,
        content: ContentEmbeddingSequence,
        timbre: TimbreEmbedding,
        style: Vec<f32>,
    ) -> Result<Self, DiffusionError> {
        let t = f0.len();
        if amp.values.len() != t || content.frames.rows() != t {
            return Err(DiffusionError::ConditioningLength(format!(
                "f0 {} / amp {} / content {}",
                t,
                amp.values.len(),
                content.frames.rows()
            )));
        }
        Ok(ConditioningBundle { f0, amp, content, timbre, style })
    }

    pub fn frames(&self) -> usize {
        self.f0.len()
    }
}

/// Split an F0 track into the two channels the model sees: `log2(f/440)`
/// where voiced (0 elsewhere) and a 0/1 voicing flag.
pub fn f0_channels(f0: &F0Curve) -> (Vec<f32>, Vec<f32>) {
    let mut logs = Vec::with_capacity(f0.len());
    let mut flags = Vec::with_capacity(f0.len());
    for (&hz, &v) in f0.values_hz.iter().zip(&f0.voiced) {
        if v && hz > 0.0 {
            logs.push((hz as f64 / F0_REFERENCE_HZ).log2() as f32);
            flags.push(1.0);
        } else {
            logs.push(0.0);
            flags.push(0.0);
        }
    }
    (logs, flags)
}

struct EncFrameCache<F: Scalar> {
    symbol: usize,
    pos: F,
    h: Vec<F>,
    z2: Vec<F>,
}

struct ForwardCache<F: Scalar> {
    x: Mat<F>,
    block_inputs: Vec<Mat<F>>,
    block_z: Vec<Mat<F>>,
    h_final: Mat<F>,
    step_out: Vec<F>,
    step_cache: StepCache<F>,
    enc: Option<Vec<EncFrameCache<F>>>,
}

/// Assemble the `T x in_channels` model input for a training item at `x_t`.
fn assemble_train_input<F: Scalar>(
    params: &ModelParams<F>,
    item: &TrainItem<F>,
    x_t: &Mat<F>,
    want_enc_cache: bool,
) -> (Mat<F>, Option<Vec<EncFrameCache<F>>>) {
    let cfg = &params.cfg;
    let t_frames = item.frames();
    let mut x = Mat::zeros(t_frames, cfg.in_channels());
    let style_row: Vec<F> = params.style_table.row(item.style_index).to_vec();
    let mut enc_caches = if want_enc_cache { Some(Vec::with_capacity(t_frames)) } else { None };

    for t in 0..t_frames {
        let content_row: Vec<F> = match &item.content {
            ContentSpec::Lyric(frames) => {
                let (sym, pos) = frames[t];
                let (y, h, z2) = params.encoder.forward_frame(sym, pos);
                if let Some(caches) = enc_caches.as_mut() {
                    caches.push(EncFrameCache { symbol: sym, pos, h, z2 });
                }
                y
            }
            ContentSpec::Fixed(m) => m.row(t).to_vec(),
        };
        let row = x.row_mut(t);
        row[..cfg.n_mels].copy_from_slice(x_t.row(t));
        row[cfg.n_mels] = item.f0_log2[t];
        row[cfg.n_mels + 1] = item.voiced[t];
        row[cfg.n_mels + 2] = item.amp[t];
        row[cfg.content_offset()..cfg.content_offset() + cfg.content_dim]
            .copy_from_slice(&content_row);
        row[cfg.timbre_offset()..cfg.timbre_offset() + cfg.timbre_dim]
            .copy_from_slice(&item.timbre);
        row[cfg.style_offset()..cfg.style_offset() + cfg.style_dim].copy_from_slice(&style_row);
    }
    (x, enc_caches)
}

/// Run the denoiser trunk on an assembled input. Returns the noise estimate
/// and (optionally) every intermediate needed for the backward pass.
fn forward_trunk<F: Scalar>(
    params: &ModelParams<F>,
    x: Mat<F>,
    t: usize,
    enc: Option<Vec<EncFrameCache<F>>>,
    want_cache: bool,
) -> (Mat<F>, Option<ForwardCache<F>>) {
    let cfg = &params.cfg;
    let t_frames = x.rows();
    let c = cfg.channels;

    let (step_out, step_cache) = params.step.forward(t);

    // input projection
    let mut h = Mat::zeros(t_frames, c);
    for tf in 0..t_frames {
        let xr = x.row(tf);
        let hr = h.row_mut(tf);
        hr.copy_from_slice(&params.b_in);
        for (i, &xi) in xr.iter().enumerate() {
            if xi != F::zero() {
                axpy(xi, params.w_in.row(i), hr);
            }
        }
    }

    let mut block_inputs = Vec::new();
    let mut block_zs = Vec::new();
    for blk in &params.blocks {
        // per-block projection of the step vector, shared by all frames
        let mut step_proj = blk.b_step.clone();
        for (si, &s) in step_out.iter().enumerate() {
            axpy(s, blk.w_step.row(si), &mut step_proj);
        }

        let mut z = Mat::zeros(t_frames, c);
        let half = cfg.kernel / 2;
        for tf in 0..t_frames {
            let zr = z.row_mut(tf);
            for (i, v) in zr.iter_mut().enumerate() {
                *v = blk.b[i] + step_proj[i];
            }
            for k in 0..cfg.kernel {
                let off = (k as isize - half as isize) * blk.dilation as isize;
                let s = tf as isize + off;
                if s < 0 || s >= t_frames as isize {
                    continue;
                }
                let hin = h.row(s as usize);
                let w = &blk.w[k];
                for (ci, &hv) in hin.iter().enumerate() {
                    axpy(hv, w.row(ci), zr);
                }
            }
        }

        if want_cache {
            block_inputs.push(h.clone());
            block_zs.push(z.clone());
        }
        for tf in 0..t_frames {
            let zr = z.row(tf);
            let hr = h.row_mut(tf);
            for (hv, &zv) in hr.iter_mut().zip(zr.iter()) {
                *hv += zv.tanh();
            }
        }
    }

    // output projection
    let mut eps_hat = Mat::zeros(t_frames, cfg.n_mels);
    for tf in 0..t_frames {
        let hr = h.row(tf);
        let er = eps_hat.row_mut(tf);
        er.copy_from_slice(&params.b_out);
        for (ci, &hv) in hr.iter().enumerate() {
            axpy(hv, params.w_out.row(ci), er);
        }
    }

    // step-gated passthrough of the noisy channels
    let gate = params.b_gate[0] + dot(&params.w_gate, &step_out);
    for tf in 0..t_frames {
        let xr = x.row(tf);
        let er = eps_hat.row_mut(tf);
        for i in 0..cfg.n_mels {
            let xv = xr[i];
            if xv != F::zero() {
                axpy(xv * gate, params.w_skip.row(i), er);
            }
        }
    }

    let cache = if want_cache {
        Some(ForwardCache {
            x,
            block_inputs,
            block_z: block_zs,
            h_final: h,
            step_out,
            step_cache,
            enc,
        })
    } else {
        None
    };
    (eps_hat, cache)
}

/// Backprop `d(loss)/d(eps_hat)` through the trunk, accumulating parameter
/// gradients into `grads`.
fn backward_trunk<F: Scalar>(
    params: &ModelParams<F>,
    item: &TrainItem<F>,
    cache: &ForwardCache<F>,
    deps: &Mat<F>,
    grads: &mut ModelParams<F>,
) {
    let cfg = &params.cfg;
    let t_frames = deps.rows();
    let c = cfg.channels;

    // output projection
    let mut dh = Mat::zeros(t_frames, c);
    for tf in 0..t_frames {
        let dr = deps.row(tf);
        let hr = cache.h_final.row(tf);
        for (ci, &hv) in hr.iter().enumerate() {
            axpy(hv, dr, grads.w_out.row_mut(ci));
        }
        for (g, &d) in grads.b_out.iter_mut().zip(dr.iter()) {
            *g += d;
        }
        let dhr = dh.row_mut(tf);
        for (ci, v) in dhr.iter_mut().enumerate() {
            *v = dot(params.w_out.row(ci), dr);
        }
    }

    // gated passthrough
    let gate = params.b_gate[0] + dot(&params.w_gate, &cache.step_out);
    let mut dgate = F::zero();
    for tf in 0..t_frames {
        let dr = deps.row(tf);
        let xr = cache.x.row(tf);
        for i in 0..cfg.n_mels {
            let xv = xr[i];
            if xv != F::zero() {
                axpy(xv * gate, dr, grads.w_skip.row_mut(i));
                dgate += xv * dot(params.w_skip.row(i), dr);
            }
        }
    }
    grads.b_gate[0] += dgate;
    axpy(dgate, &cache.step_out, &mut grads.w_gate);

    // blocks, reversed
    let mut dstep_out = vec![F::zero(); cache.step_out.len()];
    axpy(dgate, &params.w_gate, &mut dstep_out);
    let half = cfg.kernel / 2;
    for (bi, blk) in params.blocks.iter().enumerate().rev() {
        let z = &cache.block_z[bi];
        let h_in = &cache.block_inputs[bi];
        let gblk = &mut grads.blocks[bi];

        // dz = dh_post * (1 - tanh^2(z)); residual passes dh through unchanged
        let mut dz = Mat::zeros(t_frames, c);
        let mut dz_sum = vec![F::zero(); c];
        for tf in 0..t_frames {
            let zr = z.row(tf);
            let dhr = dh.row(tf);
            let dzr = dz.row_mut(tf);
            for i in 0..c {
                let th = zr[i].tanh();
                let v = dhr[i] * (F::one() - th * th);
                dzr[i] = v;
                dz_sum[i] += v;
            }
        }

        for (g, &d) in gblk.b.iter_mut().zip(dz_sum.iter()) {
            *g += d;
        }
        for (g, &d) in gblk.b_step.iter_mut().zip(dz_sum.iter()) {
            *g += d;
        }
        for (si, &s) in cache.step_out.iter().enumerate() {
            axpy(s, &dz_sum, gblk.w_step.row_mut(si));
            dstep_out[si] += dot(blk.w_step.row(si), &dz_sum);
        }

        for tf in 0..t_frames {
            let dzr = dz.row(tf);
            for k in 0..cfg.kernel {
                let off = (k as isize - half as isize) * blk.dilation as isize;
                let s = tf as isize + off;
                if s < 0 || s >= t_frames as isize {
                    continue;
                }
                let s = s as usize;
                let hin = h_in.row(s);
                let gw = &mut gblk.w[k];
                for (ci, &hv) in hin.iter().enumerate() {
                    axpy(hv, dzr, gw.row_mut(ci));
                }
                let w = &blk.w[k];
                let dhp = dh.row_mut(s);
                for (ci, v) in dhp.iter_mut().enumerate() {
                    *v += dot(w.row(ci), dzr);
                }
            }
        }
    }

    params.step.backward(&cache.step_cache, &dstep_out, &mut grads.step);

    // input projection: parameter grads over all channels, input grads only
    // for the channels that have parameters upstream (content and style)
    let style_off = cfg.style_offset();
    let content_off = cfg.content_offset();
    let mut dstyle = vec![F::zero(); cfg.style_dim];
    for tf in 0..t_frames {
        let dhr = dh.row(tf);
        let xr = cache.x.row(tf);
        for (i, &xv) in xr.iter().enumerate() {
            if xv != F::zero() {
                axpy(xv, dhr, grads.w_in.row_mut(i));
            }
        }
        for (g, &d) in grads.b_in.iter_mut().zip(dhr.iter()) {
            *g += d;
        }

        for s in 0..cfg.style_dim {
            dstyle[s] += dot(params.w_in.row(style_off + s), dhr);
        }

        if let (ContentSpec::Lyric(_), Some(encs)) = (&item.content, cache.enc.as_ref()) {
            let ec = &encs[tf];
            let dy: Vec<F> = (0..cfg.content_dim)
                .map(|j| dot(params.w_in.row(content_off + j), dhr))
                .collect();
            backward_encoder(params, ec, &dy, grads);
        }
    }
    axpy(F::one(), &dstyle, grads.style_table.row_mut(item.style_index));
}

fn backward_encoder<F: Scalar>(
    params: &ModelParams<F>,
    cache: &EncFrameCache<F>,
    dy: &[F],
    grads: &mut ModelParams<F>,
) {
    let enc = &params.encoder;
    let genc = &mut grads.encoder;
    let slope = F::of(LEAKY_SLOPE);

    let dz2: Vec<F> = cache
        .z2
        .iter()
        .zip(dy.iter())
        .map(|(&z, &d)| if z >= F::zero() { d } else { d * slope })
        .collect();
    for (j, &hv) in cache.h.iter().enumerate() {
        axpy(hv, &dz2, genc.w2.row_mut(j));
    }
    for (g, &d) in genc.b2.iter_mut().zip(dz2.iter()) {
        *g += d;
    }

    let dz1: Vec<F> = cache
        .h
        .iter()
        .enumerate()
        .map(|(j, &h)| dot(enc.w2.row(j), &dz2) * (F::one() - h * h))
        .collect();
    let embed_dim = enc.embed_dim();
    let e = enc.table.row(cache.symbol);
    for (j, &ev) in e.iter().enumerate() {
        axpy(ev, &dz1, genc.w1.row_mut(j));
    }
    axpy(cache.pos, &dz1, genc.w1.row_mut(embed_dim));
    for (g, &d) in genc.b1.iter_mut().zip(dz1.iter()) {
        *g += d;
    }
    let de: Vec<F> = (0..embed_dim).map(|j| dot(enc.w1.row(j), &dz1)).collect();
    axpy(F::one(), &de, genc.table.row_mut(cache.symbol));
}

/// Mean-squared noise-prediction loss over a batch with frozen `(t, eps)`
/// draws, forward only.
pub fn loss_only<F: Scalar>(
    params: &ModelParams<F>,
    items: &[TrainItem<F>],
    draws: &[(usize, Mat<F>)],
    schedule: &NoiseSchedule,
) -> Result<f64, DiffusionError> {
    batch_loss(params, items, draws, schedule, None)
}

/// Same loss, also accumulating parameter gradients into `grads` (which must
/// be zeroed by the caller if fresh gradients are wanted).
pub fn loss_and_grad<F: Scalar>(
    params: &ModelParams<F>,
    items: &[TrainItem<F>],
    draws: &[(usize, Mat<F>)],
    schedule: &NoiseSchedule,
    grads: &mut ModelParams<F>,
) -> Result<f64, DiffusionError> {
    batch_loss(params, items, draws, schedule, Some(grads))
}

fn batch_loss<F: Scalar>(
    params: &ModelParams<F>,
    items: &[TrainItem<F>],
    draws: &[(usize, Mat<F>)],
    schedule: &NoiseSchedule,
    mut grads: Option<&mut ModelParams<F>>,
) -> Result<f64, DiffusionError> {
    if items.is_empty() || items.len() != draws.len() {
        return Err(DiffusionError::ShapeMismatch {
            expected: format!("{} draws", items.len()),
            got: format!("{}", draws.len()),
        });
    }
    let batch = items.len();
    let mut total = 0.0f64;
    for (item, (t, eps)) in items.iter().zip(draws.iter()) {
        item.validate(&params.cfg)?;
        let x_t = q_sample(&item.x0, *t, eps, schedule)?;
        let want = grads.is_some();
        let (x, enc) = assemble_train_input(params, item, &x_t, want);
        let (eps_hat, cache) = forward_trunk(params, x, *t, enc, want);

        let n = (item.frames() * params.cfg.n_mels) as f64;
        let mut item_loss = F::zero();
        for (eh, ev) in eps_hat.data().iter().zip(eps.data().iter()) {
            let d = *eh - *ev;
            item_loss += d * d;
        }
        total += item_loss.as_f64() / n;

        if let Some(g) = grads.as_deref_mut() {
            let scale = F::of(2.0 / (n * batch as f64));
            let mut deps = eps_hat;
            for (d, &ev) in deps.data_mut().iter_mut().zip(eps.data().iter()) {
                *d = (*d - ev) * scale;
            }
            backward_trunk(params, item, cache.as_ref().expect("cache requested"), &deps, g);
        }
    }
    Ok(total / batch as f64)
}

/// Predict the noise component of `x_t` at timestep `t` under frozen
/// parameters and external conditioning.
pub fn denoise_predict(
    params: &ModelParams<f32>,
    x_t: &Mat<f32>,
    t: usize,
    cond: &ConditioningBundle,
) -> Result<Mat<f32>, DiffusionError> {
    let cfg = &params.cfg;
    if t == 0 || t > cfg.t_steps {
        return Err(DiffusionError::TimestepOutOfRange { t, max: cfg.t_steps });
    }
    let frames = cond.frames();
    if x_t.rows() != frames || x_t.cols() != cfg.n_mels {
        return Err(DiffusionError::ShapeMismatch {
            expected: format!("{frames} x {}", cfg.n_mels),
            got: format!("{} x {}", x_t.rows(), x_t.cols()),
        });
    }
    if cond.content.frames.cols() != cfg.content_dim
        || cond.timbre.values().len() != cfg.timbre_dim
        || cond.style.len() != cfg.style_dim
    {
        return Err(DiffusionError::ConfigMismatch(
            "conditioning dims do not match the model config".into(),
        ));
    }

    let (f0_log2, voiced) = f0_channels(&cond.f0);
    let mut x = Mat::zeros(frames, cfg.in_channels());
    for tf in 0..frames {
        let row = x.row_mut(tf);
        row[..cfg.n_mels].copy_from_slice(x_t.row(tf));
        row[cfg.n_mels] = f0_log2[tf];
        row[cfg.n_mels + 1] = voiced[tf];
        row[cfg.n_mels + 2] = cond.amp.values[tf];
        row[cfg.content_offset()..cfg.content_offset() + cfg.content_dim]
            .copy_from_slice(cond.content.frames.row(tf));
        row[cfg.timbre_offset()..cfg.timbre_offset() + cfg.timbre_dim]
            .copy_from_slice(cond.timbre.values());
        row[cfg.style_offset()..cfg.style_offset() + cfg.style_dim]
            .copy_from_slice(&cond.style);
    }
    let (eps_hat, _) = forward_trunk(params, x, t, None, false);
    Ok(eps_hat)
}
