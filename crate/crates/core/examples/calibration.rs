//! One-off calibration for the end-to-end acceptance thresholds: overfit
//! convergence (noise-prediction MSE, reconstruction mel L1) and the
//! zero-shot conversion margins (timbre preference, pitch preservation).
//! Results are recorded in docs/calibration.md; run with
//! `cargo run --release --example calibration`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use canta_core::diffusion::{ddim_sample, loss_only, ModelDenoiser};
use canta_core::pipeline::{build_conditioning, ConditioningMode};
use canta_core::{
    convert_svc_b, convert_svc_c, extract_f0, f0_statistics, gen_corpus, load_corpus,
    mel_spectrogram, prepare_train_item, timbre_embed, train, AudioBuffer, Checkpoint,
    CorpusItem, DomainMode, InferenceOptions, Mat, MixMode, ModelConfig, ModelVariant,
    SpectralConfig, StyleTable, SyntheticCorpusSpec, TrainConfig,
};

fn main() {
    let cfg = SpectralConfig::default();
    let model_cfg = ModelConfig::default();
    let dir = tempfile::tempdir().expect("tempdir");

    let t0 = Instant::now();
    let spec = SyntheticCorpusSpec::demo(3, 2, 0.0, 21);
    gen_corpus(&spec, dir.path()).expect("corpus");
    let all = load_corpus(dir.path()).expect("load");
    let (train_items, held_out): (Vec<CorpusItem>, Vec<CorpusItem>) =
        all.into_iter().partition(|i| i.speaker != "spk02");
    println!(
        "corpus: {} train items (2 speakers), {} held-out reference items, {:.1}s",
        train_items.len(),
        held_out.len(),
        t0.elapsed().as_secs_f64()
    );

    for variant in [ModelVariant::SvcB, ModelVariant::SvcC] {
        let train_cfg = TrainConfig {
            variant,
            batch_size: 4,
            learning_rate: 1e-3,
            iterations: 5000,
            mix: MixMode::Off,
            seed: 0,
            log_every: 500,
            checkpoint_every: u64::MAX,
            ..TrainConfig::default()
        };
        let t0 = Instant::now();
        let (ckpt, report) =
            train(&train_cfg, &model_cfg, &cfg, &train_items, None, None).expect("train");
        println!(
            "\n== {variant}: {} steps in {:.0}s, final batch loss {:.4}",
            train_cfg.iterations,
            t0.elapsed().as_secs_f64(),
            report.final_loss
        );

        let mse = eval_eps_mse(&ckpt, &train_items, variant, &cfg);
        println!("{variant} eps-MSE over fixed uniform-t draws: {mse:.4}");

        let t0 = Instant::now();
        let mut recon = Vec::new();
        for item in &train_items {
            recon.push(recon_l1(&ckpt, item, &cfg));
        }
        let mean = recon.iter().sum::<f64>() / recon.len() as f64;
        println!(
            "{variant} recon mel L1 (DDIM S=50, GT cond): mean {mean:.4}, per-item {:?}, {:.0}s",
            recon.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>(),
            t0.elapsed().as_secs_f64()
        );

        let t0 = Instant::now();
        let reference = &held_out[0].audio;
        let opts = InferenceOptions { seed: 17, ..InferenceOptions::default() };
        for (i, source) in train_items.iter().enumerate() {
            let out = match variant {
                ModelVariant::SvcC => {
                    convert_svc_c(&source.audio, None, reference, &ckpt, &cfg, &opts)
                }
                _ => convert_svc_b(
                    &source.audio,
                    &source.lyrics,
                    source.style,
                    reference,
                    &ckpt,
                    &cfg,
                    &opts,
                ),
            }
            .expect("convert")
            .0;
            let (pref, margin, cents) = conversion_scores(&out, &source.audio, reference, &cfg);
            println!(
                "{variant} item {i} ({}): timbre pref {} (cos ref - cos src = {margin:+.4}), \
                 f0 shift {cents:+.1} cents",
                source.speaker,
                if pref { "OK" } else { "MISS" },
            );
        }
        println!("{variant} conversions took {:.0}s", t0.elapsed().as_secs_f64());
    }
}

/// Noise-prediction MSE over a deterministic uniform-t draw set, mirroring
/// the training objective with low estimator noise.
fn eval_eps_mse(
    ckpt: &Checkpoint,
    items: &[CorpusItem],
    variant: ModelVariant,
    cfg: &SpectralConfig,
) -> f64 {
    let schedule = ckpt.params.cfg.schedule().expect("schedule");
    let mut rng = ChaCha8Rng::seed_from_u64(0xE7A1);
    let mut total = 0.0;
    let mut n = 0usize;
    for item in items {
        let ti = prepare_train_item(item, variant, &ckpt.mel_stats, cfg).expect("train item");
        for _ in 0..25 {
            let t = rng.random_range(1..=ckpt.params.cfg.t_steps);
            let eps = Mat::from_fn(ti.x0.rows(), ti.x0.cols(), |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z as f32
            });
            total += loss_only(
                &ckpt.params,
                std::slice::from_ref(&ti),
                &[(t, eps)],
                &schedule,
            )
            .expect("loss");
            n += 1;
        }
    }
    total / n as f64
}

/// Mel L1 between a DDIM(S=50) sample under ground-truth conditioning and
/// the normalized ground-truth mel.
fn recon_l1(ckpt: &Checkpoint, item: &CorpusItem, cfg: &SpectralConfig) -> f64 {
    let built = build_conditioning(
        &ConditioningMode::TrainGt { item },
        &ckpt.params,
        &StyleTable::default(),
        cfg,
    )
    .expect("conditioning");
    let schedule = ckpt.params.cfg.schedule().expect("schedule");
    let denoiser = ModelDenoiser { params: &ckpt.params, cond: &built.bundle };
    let frames = built.bundle.f0.len();
    let x = ddim_sample(&denoiser, &schedule, frames, ckpt.params.cfg.n_mels, 50, 0.0, 123)
        .expect("ddim");
    let x0 = ckpt.mel_stats.normalize(&mel_spectrogram(&item.audio, cfg).expect("mel"));
    let mut acc = 0.0;
    for (a, b) in x.data().iter().zip(x0.data()) {
        acc += (*a as f64 - *b as f64).abs();
    }
    acc / x.data().len() as f64
}

/// (timbre preference, cosine margin, F0 median shift in cents) for one
/// conversion output.
fn conversion_scores(
    out: &AudioBuffer,
    source: &AudioBuffer,
    reference: &AudioBuffer,
    cfg: &SpectralConfig,
) -> (bool, f32, f64) {
    let e_out = timbre_embed(out, cfg).expect("embed out");
    let e_src = timbre_embed(source, cfg).expect("embed src");
    let e_ref = timbre_embed(reference, cfg).expect("embed ref");
    let cos_ref = e_out.cosine(&e_ref);
    let cos_src = e_out.cosine(&e_src);

    let f_out = f0_statistics(&extract_f0(out, DomainMode::Singing, cfg).expect("f0 out"))
        .expect("stats out");
    let f_src = f0_statistics(&extract_f0(source, DomainMode::Singing, cfg).expect("f0 src"))
        .expect("stats src");
    let cents = 1200.0 * (f_out.median_hz as f64 / f_src.median_hz as f64).log2();
    (cos_ref > cos_src, cos_ref - cos_src, cents)
}
