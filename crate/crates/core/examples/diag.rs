//! Scratch diagnostic: loss trajectory vs learning rate, and where on the
//! timestep axis the residual error lives.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use canta_core::diffusion::loss_only;
use canta_core::{
    gen_corpus, load_corpus, prepare_train_item, train, Mat, MixMode, ModelConfig, ModelVariant,
    SpectralConfig, SyntheticCorpusSpec, TrainConfig,
};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SyntheticCorpusSpec::demo(3, 2, 0.0, 21);
    gen_corpus(&spec, dir.path()).unwrap();
    let all = load_corpus(dir.path()).unwrap();
    let items: Vec<_> = all.into_iter().filter(|i| i.speaker != "spk02").collect();
    let model_cfg = ModelConfig::default();
    let spectral = SpectralConfig::default();

    for lr in [2e-4f64, 1e-3] {
        let cfg = TrainConfig {
            variant: ModelVariant::SvcB,
            batch_size: 4,
            learning_rate: lr,
            iterations: 1200,
            mix: MixMode::Off,
            seed: 0,
            log_every: 150,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let mut log = Vec::new();
        let t0 = Instant::now();
        let (ckpt, report) =
            train(&cfg, &model_cfg, &spectral, &items, None, Some(&mut log)).unwrap();
        println!(
            "== lr {lr:.0e}: done in {:.0}s, final loss {:.4}",
            t0.elapsed().as_secs_f64(),
            report.final_loss
        );
        print!("{}", String::from_utf8_lossy(&log));

        // loss by timestep bucket
        let schedule = model_cfg.schedule().unwrap();
        let tis: Vec<_> = items
            .iter()
            .map(|i| prepare_train_item(i, cfg.variant, &ckpt.mel_stats, &spectral).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for (lo, hi) in [(1, 10), (10, 50), (50, 200), (200, 500), (500, 1000)] {
            let mut total = 0.0;
            let mut n = 0;
            for ti in &tis {
                for _ in 0..25 {
                    let t = rng.random_range(lo..=hi);
                    let eps = Mat::from_fn(ti.x0.rows(), ti.x0.cols(), |_, _| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z as f32
                    });
                    total += loss_only(
                        &ckpt.params,
                        std::slice::from_ref(ti),
                        &[(t, eps)],
                        &schedule,
                    )
                    .unwrap();
                    n += 1;
                }
            }
            println!("  t in [{lo:4}, {hi:4}]: eps-MSE {:.4}", total / n as f64);
        }
    }
}
