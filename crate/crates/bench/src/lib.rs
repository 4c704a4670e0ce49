//! Shared setup for the kernel benchmarks; see `benches/kernels.rs`.

use canta_core::pipeline::{build_conditioning, ConditioningMode};
use canta_core::{
    gen_corpus, load_corpus, ConditioningBundle, CorpusItem, ModelConfig, ModelParams,
    SpectralConfig, StyleTable, SyntheticCorpusSpec,
};

/// One deterministic singing utterance, rendered into a temp dir and read
/// back the way training would.
pub fn bench_item() -> CorpusItem {
    let dir = tempfile::tempdir().expect("tempdir");
    let spec = SyntheticCorpusSpec::demo(2, 1, 0.0, 1234);
    gen_corpus(&spec, dir.path()).expect("corpus renders");
    load_corpus(dir.path()).expect("corpus loads").remove(0)
}

/// Ground-truth conditioning for `item` under freshly initialized weights.
pub fn bench_conditioning(
    item: &CorpusItem,
    params: &ModelParams<f32>,
    cfg: &SpectralConfig,
) -> ConditioningBundle {
    build_conditioning(&ConditioningMode::TrainGt { item }, params, &StyleTable::default(), cfg)
        .expect("conditioning builds")
        .bundle
}

pub fn bench_params(cfg: &ModelConfig) -> ModelParams<f32> {
    ModelParams::init(cfg, 7).expect("params init")
}
