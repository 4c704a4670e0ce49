//! Desk-scale zero-shot singing voice synthesis and conversion.
//!
//! The crate is organised bottom-up: spectral DSP ([`dsp`]), signal-derived
//! features ([`feature`]), symbolic scores ([`score`]) and their rendering into
//! control curves ([`perform`]), conditioning encoders ([`embed`]), the
//! denoising diffusion acoustic model ([`diffusion`]), and the end-to-end
//! training / synthesis / conversion pipelines ([`pipeline`]).

pub mod audio;
pub mod corpus;
pub mod diffusion;
pub mod dsp;
pub mod embed;
pub mod eval;
pub mod feature;
pub mod mat;
pub mod perform;
pub mod pipeline;
pub mod score;

pub use audio::{read_wav, write_wav, AudioBuffer, AudioError, PIPELINE_SAMPLE_RATE};
pub use corpus::{
    gen_corpus, load_corpus, load_manifest, CorpusEntry, CorpusError, CorpusManifest, Resonance,
    SpeakerVoice, SyntheticCorpusSpec, MIN_TIMBRE_MARGIN,
};
pub use diffusion::{
    ddim_sample, ddpm_sample, q_sample, ConditioningBundle, Denoiser, ModelConfig, ModelParams,
    NoiseSchedule,
};
pub use dsp::{griffin_lim, mel_filterbank, mel_spectrogram, stft, DspError, SpectralConfig};
pub use embed::{
    content_encode_local, content_encode_lyrics, style_embed, timbre_embed,
    ContentEmbeddingSequence, EncoderParams, TimbreEmbedding,
};
pub use eval::{evaluate, EvalError, MetricsReport};
pub use feature::{
    extract_amplitude, extract_f0, f0_statistics, AmplitudeEnvelope, DomainMode, F0Curve, F0Stats,
};
pub use mat::{Mat, Scalar};
pub use perform::{
    generate_amplitude, generate_f0_curve, generate_timing, PerformanceTiming, StyleProfile,
    StyleTable,
};
pub use pipeline::{
    align_lyrics_to_timing, build_conditioning, config_hash_hex, convert_svc_b, convert_svc_c,
    mixed_batch_sampler, octave_match_shift, pitch_adjust, prepare_train_item, synthesize_svs,
    train, Checkpoint, ConditioningMode, CorpusItem, InferenceOptions, MelStats, MixMode,
    ModelVariant, PipelineError, SynthesisReport, TrainConfig, TrainReport,
};
pub use score::{parse_score, AlignedLyrics, MusicScore, Note, ScoreError, ScoreFile, StyleToken};
