//! `canta` — the command-line surface of the synthesis framework.
//!
//! Every run prints a `config <hash> seed <n>` line before doing anything, so
//! logs can always be traced back to an exact configuration, and identical
//! invocations produce identical outputs. Failures exit nonzero with a single
//! machine-parseable line: `error category=<category>: <message>`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::error::{ContextKind, ErrorKind};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use canta_core::diffusion::{gradient_check_default, small_config, DiffusionError};
use canta_core::feature::FeatureError;
use canta_core::pipeline::DEFAULT_DDIM_STEPS;
use canta_core::score::LyricPhoneme;
use canta_core::{
    config_hash_hex, convert_svc_b, convert_svc_c, evaluate, extract_amplitude, extract_f0,
    gen_corpus, load_corpus, read_wav, synthesize_svs, train, write_wav, AlignedLyrics,
    AudioError, Checkpoint, CorpusError, DomainMode, DspError, EvalError, InferenceOptions,
    MixMode, ModelConfig, ModelVariant, PipelineError, ScoreError, ScoreFile, SpectralConfig,
    StyleTable, StyleToken, SyntheticCorpusSpec, TrainConfig,
};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("{0}")]
    Config(String),
    #[error("gradient check failed: max relative error {0:.3e}")]
    GradCheck(f64),
}

impl CliError {
    fn category(&self) -> &'static str {
        match self {
            CliError::Audio(_) => "audio",
            CliError::Corpus(_) => "corpus",
            CliError::Diffusion(_) => "diffusion",
            CliError::Dsp(_) => "dsp",
            CliError::Eval(_) => "eval",
            CliError::Feature(_) => "feature",
            CliError::Pipeline(_) => "pipeline",
            CliError::Score(_) => "score",
            CliError::Io(_) => "io",
            CliError::Parse(_) => "parse",
            CliError::Config(_) => "config",
            CliError::GradCheck(_) => "gradcheck",
        }
    }
}

#[derive(Parser)]
#[command(name = "canta", version, about = "Zero-shot singing voice synthesis and conversion")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic voice corpus for training and evaluation
    GenCorpus(GenCorpusArgs),
    /// Train an acoustic model on a generated corpus
    Train(TrainArgs),
    /// Synthesize singing from a score in a reference voice
    Synth(SynthArgs),
    /// Convert a sung performance to a reference voice
    Convert(ConvertArgs),
    /// Extract pitch and amplitude curves from audio
    Extract(ExtractArgs),
    /// Score a synthesized waveform against a reference
    Eval(EvalArgs),
    /// Check the analytic training gradient against finite differences
    Gradcheck(GradcheckArgs),
}

fn parse_variant(s: &str) -> Result<ModelVariant, String> {
    s.parse()
}

fn parse_mix(s: &str) -> Result<MixMode, String> {
    s.parse()
}

fn parse_style(s: &str) -> Result<StyleToken, String> {
    StyleToken::parse(s).map_err(|e| e.to_string())
}

fn parse_domain(s: &str) -> Result<DomainMode, String> {
    match s {
        "singing" => Ok(DomainMode::Singing),
        "speech" => Ok(DomainMode::Speech),
        other => Err(format!("unknown mode '{other}' (singing, speech)")),
    }
}

#[derive(Args)]
struct GenCorpusArgs {
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Corpus spec JSON; when given, the other knobs are ignored
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    speakers: usize,
    /// Utterances per speaker
    #[arg(long, default_value_t = 10)]
    utterances: usize,
    /// Fraction of each speaker's utterances rendered as pseudo-speech
    #[arg(long, default_value_t = 0.3)]
    speech_fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Corpus directory (from gen-corpus)
    #[arg(long)]
    corpus: PathBuf,
    /// Output directory for the checkpoint and training log
    #[arg(long)]
    out: PathBuf,
    /// Model variant: svs, svc-b, or svc-c
    #[arg(long, value_parser = parse_variant)]
    model: ModelVariant,
    /// Mixed singing+speech training: on or off (svs and svc-b default to
    /// on; svc-c only ever trains on singing, so it defaults to off)
    #[arg(long, value_parser = parse_mix)]
    mix: Option<MixMode>,
    /// JSON run config; sections "train", "model", "spectral" are all optional
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Verify the training gradient before the run starts
    #[arg(long)]
    grad_check: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Score JSON with lyrics
    #[arg(long)]
    score: PathBuf,
    /// Reference voice WAV
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output WAV; a JSON report is written next to it
    #[arg(long)]
    out: PathBuf,
    /// Style token "genre:technique"; defaults to the score's, then pop:normal
    #[arg(long, value_parser = parse_style)]
    style: Option<StyleToken>,
    /// Denoising steps
    #[arg(long, default_value_t = DEFAULT_DDIM_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep the score's register instead of octave-matching the reference
    #[arg(long)]
    no_pitch_adjust: bool,
}

#[derive(Args)]
struct ConvertArgs {
    /// Trained checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Source performance WAV
    #[arg(long)]
    source: PathBuf,
    /// Reference voice WAV
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Output WAV; a JSON report is written next to it
    #[arg(long)]
    out: PathBuf,
    /// Conversion variant: svc-b (needs --lyrics) or svc-c
    #[arg(long, value_parser = parse_variant)]
    model: ModelVariant,
    /// Frame-aligned lyrics JSON for the source performance
    #[arg(long, required_if_eq("model", "svc-b"))]
    lyrics: Option<PathBuf>,
    /// Style token "genre:technique"
    #[arg(long, value_parser = parse_style)]
    style: Option<StyleToken>,
    #[arg(long, default_value_t = DEFAULT_DDIM_STEPS)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shift the source register toward the reference by whole octaves
    #[arg(long)]
    octave_match: bool,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input WAV
    #[arg(long)]
    input: PathBuf,
    /// Write the F0 track to this JSON path
    #[arg(long)]
    f0: Option<PathBuf>,
    /// Write the amplitude envelope to this JSON path
    #[arg(long)]
    amp: Option<PathBuf>,
    /// Tracking mode: singing or speech
    #[arg(long, value_parser = parse_domain, default_value = "singing")]
    mode: DomainMode,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference WAV
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Hypothesis WAV
    #[arg(long)]
    hyp: PathBuf,
    /// Also write the JSON report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.kind() == ErrorKind::MissingRequiredArgument => {
            let missing = match e.get(ContextKind::InvalidArg) {
                Some(v) => v.to_string(),
                None => "required argument".into(),
            };
            eprintln!("error category=missing-argument: {missing} not provided");
            std::process::exit(2);
        }
        Err(e) => e.exit(),
    };
    if let Err(e) = run(cli) {
        eprintln!("error category={}: {e}", e.category());
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::GenCorpus(a) => cmd_gen_corpus(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Convert(a) => cmd_convert(a),
        Cmd::Extract(a) => cmd_extract(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// sha256 of a value's canonical JSON; same construction as the model config
/// hash embedded in checkpoints.
fn json_hash<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_vec(v).expect("config serializes");
    let mut hex = String::with_capacity(64);
    for b in Sha256::digest(&json) {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}

fn banner(hash: &str, seed: u64) {
    println!("config {hash} seed {seed}");
}

fn cmd_gen_corpus(a: GenCorpusArgs) -> Result<(), CliError> {
    let spec = match &a.spec {
        Some(path) => serde_json::from_str::<SyntheticCorpusSpec>(&fs::read_to_string(path)?)?,
        None => SyntheticCorpusSpec::demo(a.speakers, a.utterances, a.speech_fraction, a.seed),
    };
    banner(&json_hash(&spec), spec.seed);
    let manifest = gen_corpus(&spec, &a.out)?;
    println!(
        "wrote {} items to {} (timbre cosine within {:.3}, between {:.3})",
        manifest.entries.len(),
        a.out.display(),
        manifest.timbre_within_mean,
        manifest.timbre_between_mean,
    );
    Ok(())
}

/// On-disk run configuration; every section falls back to defaults.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RunConfigFile {
    train: TrainConfig,
    model: Option<ModelConfig>,
    spectral: Option<SpectralConfig>,
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let file = match &a.config {
        Some(path) => serde_json::from_str::<RunConfigFile>(&fs::read_to_string(path)?)?,
        None => RunConfigFile::default(),
    };
    let mut train_cfg = file.train;
    let model_cfg = file.model.unwrap_or_default();
    let spectral = file.spectral.unwrap_or_default();
    train_cfg.variant = a.model;
    train_cfg.mix = match a.mix {
        Some(mix) => mix,
        None if a.model == ModelVariant::SvcC => MixMode::Off,
        None => train_cfg.mix,
    };
    if let Some(n) = a.iterations {
        train_cfg.iterations = n;
    }
    if let Some(s) = a.seed {
        train_cfg.seed = s;
    }
    if let Some(b) = a.batch_size {
        train_cfg.batch_size = b;
    }
    train_cfg.grad_check |= a.grad_check;

    banner(&config_hash_hex(&model_cfg), train_cfg.seed);
    let items = load_corpus(&a.corpus)?;
    println!("corpus {} items, variant {}, mix {:?}", items.len(), a.model, train_cfg.mix);

    fs::create_dir_all(&a.out)?;
    let mut log = fs::File::create(a.out.join("train-log.jsonl"))?;
    let (ckpt, report) =
        train(&train_cfg, &model_cfg, &spectral, &items, Some(&a.out), Some(&mut log))?;
    println!("parameters {}", ckpt.params.param_count());
    let ckpt_path = a.out.join("model.ckpt");
    ckpt.save(&ckpt_path)?;
    println!(
        "trained {} steps, final loss {:.5}, checkpoint {}",
        train_cfg.iterations,
        report.final_loss,
        ckpt_path.display()
    );
    Ok(())
}

fn write_output(
    out: &Path,
    audio: &canta_core::AudioBuffer,
    report: &canta_core::SynthesisReport,
) -> Result<(), CliError> {
    write_wav(out, audio)?;
    let sidecar = out.with_extension("json");
    fs::write(&sidecar, serde_json::to_string_pretty(report)?)?;
    println!(
        "wrote {} ({} frames, shift {} semitones, report {})",
        out.display(),
        report.frames,
        report.shift_semitones,
        sidecar.display()
    );
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    banner(&ckpt.config_hash(), a.seed);
    let score_file = ScoreFile::parse(&fs::read_to_string(&a.score)?)?;
    let lyrics: Vec<LyricPhoneme> = score_file
        .lyrics
        .clone()
        .ok_or_else(|| CliError::Config(format!("{} has no lyrics", a.score.display())))?;
    let style = a.style.or(score_file.style).unwrap_or_default();
    let reference = read_wav(&a.reference)?;
    let opts = InferenceOptions {
        steps: a.steps,
        seed: a.seed,
        pitch_adjust: !a.no_pitch_adjust,
        ..InferenceOptions::default()
    };
    let (audio, report) = synthesize_svs(
        &score_file.score,
        &lyrics,
        style,
        &reference,
        &ckpt,
        &StyleTable::default(),
        &SpectralConfig::default(),
        &opts,
    )?;
    write_output(&a.out, &audio, &report)
}

fn cmd_convert(a: ConvertArgs) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    banner(&ckpt.config_hash(), a.seed);
    let source = read_wav(&a.source)?;
    let reference = read_wav(&a.reference)?;
    let opts = InferenceOptions {
        steps: a.steps,
        seed: a.seed,
        octave_match: a.octave_match,
        ..InferenceOptions::default()
    };
    let cfg = SpectralConfig::default();
    let (audio, report) = match a.model {
        ModelVariant::SvcB => {
            let path = a.lyrics.as_ref().expect("clap enforces --lyrics for svc-b");
            let lyrics = AlignedLyrics::parse(&fs::read_to_string(path)?)?;
            let style = a.style.unwrap_or_default();
            convert_svc_b(&source, &lyrics, style, &reference, &ckpt, &cfg, &opts)?
        }
        ModelVariant::SvcC => {
            convert_svc_c(&source, a.style, &reference, &ckpt, &cfg, &opts)?
        }
        ModelVariant::Svs => {
            return Err(CliError::Config(
                "convert needs --model svc-b or svc-c; use synth for svs".into(),
            ))
        }
    };
    write_output(&a.out, &audio, &report)
}

fn cmd_extract(a: ExtractArgs) -> Result<(), CliError> {
    let cfg = SpectralConfig::default();
    banner(&json_hash(&cfg), 0);
    if a.f0.is_none() && a.amp.is_none() {
        return Err(CliError::Config("nothing to extract; pass --f0 and/or --amp".into()));
    }
    let audio = read_wav(&a.input)?;
    if let Some(path) = &a.f0 {
        let curve = extract_f0(&audio, a.mode, &cfg)?;
        fs::write(path, serde_json::to_string(&curve)?)?;
        let voiced = curve.voiced.iter().filter(|&&v| v).count();
        println!("f0 {} ({} frames, {} voiced)", path.display(), curve.len(), voiced);
    }
    if let Some(path) = &a.amp {
        let env = extract_amplitude(&audio, &cfg)?;
        fs::write(path, serde_json::to_string(&env)?)?;
        println!("amp {} ({} frames)", path.display(), env.values.len());
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = SpectralConfig::default();
    banner(&json_hash(&cfg), 0);
    let reference = read_wav(&a.reference)?;
    let hyp = read_wav(&a.hyp)?;
    let report = evaluate(&reference, &hyp, &cfg)?;
    let json = serde_json::to_string(&report)?;
    println!("{json}");
    if let Some(path) = &a.out {
        fs::write(path, &json)?;
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    banner(&config_hash_hex(&small_config()), a.seed);
    let report = gradient_check_default(a.seed)?;
    println!(
        "max relative error {:.3e} {}",
        report.max_rel_err,
        if report.passed { "PASS" } else { "FAIL" }
    );
    if !report.passed {
        return Err(CliError::GradCheck(report.max_rel_err));
    }
    let _ = std::io::stdout().flush();
    Ok(())
}
