use std::path::PathBuf;

use aqc_core::codec::{DEFAULT_KMEANS_ITERS, DEFAULT_LATENT_DIM};
use aqc_core::decoder::{DEFAULT_GL_ITERATIONS, DEFAULT_RIDGE_LAMBDA};
use aqc_core::semantic::FULL_CODEBOOK_SIZE;
use aqc_core::CodecConfig;
use clap::{Args, Parser, Subcommand};

use crate::{CliError, CliResult};

/// Ultra-low-bitrate speech codec: semantic + AGRVQ acoustic tokens.
#[derive(Debug, Parser)]
#[command(name = "aqc", version, about)]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    /// Only warnings and errors on stderr.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic multi-speaker WAV corpus.
    Synth(SynthArgs),
    /// Train encoder, semantic codebook and AGRVQ stages on a broad corpus.
    TrainStage1(Stage1Args),
    /// Refit decoders on a high-quality corpus; codebooks stay frozen.
    TrainStage2(Stage2Args),
    /// Adapt decoders to one speaker; codebooks stay frozen.
    TrainStage3(Stage3Args),
    /// Tokenize a 16 kHz WAV into an .aqc bitstream.
    Encode(EncodeArgs),
    /// Reconstruct a WAV from an .aqc bitstream.
    Decode(DecodeArgs),
    /// Describe an .aqc bitstream or .aqm model file.
    Inspect(InspectArgs),
    /// Transcode a corpus and report objective metrics.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; one subdirectory per speaker.
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub speakers: usize,
    #[arg(long, default_value_t = 10)]
    pub per_speaker: usize,
    /// Length of each utterance in seconds.
    #[arg(long, default_value_t = 4.0)]
    pub seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Semantic codebook size.
    #[arg(long, default_value_t = FULL_CODEBOOK_SIZE)]
    pub k_sem: usize,
    /// Number of AGRVQ stages to train (M).
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
    /// Latent width of the feature encoder.
    #[arg(long, default_value_t = DEFAULT_LATENT_DIM)]
    pub latent_dim: usize,
    /// Projection width of each AGRVQ branch (d).
    #[arg(long, default_value_t = 8)]
    pub reduced_dim: usize,
    #[arg(long, default_value_t = DEFAULT_KMEANS_ITERS)]
    pub kmeans_iters: usize,
    /// Ridge penalty, relative to the mean diagonal of the normal equations.
    #[arg(long, default_value_t = DEFAULT_RIDGE_LAMBDA)]
    pub ridge_lambda: f64,
    /// Griffin-Lim iterations per vocoder chunk.
    #[arg(long, default_value_t = DEFAULT_GL_ITERATIONS)]
    pub gl_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct Stage1Args {
    /// Corpus directory, scanned recursively for .wav files (repeatable).
    #[arg(short, long, required = true)]
    pub corpus: Vec<PathBuf>,
    /// Model file to write.
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Skip fitting the default decoders.
    #[arg(long)]
    pub no_decoder: bool,
    /// Also write the training summary as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RefitArgs {
    /// Input model.
    #[arg(short, long)]
    pub model: PathBuf,
    /// Model file to write; must differ from --model.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Stage counts S to refit, comma separated; default all trained.
    #[arg(long, value_delimiter = ',')]
    pub use_stages: Vec<usize>,
    /// Ridge penalty; default the model's.
    #[arg(long)]
    pub ridge_lambda: Option<f64>,
    /// Held-out material to score before and after (MR-MEL).
    #[arg(long)]
    pub held_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Stage2Args {
    /// High-quality corpus directory (repeatable).
    #[arg(short, long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[command(flatten)]
    pub refit: RefitArgs,
    /// Fit from scratch instead of pulling toward the current weights.
    #[arg(long)]
    pub no_prior: bool,
}

#[derive(Debug, Args)]
pub struct Stage3Args {
    /// Directory of the target speaker's recordings.
    #[arg(short, long)]
    pub speaker: PathBuf,
    #[command(flatten)]
    pub refit: RefitArgs,
    /// Non-target material, scored before and after to show the trade-off.
    #[arg(long)]
    pub other: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// 16 kHz WAV input.
    #[arg(short, long)]
    pub input: PathBuf,
    /// .aqc output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Acoustic stages to transmit (S); default all trained.
    #[arg(short = 's', long)]
    pub use_stages: Option<usize>,
    /// Resample input that is not at 16 kHz instead of rejecting it.
    #[arg(long)]
    pub resample: bool,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// .aqc input.
    #[arg(short, long)]
    pub input: PathBuf,
    /// WAV output.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Decode frame by frame through the causal streaming path.
    #[arg(long)]
    pub streaming: bool,
    /// Output sample rate: 16000 or 24000.
    #[arg(long, default_value_t = 16_000)]
    pub sample_rate: u32,
    /// Write 32-bit float samples instead of 16-bit PCM.
    #[arg(long)]
    pub float: bool,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// An .aqc or .aqm file.
    pub file: PathBuf,
    /// Print JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub model: PathBuf,
    /// Evaluation corpus directory (repeatable).
    #[arg(short, long, required = true)]
    pub corpus: Vec<PathBuf>,
    #[arg(short = 's', long)]
    pub use_stages: Option<usize>,
    /// Write the full report as JSON to this path.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Everything a run depends on, resolved from flags and model files and
/// logged before work starts.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub command: &'static str,
    pub corpus: Vec<PathBuf>,
    pub model: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub k_sem: usize,
    pub num_stages: usize,
    pub use_stages: Vec<usize>,
    pub reduced_dim: usize,
    pub latent_dim: usize,
    pub ridge_lambda: f64,
    pub seed: u64,
    pub sample_rate: u32,
    pub gl_iters: usize,
    pub streaming: bool,
}

impl RunConfig {
    pub fn from_model(command: &'static str, config: &CodecConfig) -> Self {
        Self {
            command,
            k_sem: config.k_sem,
            num_stages: config.num_stages,
            reduced_dim: config.reduced_dim,
            latent_dim: config.latent_dim,
            ridge_lambda: config.ridge_lambda,
            seed: config.seed,
            gl_iters: config.gl_iters,
            sample_rate: aqc_core::dsp::CODEC_RATE,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> CliResult {
        for &s in &self.use_stages {
            if s == 0 || s > self.num_stages {
                return Err(CliError::usage(format!(
                    "--use-stages {s} outside 1..={} (the model's trained stage count)",
                    self.num_stages
                )));
            }
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(CliError::usage(format!("--ridge-lambda {} must be finite and >= 0", self.ridge_lambda)));
        }
        if ![aqc_core::dsp::CODEC_RATE, aqc_core::dsp::HIGH_RATE].contains(&self.sample_rate) {
            return Err(CliError::usage(format!("--sample-rate {} must be 16000 or 24000", self.sample_rate)));
        }
        if let Some(o) = &self.output {
            let inputs = self.input.iter().chain(&self.model).chain(&self.corpus);
            if inputs.into_iter().any(|i| same_path(i, o)) {
                return Err(CliError::usage(format!("output {} would overwrite an input", o.display())));
            }
        }
        Ok(())
    }

    pub fn log(&self) {
        let paths = |p: &[PathBuf]| p.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(",");
        let opt = |p: &Option<PathBuf>| p.as_ref().map_or_else(|| "-".into(), |p| p.display().to_string());
        log::info!(
            "{}: corpus=[{}] model={} input={} output={} k_sem={} stages={} use_stages={:?} reduced_dim={} latent_dim={} \
             ridge_lambda={} seed={} sample_rate={} gl_iters={} streaming={}",
            self.command,
            paths(&self.corpus),
            opt(&self.model),
            opt(&self.input),
            opt(&self.output),
            self.k_sem,
            self.num_stages,
            self.use_stages,
            self.reduced_dim,
            self.latent_dim,
            self.ridge_lambda,
            self.seed,
            self.sample_rate,
            self.gl_iters,
            self.streaming
        );
    }
}

impl ModelArgs {
    pub fn codec_config(&self) -> CodecConfig {
        CodecConfig {
            k_sem: self.k_sem,
            num_stages: self.stages,
            latent_dim: self.latent_dim,
            reduced_dim: self.reduced_dim,
            kmeans_iters: self.kmeans_iters,
            ridge_lambda: self.ridge_lambda,
            gl_iters: self.gl_iters,
            seed: self.seed,
        }
    }
}

fn same_path(a: &std::path::Path, b: &std::path::Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(x), Ok(y)) => x == y,
        _ => a == b,
    }
}
