//! The end-to-end codec: fbank analysis, a linear feature encoder, the
//! semantic k-means tokenizer, AGRVQ on the acoustic residual, and per-stage
//! ridge decoders feeding the chunked vocoder.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::agrvq::{utilization_report, AgrvqQuantizer, UtilizationReport, DEFAULT_REDUCED_DIM, DEFAULT_STAGES};
use crate::bitstream::{bitrate_kbps, BitstreamHeader, TokenFrame, MAX_ACOUSTIC_STAGES};
use crate::decoder::{samples_per_frame, ChunkedVocoder, DecoderWeights, StreamState, DEFAULT_GL_ITERATIONS, DEFAULT_RIDGE_LAMBDA};
use crate::dsp::mel::{stack_to_tokens, FbankExtractor};
use crate::dsp::{AudioBuffer, CODEC_RATE};
use crate::error::{Error, Result};
use crate::linalg;
use crate::semantic::{train_kmeans, SemanticCodebook, FULL_CODEBOOK_SIZE};

/// Longest input processed in one piece; longer audio is cut into slices.
pub const MAX_INPUT_SECS: usize = 30;
pub const DEFAULT_LATENT_DIM: usize = 64;
pub const DEFAULT_KMEANS_ITERS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub k_sem: usize,
    pub num_stages: usize,
    pub latent_dim: usize,
    pub reduced_dim: usize,
    pub kmeans_iters: usize,
    pub ridge_lambda: f64,
    pub gl_iters: usize,
    pub seed: u64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            k_sem: FULL_CODEBOOK_SIZE,
            num_stages: DEFAULT_STAGES,
            latent_dim: DEFAULT_LATENT_DIM,
            reduced_dim: DEFAULT_REDUCED_DIM,
            kmeans_iters: DEFAULT_KMEANS_ITERS,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            gl_iters: DEFAULT_GL_ITERATIONS,
            seed: 0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.k_sem < 2 || self.k_sem > 1 << 20 {
            return bad(format!("semantic codebook size {} outside 2..=2^20", self.k_sem));
        }
        if self.num_stages == 0 || self.num_stages > MAX_ACOUSTIC_STAGES as usize {
            return bad(format!("acoustic stages {} outside 1..={MAX_ACOUSTIC_STAGES}", self.num_stages));
        }
        if self.latent_dim < 2 || self.latent_dim > crate::decoder::MEL_BLOCK {
            return bad(format!("latent dim {} outside 2..=480", self.latent_dim));
        }
        if self.reduced_dim == 0 || self.reduced_dim >= self.latent_dim {
            return bad(format!("reduced dim {} must be in 1..{}", self.reduced_dim, self.latent_dim));
        }
        if self.kmeans_iters == 0 || self.gl_iters == 0 {
            return bad("iteration counts must be positive".into());
        }
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return bad(format!("ridge lambda {}", self.ridge_lambda));
        }
        Ok(())
    }
}

/// Centered linear projection from stacked fbank (480) to the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureEncoder {
    pub mean: Array1<f64>,
    /// `480 × D`.
    pub projection: Array2<f64>,
}

impl FeatureEncoder {
    pub fn new(mean: Array1<f64>, projection: Array2<f64>) -> Result<Self> {
        if mean.len() != projection.nrows() {
            return Err(Error::DimensionMismatch {
                expected: projection.nrows(),
                actual: mean.len(),
            });
        }
        if mean.iter().chain(projection.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature encoder"));
        }
        Ok(Self { mean, projection })
    }

    /// Principal-component fit; also returns the fraction of variance kept.
    pub fn fit(stacked: ArrayView2<f64>, dim: usize) -> Result<(Self, f64)> {
        let mean = stacked.mean_axis(Axis(0)).ok_or(Error::EmptyInput("feature matrix"))?;
        let (values, vectors) = linalg::principal_axes(stacked, Some(&mean));
        let total: f64 = values.iter().sum();
        let kept: f64 = values.iter().take(dim).sum();
        let projection = vectors.slice(s![.., ..dim]).to_owned();
        let captured = if total > 0.0 { kept / total } else { 1.0 };
        Ok((Self::new(mean, projection)?, captured))
    }

    pub fn input_dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn dim(&self) -> usize {
        self.projection.ncols()
    }

    pub fn encode(&self, stacked: ArrayView2<f64>) -> Result<Array2<f64>> {
        if stacked.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: stacked.ncols(),
            });
        }
        Ok((&stacked - &self.mean).dot(&self.projection))
    }
}

/// Token-rate stacked fbank for 16 kHz audio, `N × 480` with
/// `N = floor(len / 960)`: only frames whose 60 ms of samples are all present
/// are kept, so decoded audio never outlasts the input.
pub fn token_features(audio: &AudioBuffer) -> Result<Array2<f64>> {
    let stacked = stack_to_tokens(&FbankExtractor::new().compute(audio)?);
    let whole = (audio.len() / samples_per_frame(CODEC_RATE)).min(stacked.nrows());
    Ok(stacked.slice_move(s![..whole, ..]))
}

/// Split audio into slices of at most [`MAX_INPUT_SECS`].
pub fn slice_long_input(audio: &AudioBuffer) -> Vec<AudioBuffer> {
    let max = MAX_INPUT_SECS * audio.sample_rate() as usize;
    if audio.len() <= max {
        return vec![audio.clone()];
    }
    (0..audio.len()).step_by(max).map(|s| audio.slice(s, (s + max).min(audio.len()))).collect()
}

/// Summary printed after stage-1 training.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Report {
    pub frames: usize,
    pub encoder_variance_kept: f64,
    /// Semantic k-means distortion after each iteration.
    pub distortion_history: Vec<f64>,
    pub semantic_used: usize,
    /// Mean squared acoustic residual before any stage, then after each stage.
    pub residual_mse: Vec<f64>,
    pub utilization: UtilizationReport,
    /// Training mel MSE of the default decoder per stage count.
    pub decoder_mse: BTreeMap<usize, f64>,
}

/// All learned state.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub(crate) config: CodecConfig,
    pub(crate) encoder: FeatureEncoder,
    pub(crate) semantic: SemanticCodebook,
    pub(crate) quantizer: AgrvqQuantizer,
    pub(crate) decoders: BTreeMap<usize, DecoderWeights>,
}

/// Latents and targets for one utterance.
struct Aligned {
    stacked: Array2<f64>,
    latents: Array2<f64>,
}

impl CodecModel {
    pub fn from_parts(
        config: CodecConfig,
        encoder: FeatureEncoder,
        semantic: SemanticCodebook,
        quantizer: AgrvqQuantizer,
        decoders: BTreeMap<usize, DecoderWeights>,
    ) -> Result<Self> {
        config.validate()?;
        let d = encoder.dim();
        if semantic.dim() != d || quantizer.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: if semantic.dim() != d { semantic.dim() } else { quantizer.dim() },
            });
        }
        if semantic.size() != config.k_sem || quantizer.num_stages() != config.num_stages || d != config.latent_dim {
            return Err(Error::InvalidParameter("components disagree with the stored configuration".into()));
        }
        for (&s, w) in &decoders {
            if s == 0 || s > quantizer.num_stages() {
                return Err(Error::InvalidParameter(format!("decoder for {s} stages, quantizer has {}", quantizer.num_stages())));
            }
            if w.input_dim() != 2 * d || w.output_dim() != crate::decoder::MEL_BLOCK {
                return Err(Error::DimensionMismatch {
                    expected: 2 * d,
                    actual: w.input_dim(),
                });
            }
        }
        Ok(Self {
            config,
            encoder,
            semantic,
            quantizer,
            decoders,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn encoder(&self) -> &FeatureEncoder {
        &self.encoder
    }

    pub fn semantic(&self) -> &SemanticCodebook {
        &self.semantic
    }

    pub fn quantizer(&self) -> &AgrvqQuantizer {
        &self.quantizer
    }

    pub fn decoders(&self) -> &BTreeMap<usize, DecoderWeights> {
        &self.decoders
    }

    pub fn decoder(&self, use_stages: usize) -> Result<&DecoderWeights> {
        if self.decoders.is_empty() {
            return Err(Error::MissingSection("DECW"));
        }
        self.check_stages(use_stages)?;
        self.decoders.get(&use_stages).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "no decoder fitted for {use_stages} acoustic stages (available: {:?})",
                self.decoders.keys().collect::<Vec<_>>()
            ))
        })
    }

    pub fn num_stages(&self) -> usize {
        self.quantizer.num_stages()
    }

    pub fn semantic_bits(&self) -> u8 {
        self.semantic.index_bits()
    }

    pub fn header(&self, use_stages: usize, num_frames: usize) -> BitstreamHeader {
        BitstreamHeader::new(CODEC_RATE, self.semantic_bits(), use_stages as u8, num_frames as u32)
    }

    pub fn bitrate_kbps(&self, use_stages: usize) -> f64 {
        bitrate_kbps(&self.header(use_stages, 0))
    }

    fn check_stages(&self, use_stages: usize) -> Result<()> {
        if use_stages == 0 || use_stages > self.num_stages() {
            return Err(Error::InvalidParameter(format!(
                "use_stages {use_stages} outside 1..={} trained stages",
                self.num_stages()
            )));
        }
        Ok(())
    }

    /// Stage 1: encoder, semantic codebook and AGRVQ from a broad corpus. With
    /// `fit_decoder`, also fits a default decoder for every stage count.
    pub fn train_stage1(corpus: &[AudioBuffer], config: CodecConfig, fit_decoder: bool) -> Result<(Self, Stage1Report)> {
        config.validate()?;
        let stacked = corpus.par_iter().map(token_features).collect::<Result<Vec<_>>>()?;
        let views: Vec<ArrayView2<f64>> = stacked.iter().map(|a| a.view()).collect();
        let all = ndarray::concatenate(Axis(0), &views).map_err(|_| Error::EmptyInput("training corpus"))?;
        let required = config.k_sem.max(crate::agrvq::GROUP_SIZE);
        if all.nrows() < required {
            return Err(Error::InsufficientData {
                what: "token frames (60 ms each)",
                required,
                available: all.nrows(),
            });
        }
        let (encoder, kept) = FeatureEncoder::fit(all.view(), config.latent_dim)?;
        let latents = encoder.encode(all.view())?;
        let (semantic, history) = train_kmeans(latents.view(), config.k_sem, config.kmeans_iters, config.seed)?;
        let sem_idx = semantic.assign_all(latents.view())?;
        let mut residual = latents.clone();
        for (mut row, &k) in residual.outer_iter_mut().zip(&sem_idx) {
            row -= &semantic.centroids.row(k);
        }
        let (quantizer, reports) =
            AgrvqQuantizer::train(residual.view(), config.num_stages, config.reduced_dim, config.seed ^ 0x5eed_a9f0)?;
        let codes = quantizer.encode(residual.view(), config.num_stages)?;
        let mut residual_mse = vec![crate::agrvq::mean_sq_norm(residual.view())];
        residual_mse.extend(reports.iter().map(|r| r.residual_mse));

        let mut model = Self::from_parts(config, encoder, semantic, quantizer, BTreeMap::new())?;
        let mut decoder_mse = BTreeMap::new();
        if fit_decoder {
            let stages: Vec<usize> = (1..=model.num_stages()).collect();
            decoder_mse = model.refit_with_features(&stacked, &stages, model.config.ridge_lambda, false)?;
        }
        let report = Stage1Report {
            frames: all.nrows(),
            encoder_variance_kept: kept,
            distortion_history: history,
            semantic_used: {
                let mut seen = vec![false; model.semantic.size()];
                sem_idx.iter().for_each(|&k| seen[k] = true);
                seen.iter().filter(|&&u| u).count()
            },
            residual_mse,
            utilization: utilization_report(&codes),
            decoder_mse,
        };
        Ok((model, report))
    }

    /// Refit decoders for the given stage counts on a corpus, leaving the
    /// encoder and quantizers untouched. With `use_prior`, each fit is pulled
    /// toward the current weights for that stage count, when there are any.
    /// Returns training MSE.
    pub fn refit_decoder(
        &mut self,
        corpus: &[AudioBuffer],
        stages: &[usize],
        ridge_lambda: f64,
        use_prior: bool,
    ) -> Result<BTreeMap<usize, f64>> {
        let stacked = corpus.par_iter().map(token_features).collect::<Result<Vec<_>>>()?;
        self.refit_with_features(&stacked, stages, ridge_lambda, use_prior)
    }

    fn refit_with_features(
        &mut self,
        stacked: &[Array2<f64>],
        stages: &[usize],
        ridge_lambda: f64,
        use_prior: bool,
    ) -> Result<BTreeMap<usize, f64>> {
        if stages.is_empty() {
            return Err(Error::InvalidParameter("no stage counts selected for refit".into()));
        }
        for &s in stages {
            self.check_stages(s)?;
        }
        if stacked.iter().all(|a| a.nrows() == 0) {
            return Err(Error::EmptyInput("decoder training corpus"));
        }
        let mut mse = BTreeMap::new();
        for &s in stages {
            let aligned = stacked
                .par_iter()
                .map(|st| {
                    let frames = self.tokenize_features(st.view(), s)?;
                    Ok(Aligned {
                        stacked: st.clone(),
                        latents: self.frame_latents(&frames)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<_> = aligned.iter().map(|a| (a.latents.view(), a.stacked.view())).collect();
            let prior = if use_prior { self.decoders.get(&s).cloned() } else { None };
            let w = DecoderWeights::fit(&pairs, ridge_lambda, prior.as_ref())?;
            mse.insert(s, w.mse(&pairs)?);
            self.decoders.insert(s, w);
        }
        Ok(mse)
    }

    /// Adapt the decoders for the given stage counts to a narrow corpus (one
    /// speaker), see [`DecoderWeights::adapt`]. Returns training MSE.
    pub fn adapt_decoder(&mut self, corpus: &[AudioBuffer], stages: &[usize], ridge_lambda: f64) -> Result<BTreeMap<usize, f64>> {
        if stages.is_empty() {
            return Err(Error::InvalidParameter("no stage counts selected for adaptation".into()));
        }
        for &s in stages {
            self.check_stages(s)?;
        }
        let stacked = corpus.par_iter().map(token_features).collect::<Result<Vec<_>>>()?;
        let mut mse = BTreeMap::new();
        for &s in stages {
            let latents = stacked
                .iter()
                .map(|st| self.frame_latents(&self.tokenize_features(st.view(), s)?))
                .collect::<Result<Vec<_>>>()?;
            let pairs: Vec<_> = latents.iter().zip(&stacked).map(|(l, t)| (l.view(), t.view())).collect();
            let w = self.decoder(s)?.adapt(&pairs, ridge_lambda)?;
            mse.insert(s, w.mse(&pairs)?);
            self.decoders.insert(s, w);
        }
        Ok(mse)
    }

    /// Tokens for `N × 480` stacked features.
    pub fn tokenize_features(&self, stacked: ArrayView2<f64>, use_stages: usize) -> Result<Vec<TokenFrame>> {
        self.check_stages(use_stages)?;
        let latents = self.encoder.encode(stacked)?;
        let sem = self.semantic.assign_all(latents.view())?;
        let mut residual = latents;
        for (mut row, &k) in residual.outer_iter_mut().zip(&sem) {
            row -= &self.semantic.centroids.row(k);
        }
        let ac = self.quantizer.encode(residual.view(), use_stages)?;
        Ok(sem.into_iter().zip(ac).map(|(s, a)| TokenFrame::new(s as u32, a)).collect())
    }

    /// Tokens for 16 kHz audio of at most [`MAX_INPUT_SECS`]; trailing samples
    /// short of a whole 60 ms frame are dropped.
    pub fn tokenize(&self, audio: &AudioBuffer, use_stages: usize) -> Result<Vec<TokenFrame>> {
        self.tokenize_features(token_features(audio)?.view(), use_stages)
    }

    /// Tokens for audio of any length, processed in 30 s slices. Also returns
    /// the number of slices used.
    pub fn tokenize_long(&self, audio: &AudioBuffer, use_stages: usize) -> Result<(Vec<TokenFrame>, usize)> {
        let slices = slice_long_input(audio);
        let mut frames = Vec::new();
        for s in &slices {
            frames.extend(self.tokenize(s, use_stages)?);
        }
        Ok((frames, slices.len()))
    }

    fn check_frames(&self, frames: &[TokenFrame]) -> Result<usize> {
        let Some(first) = frames.first() else {
            return Ok(0);
        };
        let s = first.acoustic.len();
        if s > self.num_stages() {
            return Err(Error::InvalidParameter(format!(
                "stream carries {s} acoustic stages, model has {}",
                self.num_stages()
            )));
        }
        if let Some(f) = frames.iter().find(|f| f.acoustic.len() != s) {
            return Err(Error::DimensionMismatch {
                expected: s,
                actual: f.acoustic.len(),
            });
        }
        Ok(s)
    }

    /// Decoder input for one frame: semantic centroid then summed acoustic
    /// reconstructions.
    pub fn frame_latent(&self, frame: &TokenFrame) -> Result<Array1<f64>> {
        let d = self.encoder.dim();
        let mut v = Array1::zeros(2 * d);
        v.slice_mut(s![..d]).assign(&self.semantic.dequantize(frame.semantic as usize)?);
        v.slice_mut(s![d..]).assign(&self.quantizer.decode_row(&frame.acoustic)?);
        Ok(v)
    }

    pub fn frame_latents(&self, frames: &[TokenFrame]) -> Result<Array2<f64>> {
        self.check_frames(frames)?;
        let mut out = Array2::zeros((frames.len(), 2 * self.encoder.dim()));
        for (mut row, f) in out.outer_iter_mut().zip(frames) {
            row.assign(&self.frame_latent(f)?);
        }
        Ok(out)
    }

    /// Log-mel blocks `N × 480` for a token stream.
    pub fn decode_mel(&self, frames: &[TokenFrame]) -> Result<Array2<f64>> {
        let s = self.check_frames(frames)?;
        if frames.is_empty() {
            return Ok(Array2::zeros((0, crate::decoder::MEL_BLOCK)));
        }
        let latents = self.frame_latents(frames)?;
        self.decoder(s)?.predict(latents.view())
    }

    /// Waveform at 16 or 24 kHz, exactly `N × 60 ms` long.
    pub fn decode(&self, frames: &[TokenFrame], output_rate: u32) -> Result<AudioBuffer> {
        let mel = self.decode_mel(frames)?;
        let samples = crate::decoder::vocode(mel.view(), self.config.gl_iters, self.config.seed, output_rate)?;
        debug_assert_eq!(samples.len(), frames.len() * samples_per_frame(output_rate));
        AudioBuffer::new(samples, output_rate)
    }

    pub fn stream(&self, use_stages: usize, output_rate: u32) -> Result<StreamDecoder<'_>> {
        Ok(StreamDecoder {
            model: self,
            weights: self.decoder(use_stages)?,
            use_stages,
            state: StreamState::new(),
            vocoder: ChunkedVocoder::new(self.config.gl_iters, self.config.seed, output_rate)?,
        })
    }
}

/// Output of one streaming step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamChunk {
    /// Log-mel blocks emitted by this step, in frame order.
    pub mel: Vec<Array1<f64>>,
    pub samples: Vec<f32>,
}

/// Frame-at-a-time decoding against a shared model.
#[derive(Debug)]
pub struct StreamDecoder<'m> {
    model: &'m CodecModel,
    weights: &'m DecoderWeights,
    use_stages: usize,
    state: StreamState,
    vocoder: ChunkedVocoder,
}

impl StreamDecoder<'_> {
    pub fn state(&self) -> &StreamState {
        &self.state
    }

    pub fn push(&mut self, frame: &TokenFrame) -> Result<StreamChunk> {
        if frame.acoustic.len() != self.use_stages {
            return Err(Error::DimensionMismatch {
                expected: self.use_stages,
                actual: frame.acoustic.len(),
            });
        }
        let latent = self.model.frame_latent(frame)?;
        let mut chunk = StreamChunk::default();
        if let Some(mel) = self.state.push(self.weights, latent)? {
            chunk.samples = self.vocoder.push(mel.view())?;
            chunk.mel.push(mel);
        }
        Ok(chunk)
    }

    pub fn flush(&mut self) -> Result<StreamChunk> {
        let mut chunk = StreamChunk::default();
        for mel in self.state.flush(self.weights)? {
            chunk.samples.extend(self.vocoder.push(mel.view())?);
            chunk.mel.push(mel);
        }
        chunk.samples.extend(self.vocoder.finish()?);
        Ok(chunk)
    }
}
