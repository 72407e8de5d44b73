//! Detokenizer: a windowed ridge regression from per-frame latents to the six
//! log-mel rows of each 60 ms frame, a causal stream state enforcing the
//! three-frame look-ahead, and a chunked Griffin-Lim vocoder that produces the
//! same waveform whether frames arrive one at a time or all at once.

use std::collections::VecDeque;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::dsp::griffin_lim::GriffinLim;
use crate::dsp::mel::{FBANK_BANDS, FRAMES_PER_TOKEN, LOG_FLOOR};
use crate::dsp::resample::StreamingResampler;
use crate::dsp::{CODEC_RATE, HIGH_RATE};
use crate::error::{Error, Result};
use crate::linalg;

/// Future frames visible to the decoder; also the context radius.
pub const LOOKAHEAD_FRAMES: usize = 3;
pub const FRAME_MS: u32 = 60;
/// Look-ahead times frame length.
pub const ALGORITHMIC_LATENCY_MS: u32 = LOOKAHEAD_FRAMES as u32 * FRAME_MS;
/// Output values per token frame: six 80-band log-mel rows.
pub const MEL_BLOCK: usize = FRAMES_PER_TOKEN * FBANK_BANDS;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-3;
pub const DEFAULT_GL_ITERATIONS: usize = 16;

const HOP: usize = 160;
const CROSSFADE: usize = 160;
/// Token frames of mel history each vocoder chunk sees, the current included.
const VOCODER_WINDOW: usize = 2 * LOOKAHEAD_FRAMES + 1;

/// Samples per token frame at `sample_rate` (960 at 16 kHz, 1440 at 24 kHz).
pub fn samples_per_frame(sample_rate: u32) -> usize {
    (sample_rate as u64 * FRAME_MS as u64 / 1000) as usize
}

/// Regression weights: `(L·(2·ctx+1) + 1) × 480` for per-frame latent width `L`.
#[derive(Debug, Clone)]
pub struct DecoderWeights {
    weights: Array2<f64>,
    /// `weights` transposed into contiguous rows, one per output value.
    columns: Array2<f64>,
    context: usize,
    ridge_lambda: f64,
}

impl PartialEq for DecoderWeights {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights && self.context == other.context && self.ridge_lambda == other.ridge_lambda
    }
}

/// Context features for frame `t` of an `n`-frame sequence, neighbours outside
/// `0..n` replaced by the nearest edge frame. `frame(i)` must cover every
/// index in the clamped window.
fn context_vector<'a>(frame: impl Fn(usize) -> ArrayView1<'a, f64>, t: usize, n: usize, ctx: usize, dim: usize) -> Array1<f64> {
    let mut v = Array1::zeros(dim * (2 * ctx + 1) + 1);
    for (slot, k) in (-(ctx as isize)..=ctx as isize).enumerate() {
        let idx = (t as isize + k).clamp(0, n as isize - 1) as usize;
        v.slice_mut(s![slot * dim..(slot + 1) * dim]).assign(&frame(idx));
    }
    v[dim * (2 * ctx + 1)] = 1.0;
    v
}

fn design_matrix(latents: ArrayView2<f64>, ctx: usize) -> Array2<f64> {
    let (n, dim) = latents.dim();
    let mut x = Array2::zeros((n, dim * (2 * ctx + 1) + 1));
    for t in 0..n {
        x.row_mut(t).assign(&context_vector(|i| latents.row(i), t, n, ctx, dim));
    }
    x
}

impl DecoderWeights {
    pub fn new(weights: Array2<f64>, context: usize, ridge_lambda: f64) -> Result<Self> {
        if weights.nrows() <= 1 || (weights.nrows() - 1) % (2 * context + 1) != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} weight rows do not match context radius {context}",
                weights.nrows()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoder weights"));
        }
        Ok(Self {
            columns: weights.t().as_standard_layout().into_owned(),
            weights,
            context,
            ridge_lambda,
        })
    }

    /// Per-frame latent width.
    pub fn input_dim(&self) -> usize {
        (self.weights.nrows() - 1) / (2 * self.context + 1)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Ridge fit over `(latents N×L, targets N×O)` pairs. `ridge_lambda` is
    /// relative to the mean diagonal of the Gram matrix. With a prior the
    /// penalty is `λ‖W − W_prior‖²`.
    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.ridge_lambda
    }

    pub fn fit(pairs: &[(ArrayView2<f64>, ArrayView2<f64>)], ridge_lambda: f64, prior: Option<&DecoderWeights>) -> Result<Self> {
        let ctx = LOOKAHEAD_FRAMES;
        let first = pairs.iter().find(|(l, _)| l.nrows() > 0).ok_or(Error::EmptyInput("decoder training corpus"))?;
        let (dim, out) = (first.0.ncols(), first.1.ncols());
        if ridge_lambda < 0.0 || !ridge_lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("ridge lambda {ridge_lambda}")));
        }
        let f = dim * (2 * ctx + 1) + 1;
        if let Some(p) = prior {
            if p.weights().dim() != (f, out) || p.context() != ctx {
                return Err(Error::DimensionMismatch {
                    expected: f * out,
                    actual: p.weights().len(),
                });
            }
        }
        let mut gram = Array2::<f64>::zeros((f, f));
        let mut cross = Array2::<f64>::zeros((f, out));
        for (latents, targets) in pairs {
            if latents.nrows() != targets.nrows() {
                return Err(Error::InvalidParameter(format!(
                    "alignment mismatch: {} latent frames, {} target frames",
                    latents.nrows(),
                    targets.nrows()
                )));
            }
            if latents.nrows() == 0 {
                continue;
            }
            if latents.ncols() != dim || targets.ncols() != out {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: latents.ncols(),
                });
            }
            let x = design_matrix(*latents, ctx);
            gram += &x.t().dot(&x);
            cross += &x.t().dot(targets);
        }
        let scale = gram.diag().sum() / f as f64;
        let lambda = ridge_lambda * if scale > 0.0 { scale } else { 1.0 };
        let weights = linalg::solve_ridge(&gram, &cross, lambda, prior.map(|p| p.weights()));
        Self::new(weights, ctx, ridge_lambda)
    }

    /// Speaker adaptation: fit a per-output gain and offset on top of the
    /// current predictions, `y ≈ a·ŷ + b`, shrunk toward `a = 1, b = 0`, and
    /// fold them back into the weights. Only `2 × 480` values are learned, so
    /// a few minutes of one speaker is enough.
    pub fn adapt(&self, pairs: &[(ArrayView2<f64>, ArrayView2<f64>)], ridge_lambda: f64) -> Result<Self> {
        if ridge_lambda < 0.0 || !ridge_lambda.is_finite() {
            return Err(Error::InvalidParameter(format!("ridge lambda {ridge_lambda}")));
        }
        let out = self.output_dim();
        let (mut spp, mut sp, mut spy, mut sy) = (Array1::<f64>::zeros(out), Array1::zeros(out), Array1::zeros(out), Array1::zeros(out));
        let mut n = 0.0;
        for (latents, targets) in pairs {
            if latents.nrows() != targets.nrows() {
                return Err(Error::InvalidParameter(format!(
                    "alignment mismatch: {} latent frames, {} target frames",
                    latents.nrows(),
                    targets.nrows()
                )));
            }
            if latents.nrows() == 0 {
                continue;
            }
            if targets.ncols() != out {
                return Err(Error::DimensionMismatch {
                    expected: out,
                    actual: targets.ncols(),
                });
            }
            let pred = self.predict(*latents)?;
            spp += &(&pred * &pred).sum_axis(Axis(0));
            sp += &pred.sum_axis(Axis(0));
            spy += &(&pred * targets).sum_axis(Axis(0));
            sy += &targets.sum_axis(Axis(0));
            n += latents.nrows() as f64;
        }
        if n == 0.0 {
            return Err(Error::EmptyInput("adaptation corpus"));
        }
        let mut weights = self.weights.clone();
        let bias_row = weights.nrows() - 1;
        for j in 0..out {
            let lam = ridge_lambda * (spp[j] + n) / 2.0;
            let (a11, a12, a22) = (spp[j] + lam, sp[j], n + lam);
            let (r1, r2) = (spy[j] + lam, sy[j]);
            let det = a11 * a22 - a12 * a12;
            let (gain, offset) = if det > 0.0 {
                ((r1 * a22 - a12 * r2) / det, (a11 * r2 - a12 * r1) / det)
            } else {
                (1.0, 0.0)
            };
            let mut col = weights.column_mut(j);
            col *= gain;
            col[bias_row] += offset;
        }
        Self::new(weights, self.context, self.ridge_lambda)
    }

    fn check_input(&self, dim: usize) -> Result<()> {
        if dim != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: dim,
            });
        }
        Ok(())
    }

    fn predict_context(&self, context: &Array1<f64>) -> Array1<f64> {
        self.columns.outer_iter().map(|w| w.dot(context)).collect()
    }

    /// One output block per input frame, `N × O`.
    pub fn predict(&self, latents: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(latents.ncols())?;
        let (n, dim) = latents.dim();
        let mut out = Array2::zeros((n, self.output_dim()));
        for t in 0..n {
            let c = context_vector(|i| latents.row(i), t, n, self.context, dim);
            out.row_mut(t).assign(&self.predict_context(&c));
        }
        Ok(out)
    }

    /// Mean squared error per output value over the pairs.
    pub fn mse(&self, pairs: &[(ArrayView2<f64>, ArrayView2<f64>)]) -> Result<f64> {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (latents, targets) in pairs {
            let pred = self.predict(*latents)?;
            acc += (&pred - targets).mapv(|v| v * v).sum();
            count += targets.len();
        }
        Ok(if count == 0 { 0.0 } else { acc / count as f64 })
    }
}

/// Causal buffer for streaming decoding: frame `t` is emitted once frame
/// `t + 3` has arrived, and `flush` emits the tail with the right edge
/// replicated, exactly as batch prediction would.
#[derive(Debug, Clone, Default)]
pub struct StreamState {
    pending: VecDeque<Array1<f64>>,
    first: usize,
    frames_in: usize,
    frames_out: usize,
    finished: bool,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn frames_in(&self) -> usize {
        self.frames_in
    }

    pub fn frames_out(&self) -> usize {
        self.frames_out
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn emit(&mut self, weights: &DecoderWeights, t: usize) -> Array1<f64> {
        let dim = weights.input_dim();
        let (pending, first) = (&self.pending, self.first);
        let c = context_vector(|i| pending[i - first].view(), t, self.frames_in, weights.context, dim);
        self.frames_out += 1;
        weights.predict_context(&c)
    }

    pub fn push(&mut self, weights: &DecoderWeights, latent: Array1<f64>) -> Result<Option<Array1<f64>>> {
        if self.finished {
            return Err(Error::StreamFinished);
        }
        weights.check_input(latent.len())?;
        self.pending.push_back(latent);
        self.frames_in += 1;
        if self.pending.len() > 2 * weights.context + 1 {
            self.pending.pop_front();
            self.first += 1;
        }
        if self.frames_in > weights.context {
            let t = self.frames_in - weights.context - 1;
            return Ok(Some(self.emit(weights, t)));
        }
        Ok(None)
    }

    pub fn flush(&mut self, weights: &DecoderWeights) -> Result<Vec<Array1<f64>>> {
        if self.finished {
            return Err(Error::StreamFinished);
        }
        self.finished = true;
        let out = (self.frames_out..self.frames_in).map(|t| self.emit(weights, t)).collect();
        self.pending.clear();
        Ok(out)
    }
}

/// Waveform synthesis from per-frame log-mel blocks.
///
/// Each new frame triggers Griffin-Lim over the mel of the last seven frames;
/// rows already seen start from the previous chunk's phase, new rows from
/// seeded random phase. The last 10 ms of each chunk is held back and
/// crossfaded with the next chunk's estimate of the same samples.
#[derive(Debug, Clone)]
pub struct ChunkedVocoder {
    gl: GriffinLim,
    iterations: usize,
    seed: u64,
    power: VecDeque<Array2<f64>>,
    phase: Option<Array2<f64>>,
    tail: Vec<f64>,
    frames: usize,
    resampler: Option<StreamingResampler>,
    finished: bool,
}

impl ChunkedVocoder {
    pub fn new(iterations: usize, seed: u64, output_rate: u32) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidParameter("vocoder needs at least one Griffin-Lim iteration".into()));
        }
        let resampler = match output_rate {
            CODEC_RATE => None,
            HIGH_RATE => Some(StreamingResampler::new(CODEC_RATE, HIGH_RATE)?),
            other => {
                return Err(Error::SampleRate {
                    expected: CODEC_RATE,
                    actual: other,
                })
            }
        };
        Ok(Self {
            gl: GriffinLim::new(),
            iterations,
            seed,
            power: VecDeque::new(),
            phase: None,
            tail: Vec::new(),
            frames: 0,
            resampler,
            finished: false,
        })
    }

    pub fn output_rate(&self) -> u32 {
        if self.resampler.is_some() {
            HIGH_RATE
        } else {
            CODEC_RATE
        }
    }

    fn chunk_seed(&self, t: usize) -> u64 {
        self.seed ^ (t as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
    }

    fn egress(&mut self, samples: Vec<f64>) -> Vec<f32> {
        let samples: Vec<f32> = samples.into_iter().map(|v| v as f32).collect();
        match &mut self.resampler {
            Some(r) => r.push(&samples),
            None => samples,
        }
    }

    /// Feed one 480-value log-mel block; returns the samples now final.
    pub fn push(&mut self, log_mel: ArrayView1<f64>) -> Result<Vec<f32>> {
        if self.finished {
            return Err(Error::StreamFinished);
        }
        if log_mel.len() != MEL_BLOCK {
            return Err(Error::DimensionMismatch {
                expected: MEL_BLOCK,
                actual: log_mel.len(),
            });
        }
        if log_mel.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("decoded mel"));
        }
        let t = self.frames;
        let block = log_mel
            .to_owned()
            .into_shape_with_order((FRAMES_PER_TOKEN, FBANK_BANDS))
            .expect("block shape")
            .mapv(|v| (v.min(700.0).exp() - LOG_FLOOR).max(0.0));
        self.power.push_back(block);
        let mut dropped_rows = 0;
        if self.power.len() > VOCODER_WINDOW {
            self.power.pop_front();
            dropped_rows = FRAMES_PER_TOKEN;
        }
        let window_start = t + 1 - self.power.len();
        let views: Vec<ArrayView2<f64>> = self.power.iter().map(|b| b.view()).collect();
        let power = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths");
        let magnitude = self.gl.mel_to_magnitude(power.view())?;
        let bins = magnitude.ncols();
        let fresh = GriffinLim::random_phase(FRAMES_PER_TOKEN, bins, self.chunk_seed(t));
        let init = match &self.phase {
            Some(prev) => {
                let kept = prev.slice(s![dropped_rows.., ..]);
                ndarray::concatenate(ndarray::Axis(0), &[kept, fresh.view()]).expect("equal widths")
            }
            None => fresh,
        };
        let rec = self.gl.reconstruct(magnitude.view(), init.view(), self.iterations)?;
        self.phase = Some(rec.phase);

        let spf = FRAMES_PER_TOKEN * HOP;
        let local = (t - window_start) * spf;
        let mut out = Vec::with_capacity(spf);
        if t > 0 {
            let fresh = &rec.signal[local - CROSSFADE..local];
            for (i, (&old, &new)) in self.tail.iter().zip(fresh).enumerate() {
                let w = (i as f64 + 0.5) / CROSSFADE as f64;
                out.push((1.0 - w) * old + w * new);
            }
        }
        out.extend_from_slice(&rec.signal[local..local + spf - CROSSFADE]);
        self.tail = rec.signal[local + spf - CROSSFADE..local + spf].to_vec();
        self.frames += 1;
        Ok(self.egress(out))
    }

    /// Release the held-back tail; total output is exactly one frame's worth
    /// of samples per pushed block.
    pub fn finish(&mut self) -> Result<Vec<f32>> {
        if self.finished {
            return Err(Error::StreamFinished);
        }
        self.finished = true;
        let tail = std::mem::take(&mut self.tail);
        let mut out = self.egress(tail);
        if let Some(r) = &mut self.resampler {
            out.extend(r.finish());
        }
        Ok(out)
    }
}

/// Vocode a whole `N × 480` log-mel sequence through the chunked path.
pub fn vocode(log_mel: ArrayView2<f64>, iterations: usize, seed: u64, output_rate: u32) -> Result<Vec<f32>> {
    let mut v = ChunkedVocoder::new(iterations, seed, output_rate)?;
    let mut out = Vec::with_capacity(log_mel.nrows() * samples_per_frame(output_rate));
    for row in log_mel.outer_iter() {
        out.extend(v.push(row)?);
    }
    out.extend(v.finish()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0))
    }

    fn toy_weights(dim: usize, out: usize, seed: u64) -> DecoderWeights {
        DecoderWeights::new(random(dim * 7 + 1, out, seed), 3, 0.0).unwrap()
    }

    #[test]
    fn latency_constants() {
        assert_eq!(ALGORITHMIC_LATENCY_MS, 180);
        assert_eq!(samples_per_frame(16_000), 960);
        assert_eq!(samples_per_frame(24_000), 1440);
    }

    #[test]
    fn identity_regression_selects_centre_frame() {
        let x = random(300, 12, 1);
        let w = DecoderWeights::fit(&[(x.view(), x.view())], 1e-8, None).unwrap();
        assert!(w.mse(&[(x.view(), x.view())]).unwrap() < 1e-6);
        let centre = w.weights().slice(s![3 * 12..4 * 12, ..]);
        for i in 0..12 {
            assert!((centre[[i, i]] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn fit_beats_mean_predictor() {
        let x = random(200, 6, 2);
        let y = random(200, 10, 3);
        let w = DecoderWeights::fit(&[(x.view(), y.view())], 1e-3, None).unwrap();
        let mean = y.mean_axis(ndarray::Axis(0)).unwrap();
        let base = (&y - &mean).mapv(|v| v * v).mean().unwrap();
        assert!(w.mse(&[(x.view(), y.view())]).unwrap() <= base);
    }

    #[test]
    fn strong_prior_pins_weights() {
        let x = random(100, 4, 5);
        let y = random(100, 3, 6);
        let prior = toy_weights(4, 3, 7);
        let w = DecoderWeights::fit(&[(x.view(), y.view())], 1e9, Some(&prior)).unwrap();
        assert!(w.weights().iter().zip(prior.weights().iter()).all(|(a, b)| (a - b).abs() < 1e-5));
    }

    #[test]
    fn adapt_recovers_affine_output_map() {
        let w = toy_weights(4, 5, 9);
        let x = random(120, 4, 10);
        let gains = [2.0, 0.5, 1.0, -1.0, 3.0];
        let offsets = [1.0, -2.0, 0.0, 0.25, 4.0];
        let mut y = w.predict(x.view()).unwrap();
        for (j, mut col) in y.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| gains[j] * v + offsets[j]);
        }
        let a = w.adapt(&[(x.view(), y.view())], 0.0).unwrap();
        assert!(a.mse(&[(x.view(), y.view())]).unwrap() < 1e-18);
        assert_eq!(a.weights().dim(), w.weights().dim());
        // Only the bias row and column scales change.
        let (f, _) = w.weights().dim();
        for j in 0..5 {
            for i in 0..f - 1 {
                assert!((a.weights()[[i, j]] - gains[j] * w.weights()[[i, j]]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn adapt_never_worse_on_its_data_and_shrinks_to_identity() {
        let w = toy_weights(3, 6, 11);
        let x = random(80, 3, 12);
        let y = random(80, 6, 13);
        let before = w.mse(&[(x.view(), y.view())]).unwrap();
        let a = w.adapt(&[(x.view(), y.view())], 0.0).unwrap();
        assert!(a.mse(&[(x.view(), y.view())]).unwrap() <= before + 1e-12);
        let pinned = w.adapt(&[(x.view(), y.view())], 1e9).unwrap();
        assert!(pinned.weights().iter().zip(w.weights().iter()).all(|(p, q)| (p - q).abs() < 1e-6));
        assert!(w.adapt(&[], 1e-3).is_err());
        assert!(w.adapt(&[(x.view(), y.slice(s![..10, ..]))], 1e-3).is_err());
        assert!(w.adapt(&[(x.view(), y.view())], -1.0).is_err());
    }

    #[test]
    fn fit_errors() {
        let x = random(10, 4, 1);
        let y = random(9, 3, 1);
        assert!(DecoderWeights::fit(&[], 1e-3, None).is_err());
        assert!(DecoderWeights::fit(&[(x.view(), y.view())], 1e-3, None).is_err());
    }

    #[test]
    fn stream_emits_after_lookahead_and_matches_batch() {
        let w = toy_weights(5, 8, 11);
        for n in [0, 1, 2, 3, 4, 7, 10, 25] {
            let x = random(n, 5, n as u64);
            let batch = w.predict(x.view()).unwrap();
            let mut st = StreamState::new();
            let mut streamed = Vec::new();
            for (i, row) in x.outer_iter().enumerate() {
                let e = st.push(&w, row.to_owned()).unwrap();
                assert_eq!(e.is_some(), i >= 3);
                assert_eq!(st.frames_out(), (i + 1).saturating_sub(3));
                streamed.extend(e);
            }
            streamed.extend(st.flush(&w).unwrap());
            assert_eq!(st.frames_out(), n);
            assert_eq!(streamed.len(), n);
            for (t, e) in streamed.iter().enumerate() {
                assert_eq!(e, &batch.row(t));
            }
            assert!(matches!(st.flush(&w), Err(Error::StreamFinished)));
            assert!(matches!(st.push(&w, Array1::zeros(5)), Err(Error::StreamFinished)));
        }
    }

    #[test]
    fn emission_ignores_frames_beyond_lookahead() {
        let w = toy_weights(3, 4, 1);
        let x = random(12, 3, 2);
        let mut y = x.clone();
        for t in 0..8 {
            y.row_mut(t + 4).fill(9.0);
            let mut st = StreamState::new();
            let mut emitted = None;
            for row in y.outer_iter().take(t + 5) {
                if let Some(e) = st.push(&w, row.to_owned()).unwrap() {
                    if st.frames_out() == t + 1 {
                        emitted = Some(e);
                    }
                }
            }
            let mut st2 = StreamState::new();
            let mut clean = None;
            for row in x.outer_iter().take(t + 5) {
                if let Some(e) = st2.push(&w, row.to_owned()).unwrap() {
                    if st2.frames_out() == t + 1 {
                        clean = Some(e);
                    }
                }
            }
            assert_eq!(emitted.unwrap(), clean.unwrap());
            y.row_mut(t + 4).assign(&x.row(t + 4));
        }
    }

    #[test]
    fn vocoder_sample_counts() {
        let mel = Array2::from_elem((9, MEL_BLOCK), -3.0);
        for (rate, spf) in [(16_000, 960), (24_000, 1440)] {
            assert_eq!(vocode(mel.view(), 2, 1, rate).unwrap().len(), 9 * spf);
        }
        assert!(vocode(mel.slice(s![..0, ..]), 2, 1, 16_000).unwrap().is_empty());
        assert!(ChunkedVocoder::new(2, 0, 22_050).is_err());
    }

    #[test]
    fn vocoder_is_chunking_invariant_and_deterministic() {
        let mel = random(6, MEL_BLOCK, 4).mapv(|v| v * 2.0 - 4.0);
        let a = vocode(mel.view(), 3, 7, 16_000).unwrap();
        let mut v = ChunkedVocoder::new(3, 7, 16_000).unwrap();
        let mut b = Vec::new();
        for (i, row) in mel.outer_iter().enumerate() {
            let chunk = v.push(row).unwrap();
            assert_eq!(chunk.len(), if i == 0 { 800 } else { 960 });
            b.extend(chunk);
        }
        b.extend(v.finish().unwrap());
        assert_eq!(a, b);
        assert_ne!(a, vocode(mel.view(), 3, 8, 16_000).unwrap());
    }
}
