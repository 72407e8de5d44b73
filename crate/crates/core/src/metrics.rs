//! Model-free quality metrics: STOI, gross pitch error, and multi-resolution
//! STFT and mel distances, plus corpus-level codec evaluation.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use realfft::RealFftPlanner;
use serde::Serialize;

use crate::agrvq::utilization_report;
use crate::bitstream::TokenFrame;
use crate::codec::CodecModel;
use crate::dsp::audio::common_prefix;
use crate::dsp::resample::resample;
use crate::dsp::{estimate_pitch, AudioBuffer, MelFilterbank, Stft, StftConfig, CODEC_RATE};
use crate::error::{Error, Result};

const STOI_RATE: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_FFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
/// Frames per intermediate-intelligibility segment (384 ms).
pub const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE_DB: f64 = 40.0;

/// Relative f0 deviation counted as a gross error.
pub const GPE_THRESHOLD: f64 = 0.2;

/// `(fft_size, hop)` pairs; the analysis window spans the whole FFT.
pub const MR_RESOLUTIONS: [(usize, usize); 3] = [(512, 128), (1024, 256), (2048, 512)];
pub const MR_MEL_BANDS: usize = 80;
const MAG_FLOOR: f64 = 1e-7;

/// `np.hanning(len + 2)[1:-1]`.
fn stoi_window(len: usize) -> Vec<f64> {
    (1..=len).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (len + 1) as f64).cos()).collect()
}

/// One-third-octave band matrix, `15 × 257`, edges snapped to the nearest bin.
fn third_octave_matrix() -> Array2<f64> {
    let bins = STOI_FFT / 2 + 1;
    let f: Vec<f64> = (0..bins).map(|k| k as f64 * STOI_RATE as f64 / STOI_FFT as f64).collect();
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, &v) in f.iter().enumerate() {
            if (v - target).powi(2) < (f[best] - target).powi(2) {
                best = i;
            }
        }
        best
    };
    let mut obm = Array2::zeros((STOI_BANDS, bins));
    for b in 0..STOI_BANDS {
        let k = b as f64;
        let lo = nearest(STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0));
        let hi = nearest(STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0));
        for j in lo..hi {
            obm[[b, j]] = 1.0;
        }
    }
    obm
}

/// Frame starts `0, hop, …` strictly below `len − frame`.
fn frame_starts(len: usize, frame: usize, hop: usize) -> impl Iterator<Item = usize> {
    (0..len.saturating_sub(frame)).step_by(hop)
}

/// Drop frames of `x` more than 40 dB below its loudest frame, removing the
/// same frames from `y`, and overlap-add what remains.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = STOI_FRAME / 2;
    let w = stoi_window(STOI_FRAME);
    let frame = |s: &[f64], i: usize| -> Vec<f64> { w.iter().zip(&s[i..i + STOI_FRAME]).map(|(a, b)| a * b).collect() };
    let starts: Vec<usize> = frame_starts(x.len(), STOI_FRAME, hop).collect();
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| 20.0 * (frame(x, i).iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON).log10())
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - STOI_DYN_RANGE_DB - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }
    let len = (kept.len() - 1) * hop + STOI_FRAME;
    let (mut xs, mut ys) = (vec![0.0; len], vec![0.0; len]);
    for (n, &i) in kept.iter().enumerate() {
        for (j, (a, b)) in frame(x, i).into_iter().zip(frame(y, i)).enumerate() {
            xs[n * hop + j] += a;
            ys[n * hop + j] += b;
        }
    }
    (xs, ys)
}

/// Band envelopes `15 × frames`.
fn band_envelopes(x: &[f64], obm: &Array2<f64>) -> Array2<f64> {
    let hop = STOI_FRAME / 2;
    let w = stoi_window(STOI_FRAME);
    let fft = RealFftPlanner::<f64>::new().plan_fft_forward(STOI_FFT);
    let starts: Vec<usize> = frame_starts(x.len(), STOI_FRAME, hop).collect();
    let mut power = Array2::zeros((STOI_FFT / 2 + 1, starts.len()));
    let mut buf = fft.make_input_vec();
    let mut spec = fft.make_output_vec();
    for (t, &i) in starts.iter().enumerate() {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..STOI_FRAME {
            buf[j] = w[j] * x[i + j];
        }
        fft.process(&mut buf, &mut spec).expect("fft sizes match");
        for (k, c) in spec.iter().enumerate() {
            power[[k, t]] = c.norm_sqr();
        }
    }
    obm.dot(&power).mapv(f64::sqrt)
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// Short-time objective intelligibility of `degraded` against `reference`,
/// clamped to `[0, 1]`. Both are truncated to the shorter length; signals are
/// resampled to 10 kHz first.
pub fn stoi(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<f64> {
    let (r, d) = common_prefix(reference, degraded)?;
    let to_10k = |s: &[f32], rate: u32| -> Result<Vec<f64>> {
        let a = AudioBuffer::new(s.to_vec(), rate)?;
        Ok(resample(&a, STOI_RATE)?.to_f64())
    };
    let x = to_10k(r, reference.sample_rate())?;
    let y = to_10k(d, reference.sample_rate())?;
    let (x, y) = remove_silent_frames(&x, &y);
    let obm = third_octave_matrix();
    let xt = band_envelopes(&x, &obm);
    let yt = band_envelopes(&y, &obm);
    let frames = xt.ncols();
    if frames < STOI_SEGMENT {
        return Err(Error::InsufficientData {
            what: "non-silent STOI frames",
            required: STOI_SEGMENT,
            available: frames,
        });
    }
    let clip = 1.0 + 10f64.powf(-STOI_BETA_DB / 20.0);
    let mut total = 0.0;
    let segments = frames - STOI_SEGMENT + 1;
    for m in STOI_SEGMENT..=frames {
        for b in 0..STOI_BANDS {
            let xs: Vec<f64> = (m - STOI_SEGMENT..m).map(|t| xt[[b, t]]).collect();
            let ys: Vec<f64> = (m - STOI_SEGMENT..m).map(|t| yt[[b, t]]).collect();
            let scale = norm(xs.iter().copied()) / (norm(ys.iter().copied()) + f64::EPSILON);
            let mut yp: Vec<f64> = ys.iter().zip(&xs).map(|(&yv, &xv)| (yv * scale).min(xv * clip)).collect();
            let mut xc = xs;
            let my = yp.iter().sum::<f64>() / STOI_SEGMENT as f64;
            let mx = xc.iter().sum::<f64>() / STOI_SEGMENT as f64;
            yp.iter_mut().for_each(|v| *v -= my);
            xc.iter_mut().for_each(|v| *v -= mx);
            let ny = norm(yp.iter().copied()) + f64::EPSILON;
            let nx = norm(xc.iter().copied()) + f64::EPSILON;
            total += yp.iter().zip(&xc).map(|(a, b)| (a / ny) * (b / nx)).sum::<f64>();
        }
    }
    Ok((total / (segments * STOI_BANDS) as f64).clamp(0.0, 1.0))
}

/// Gross pitch error in percent over frames voiced in both signals; `None`
/// when no frame is voiced in both.
pub fn gpe(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<Option<f64>> {
    let (r, d) = common_prefix(reference, degraded)?;
    let rate = reference.sample_rate();
    let pr = estimate_pitch(&AudioBuffer::new(r.to_vec(), rate)?)?;
    let pd = estimate_pitch(&AudioBuffer::new(d.to_vec(), rate)?)?;
    let mut voiced = 0usize;
    let mut gross = 0usize;
    for (&a, &b) in pr.f0.iter().zip(&pd.f0) {
        if a > 0.0 && b > 0.0 {
            voiced += 1;
            if (b - a).abs() / a > GPE_THRESHOLD {
                gross += 1;
            }
        }
    }
    Ok((voiced > 0).then(|| 100.0 * gross as f64 / voiced as f64))
}

fn magnitudes(x: &[f64], fft: usize, hop: usize) -> Result<Array2<f64>> {
    let stft = Stft::new(StftConfig::new(fft, hop, fft))?;
    Ok(stft.forward(x)?.mapv(|c| c.norm()))
}

/// Spectral convergence plus mean absolute log-magnitude difference.
fn spectral_distance(reference: ArrayView2<f64>, degraded: ArrayView2<f64>) -> f64 {
    let num = norm(reference.iter().zip(degraded.iter()).map(|(a, b)| b - a));
    let den = norm(reference.iter().copied());
    let sc = if num == 0.0 { 0.0 } else { num / den.max(f64::MIN_POSITIVE) };
    let log = reference
        .iter()
        .zip(degraded.iter())
        .map(|(a, b)| (b.max(MAG_FLOOR).ln() - a.max(MAG_FLOOR).ln()).abs())
        .sum::<f64>()
        / reference.len().max(1) as f64;
    sc + log
}

fn prepared(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    let (r, d) = common_prefix(reference, degraded)?;
    if r.is_empty() {
        return Err(Error::EmptyInput("signals for spectral distance"));
    }
    Ok((r.iter().map(|&v| v as f64).collect(), d.iter().map(|&v| v as f64).collect()))
}

/// Single-resolution linear-magnitude distance.
pub fn stft_distance(reference: &AudioBuffer, degraded: &AudioBuffer, fft_size: usize, hop: usize) -> Result<f64> {
    let (r, d) = prepared(reference, degraded)?;
    Ok(spectral_distance(magnitudes(&r, fft_size, hop)?.view(), magnitudes(&d, fft_size, hop)?.view()))
}

/// Single-resolution distance on 80-band mel magnitudes.
pub fn mel_distance(reference: &AudioBuffer, degraded: &AudioBuffer, fft_size: usize, hop: usize) -> Result<f64> {
    let (r, d) = prepared(reference, degraded)?;
    let rate = reference.sample_rate();
    let mel = MelFilterbank::new(rate, fft_size, MR_MEL_BANDS, 0.0, rate as f64 / 2.0)?;
    let mr = mel.apply(magnitudes(&r, fft_size, hop)?.view());
    let md = mel.apply(magnitudes(&d, fft_size, hop)?.view());
    Ok(spectral_distance(mr.view(), md.view()))
}

pub fn mr_stft(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<f64> {
    let mut acc = 0.0;
    for (fft, hop) in MR_RESOLUTIONS {
        acc += stft_distance(reference, degraded, fft, hop)?;
    }
    Ok(acc / MR_RESOLUTIONS.len() as f64)
}

pub fn mr_mel(reference: &AudioBuffer, degraded: &AudioBuffer) -> Result<f64> {
    let mut acc = 0.0;
    for (fft, hop) in MR_RESOLUTIONS {
        acc += mel_distance(reference, degraded, fft, hop)?;
    }
    Ok(acc / MR_RESOLUTIONS.len() as f64)
}

/// Something that turns audio into tokens and back.
pub trait Transcoder: Sync {
    fn bitrate_kbps(&self, use_stages: usize) -> f64;
    fn transcode(&self, audio: &AudioBuffer, use_stages: usize) -> Result<Transcoded>;
}

#[derive(Debug, Clone)]
pub struct Transcoded {
    pub audio: AudioBuffer,
    pub frames: Vec<TokenFrame>,
}

impl Transcoder for CodecModel {
    fn bitrate_kbps(&self, use_stages: usize) -> f64 {
        CodecModel::bitrate_kbps(self, use_stages)
    }

    fn transcode(&self, audio: &AudioBuffer, use_stages: usize) -> Result<Transcoded> {
        let (frames, _) = self.tokenize_long(audio, use_stages)?;
        let audio = self.decode(&frames, CODEC_RATE)?;
        Ok(Transcoded { audio, frames })
    }
}

/// Identity "codec" used to sanity-check the evaluation pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Passthrough;

impl Transcoder for Passthrough {
    fn bitrate_kbps(&self, _: usize) -> f64 {
        CODEC_RATE as f64 * 16.0 / 1000.0
    }

    fn transcode(&self, audio: &AudioBuffer, _: usize) -> Result<Transcoded> {
        Ok(Transcoded {
            audio: audio.clone(),
            frames: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtteranceMetrics {
    pub stoi: f64,
    pub gpe_percent: Option<f64>,
    pub mr_stft: f64,
    pub mr_mel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageUtilization {
    pub stage: usize,
    pub used_entries: usize,
    pub perplexity: f64,
    pub perplexity_a: f64,
    pub perplexity_b: f64,
}

/// Corpus-level means. Metrics needing external pretrained models are
/// reserved and always `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub utterances: usize,
    pub frames: usize,
    pub use_stages: usize,
    pub bitrate_kbps: f64,
    pub stoi: f64,
    /// Mean over utterances where GPE is defined.
    pub gpe_percent: Option<f64>,
    pub mr_stft: f64,
    pub mr_mel: f64,
    pub semantic_used: usize,
    pub acoustic_utilization: Vec<StageUtilization>,
    pub pesq: Option<f64>,
    pub wer: Option<f64>,
    pub secs: Option<f64>,
    pub utmos: Option<f64>,
    pub per_utterance: Vec<UtteranceMetrics>,
}

impl MetricsReport {
    /// `key = value` lines; reserved metrics print as `unavailable`.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or_else(|| "unavailable".to_string(), |x| format!("{x:.prec$}"));
        let mut out = format!(
            "utterances = {}\nframes = {}\nuse_stages = {}\nbitrate_kbps = {:.2}\nstoi = {:.4}\ngpe_percent = {}\nmr_stft = {:.4}\nmr_mel = {:.4}\nsemantic_used = {}\n",
            self.utterances,
            self.frames,
            self.use_stages,
            self.bitrate_kbps,
            self.stoi,
            opt(self.gpe_percent, 2),
            self.mr_stft,
            self.mr_mel,
            self.semantic_used,
        );
        for u in &self.acoustic_utilization {
            out.push_str(&format!(
                "stage{}_used = {}\nstage{}_perplexity = {:.4}\n",
                u.stage, u.used_entries, u.stage, u.perplexity
            ));
        }
        for (k, v) in [("pesq", self.pesq), ("wer", self.wer), ("secs", self.secs), ("utmos", self.utmos)] {
            out.push_str(&format!("{k} = {}\n", opt(v, 4)));
        }
        out
    }
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Transcode every utterance with `use_stages` acoustic stages and average
/// the metrics. Utterances are processed in parallel; results are aggregated
/// in corpus order.
pub fn evaluate_codec<T: Transcoder + ?Sized>(codec: &T, corpus: &[AudioBuffer], use_stages: usize) -> Result<MetricsReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput("evaluation corpus"));
    }
    let results = corpus
        .par_iter()
        .map(|audio| {
            let t = codec.transcode(audio, use_stages)?;
            let m = UtteranceMetrics {
                stoi: stoi(audio, &t.audio)?,
                gpe_percent: gpe(audio, &t.audio)?,
                mr_stft: mr_stft(audio, &t.audio)?,
                mr_mel: mr_mel(audio, &t.audio)?,
            };
            Ok((m, t.frames))
        })
        .collect::<Result<Vec<_>>>()?;
    let codes: Vec<Vec<_>> = results.iter().flat_map(|(_, f)| f.iter().map(|t| t.acoustic.clone())).collect();
    let mut sem: Vec<u32> = results.iter().flat_map(|(_, f)| f.iter().map(|t| t.semantic)).collect();
    sem.sort_unstable();
    sem.dedup();
    let util = utilization_report(&codes);
    let per: Vec<UtteranceMetrics> = results.into_iter().map(|(m, _)| m).collect();
    Ok(MetricsReport {
        utterances: per.len(),
        frames: codes.len(),
        use_stages,
        bitrate_kbps: codec.bitrate_kbps(use_stages),
        stoi: mean(per.iter().map(|m| m.stoi)).unwrap_or(0.0),
        gpe_percent: mean(per.iter().filter_map(|m| m.gpe_percent)),
        mr_stft: mean(per.iter().map(|m| m.mr_stft)).unwrap_or(0.0),
        mr_mel: mean(per.iter().map(|m| m.mr_mel)).unwrap_or(0.0),
        semantic_used: sem.len(),
        acoustic_utilization: util
            .stages
            .iter()
            .enumerate()
            .map(|(i, s)| StageUtilization {
                stage: i + 1,
                used_entries: s.used_entries(),
                perplexity: s.perplexity,
                perplexity_a: s.perplexity_a,
                perplexity_b: s.perplexity_b,
            })
            .collect(),
        pesq: None,
        wer: None,
        secs: None,
        utmos: None,
        per_utterance: per,
    })
}
