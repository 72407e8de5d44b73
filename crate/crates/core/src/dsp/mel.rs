use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};

use super::audio::{AudioBuffer, CODEC_RATE};
use super::stft::{Stft, StftConfig};
use crate::error::{Error, Result};

/// Fbank hop at the codec rate (10 ms).
pub const FBANK_HOP_MS: u32 = 10;
/// Fbank analysis window at the codec rate (25 ms).
pub const FBANK_WINDOW_MS: u32 = 25;
pub const FBANK_BANDS: usize = 80;
pub const LOG_FLOOR: f64 = 1e-10;
/// Fbank frames stacked into one 60 ms token frame.
pub const FRAMES_PER_TOKEN: usize = 6;

pub const FBANK_STFT: StftConfig = StftConfig::new(512, 160, 400);

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `bands × (fft_size/2 + 1)`, unit peak.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Array2<f64>,
}

impl MelFilterbank {
    pub fn new(sample_rate: u32, fft_size: usize, bands: usize, fmin: f64, fmax: f64) -> Result<Self> {
        if bands == 0 || fmax <= fmin || fmax > sample_rate as f64 / 2.0 + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "mel filterbank {bands} bands over {fmin}-{fmax} Hz at {sample_rate} Hz"
            )));
        }
        let bins = fft_size / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / fft_size as f64;
        let mut weights = Array2::zeros((bands, bins));
        for b in 0..bands {
            let (left, centre, right) = (edges[b], edges[b + 1], edges[b + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > left && f <= centre {
                    (f - left) / (centre - left)
                } else if f > centre && f < right {
                    (right - f) / (right - centre)
                } else {
                    0.0
                };
                weights[[b, k]] = w;
            }
        }
        Ok(Self { weights })
    }

    pub fn bands(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// Apply to a `T × bins` spectrogram, giving `T × bands`.
    pub fn apply(&self, spectrum: ArrayView2<f64>) -> Array2<f64> {
        spectrum.dot(&self.weights.t())
    }

    /// Regularized right pseudo-inverse `Wᵀ (W Wᵀ + εI)⁻¹`, `bins × bands`.
    pub fn pseudo_inverse(&self, rel_reg: f64) -> Array2<f64> {
        let (b, f) = self.weights.dim();
        let w = DMatrix::from_fn(b, f, |i, j| self.weights[[i, j]]);
        let gram = &w * w.transpose();
        let eps = rel_reg * gram.trace() / b as f64;
        let reg = gram + DMatrix::identity(b, b) * eps;
        let inv = reg
            .cholesky()
            .expect("regularized Gram matrix is positive definite")
            .inverse();
        let pinv = w.transpose() * inv;
        Array2::from_shape_fn((f, b), |(i, j)| pinv[(i, j)])
    }
}

/// Log-mel energies at 10 ms hop / 25 ms window.
#[derive(Debug, Clone, PartialEq)]
pub struct FbankFrames {
    pub features: Array2<f64>,
    pub hop_ms: u32,
    pub window_ms: u32,
}

impl FbankFrames {
    pub fn num_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_bands(&self) -> usize {
        self.features.ncols()
    }
}

/// Fbank front end at the codec geometry: 512-point FFT, 400-sample Hann
/// window, 160-sample hop, 80 bands over 0–8 kHz.
#[derive(Debug, Clone)]
pub struct FbankExtractor {
    stft: Stft,
    mel: MelFilterbank,
}

impl Default for FbankExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl FbankExtractor {
    pub fn new() -> Self {
        let stft = Stft::new(FBANK_STFT).expect("static fbank geometry is valid");
        let mel = MelFilterbank::new(CODEC_RATE, FBANK_STFT.fft_size, FBANK_BANDS, 0.0, 8000.0)
            .expect("static mel geometry is valid");
        Self { stft, mel }
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    pub fn mel(&self) -> &MelFilterbank {
        &self.mel
    }

    /// Linear mel power, `T × 80`.
    pub fn mel_power(&self, audio: &AudioBuffer) -> Result<Array2<f64>> {
        audio.require_rate(CODEC_RATE)?;
        let spec = self.stft.forward(&audio.to_f64())?;
        Ok(self.mel.apply(spec.mapv(|c| c.norm_sqr()).view()))
    }

    pub fn compute(&self, audio: &AudioBuffer) -> Result<FbankFrames> {
        let features = self.mel_power(audio)?.mapv(|e| (e + LOG_FLOOR).ln());
        Ok(FbankFrames {
            features,
            hop_ms: FBANK_HOP_MS,
            window_ms: FBANK_WINDOW_MS,
        })
    }
}

pub fn fbank(audio: &AudioBuffer) -> Result<FbankFrames> {
    FbankExtractor::new().compute(audio)
}

/// Concatenate each run of six fbank rows into one token-rate row; trailing
/// frames that do not fill a token are dropped.
pub fn stack_to_tokens(fb: &FbankFrames) -> Array2<f64> {
    stack_rows(fb.features.view(), FRAMES_PER_TOKEN)
}

pub(crate) fn stack_rows(rows: ArrayView2<f64>, group: usize) -> Array2<f64> {
    let n = rows.nrows() / group;
    let width = rows.ncols();
    Array2::from_shape_fn((n, group * width), |(i, j)| rows[[i * group + j / width, j % width]])
}
