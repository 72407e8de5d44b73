//! Centered short-time Fourier transform with reflection padding and its
//! least-squares inverse.
//!
//! Frame `j` is centered on sample `j * hop`; the signal is reflected (without
//! repeating the edge sample) to fill the half-frame before the start and
//! after the end, so a signal of `len` samples yields `ceil(len / hop)` frames.
//! The inverse folds overlap-add contributions that fall into the padding back
//! onto the samples they were reflected from, which makes `stft ∘ istft` the
//! orthogonal projection onto consistent spectrograms.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::Array2;
use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use super::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: usize,
}

impl StftConfig {
    pub const fn new(fft_size: usize, hop: usize, window: usize) -> Self {
        Self {
            fft_size,
            hop,
            window,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_power_of_two() {
            return Err(Error::InvalidParameter(format!(
                "fft size {} is not a power of two",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.window == 0 {
            return Err(Error::InvalidParameter("hop and window must be positive".into()));
        }
        if self.hop > self.window {
            return Err(Error::InvalidParameter(format!(
                "hop {} exceeds window {}",
                self.hop, self.window
            )));
        }
        if self.window > self.fft_size {
            return Err(Error::InvalidParameter(format!(
                "window {} exceeds fft size {}",
                self.window, self.fft_size
            )));
        }
        Ok(())
    }
}

/// Complex STFT frames, `T × (fft_size/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFrames {
    pub frames: Array2<Complex64>,
    pub config: StftConfig,
    pub sample_rate: u32,
}

impl SpectralFrames {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn magnitudes(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm())
    }

    pub fn power(&self) -> Array2<f64> {
        self.frames.mapv(|c| c.norm_sqr())
    }
}

/// Periodic Hann window of length `len`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Index into a signal of length `len` with numpy-style `reflect` extension.
pub(crate) fn reflect_index(n: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut m = n.rem_euclid(period);
    if m >= len as isize {
        m = period - m;
    }
    m as usize
}

/// Reusable STFT analysis/synthesis pair with cached FFT plans.
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("config", &self.config).finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut window = vec![0.0; config.fft_size];
        let offset = (config.fft_size - config.window) / 2;
        window[offset..offset + config.window].copy_from_slice(&hann(config.window));
        let mut planner = RealFftPlanner::<f64>::new();
        Ok(Self {
            config,
            window,
            forward: planner.plan_fft_forward(config.fft_size),
            inverse: planner.plan_fft_inverse(config.fft_size),
        })
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    /// Frame count produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len.div_ceil(self.config.hop)
    }

    /// Analysis window, zero-padded and centered to the FFT length.
    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn forward(&self, signal: &[f64]) -> Result<Array2<Complex64>> {
        if signal.is_empty() {
            return Err(Error::EmptyInput("stft signal"));
        }
        let StftConfig { fft_size, hop, .. } = self.config;
        let frames = self.num_frames(signal.len());
        let pad = (fft_size / 2) as isize;
        let mut out = Array2::zeros((frames, self.config.num_bins()));
        let mut buf = self.forward.make_input_vec();
        let mut spec = self.forward.make_output_vec();
        let mut scratch = self.forward.make_scratch_vec();
        for j in 0..frames {
            let start = (j * hop) as isize - pad;
            for (k, b) in buf.iter_mut().enumerate() {
                let w = self.window[k];
                *b = if w == 0.0 {
                    0.0
                } else {
                    w * signal[reflect_index(start + k as isize, signal.len())]
                };
            }
            self.forward
                .process_with_scratch(&mut buf, &mut spec, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            out.row_mut(j).iter_mut().zip(&spec).for_each(|(o, s)| *o = *s);
        }
        Ok(out)
    }

    /// Minimum over one hop period of the steady-state squared-window sum.
    fn min_window_overlap(&self) -> f64 {
        let hop = self.config.hop;
        (0..hop)
            .map(|r| self.window.iter().skip(r).step_by(hop).map(|w| w * w).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }

    /// Least-squares inverse; the output has `frames × hop` samples.
    pub fn inverse(&self, frames: &Array2<Complex64>) -> Result<Vec<f64>> {
        let StftConfig { fft_size, hop, .. } = self.config;
        if frames.ncols() != self.config.num_bins() {
            return Err(Error::DimensionMismatch {
                expected: self.config.num_bins(),
                actual: frames.ncols(),
            });
        }
        if self.min_window_overlap() < 1e-10 {
            return Err(Error::InvalidParameter(format!(
                "window {} with hop {} does not satisfy overlap-add",
                self.config.window, hop
            )));
        }
        let len = frames.nrows() * hop;
        if len == 0 {
            return Ok(Vec::new());
        }
        let pad = (fft_size / 2) as isize;
        let mut num = vec![0.0; len];
        let mut den = vec![0.0; len];
        let mut spec = self.inverse.make_input_vec();
        let mut buf = self.inverse.make_output_vec();
        let mut scratch = self.inverse.make_scratch_vec();
        let scale = 1.0 / fft_size as f64;
        for (j, row) in frames.outer_iter().enumerate() {
            spec.iter_mut().zip(row.iter()).for_each(|(s, r)| *s = *r);
            spec[0].im = 0.0;
            if let Some(last) = spec.last_mut() {
                last.im = 0.0;
            }
            self.inverse
                .process_with_scratch(&mut spec, &mut buf, &mut scratch)
                .expect("fft buffer sizes are fixed by the plan");
            let start = (j * hop) as isize - pad;
            for (k, &w) in self.window.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let idx = reflect_index(start + k as isize, len);
                num[idx] += w * buf[k] * scale;
                den[idx] += w * w;
            }
        }
        Ok(num
            .iter()
            .zip(&den)
            .map(|(&n, &d)| if d > 1e-12 { n / d } else { 0.0 })
            .collect())
    }
}

pub fn stft(audio: &AudioBuffer, fft_size: usize, hop: usize, window: usize) -> Result<SpectralFrames> {
    let config = StftConfig::new(fft_size, hop, window);
    let frames = Stft::new(config)?.forward(&audio.to_f64())?;
    Ok(SpectralFrames {
        frames,
        config,
        sample_rate: audio.sample_rate(),
    })
}

pub fn istft(spec: &SpectralFrames) -> Result<AudioBuffer> {
    let samples = Stft::new(spec.config)?.inverse(&spec.frames)?;
    AudioBuffer::from_f64(&samples, spec.sample_rate)
}
