//! Griffin-Lim phase reconstruction at the codec's fbank geometry.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2, Zip};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use realfft::num_complex::Complex64;

use super::audio::{AudioBuffer, CODEC_RATE};
use super::mel::FbankExtractor;
use super::stft::Stft;
use crate::error::{Error, Result};

/// Mel-to-waveform inverter: regularized pseudo-inverse from mel power to
/// linear power, then Griffin-Lim on the resulting magnitudes.
#[derive(Debug, Clone)]
pub struct GriffinLim {
    stft: Stft,
    mel_inverse: Array2<f64>,
}

/// Outcome of one reconstruction run.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub signal: Vec<f64>,
    /// Phase of the final spectral estimate, `T × bins`.
    pub phase: Array2<f64>,
    /// Consistency error `‖|STFT(x_k)| − S‖` after each iteration.
    pub errors: Vec<f64>,
}

impl Default for GriffinLim {
    fn default() -> Self {
        Self::new()
    }
}

impl GriffinLim {
    pub fn new() -> Self {
        let fb = FbankExtractor::new();
        Self {
            mel_inverse: fb.mel().pseudo_inverse(1e-4),
            stft: fb.stft().clone(),
        }
    }

    pub fn stft(&self) -> &Stft {
        &self.stft
    }

    /// Linear magnitudes `T × bins` from mel power `T × 80`.
    pub fn mel_to_magnitude(&self, mel_power: ArrayView2<f64>) -> Result<Array2<f64>> {
        if mel_power.ncols() != self.mel_inverse.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.mel_inverse.ncols(),
                actual: mel_power.ncols(),
            });
        }
        if mel_power.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::InvalidParameter("mel energies must be finite and non-negative".into()));
        }
        Ok(mel_power.dot(&self.mel_inverse.t()).mapv(|p| p.max(0.0).sqrt()))
    }

    /// Random phase in `[-π, π)` for every cell.
    pub fn random_phase(frames: usize, bins: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((frames, bins), || rng.random_range(-PI..PI))
    }

    /// Run `iterations` projection rounds from the given initial phase.
    pub fn reconstruct(&self, magnitude: ArrayView2<f64>, init_phase: ArrayView2<f64>, iterations: usize) -> Result<Reconstruction> {
        if magnitude.dim() != init_phase.dim() {
            return Err(Error::DimensionMismatch {
                expected: magnitude.len(),
                actual: init_phase.len(),
            });
        }
        if magnitude.iter().any(|&m| m < 0.0) {
            return Err(Error::InvalidParameter("negative magnitude".into()));
        }
        let mut estimate = Zip::from(&magnitude)
            .and(&init_phase)
            .map_collect(|&m, &p| Complex64::from_polar(m, p));
        let mut errors = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let signal = self.stft.inverse(&estimate)?;
            let consistent = self.stft.forward_or_empty(&signal)?;
            errors.push(consistency_error(magnitude, consistent.view()));
            Zip::from(&mut estimate)
                .and(&consistent)
                .and(&magnitude)
                .for_each(|e, &c, &m| {
                    let n = c.norm();
                    *e = if n > 0.0 { c * (m / n) } else { Complex64::new(m, 0.0) };
                });
        }
        let signal = self.stft.inverse(&estimate)?;
        Ok(Reconstruction {
            signal,
            phase: estimate.mapv(|c| c.arg()),
            errors,
        })
    }
}

impl Stft {
    fn forward_or_empty(&self, signal: &[f64]) -> Result<Array2<Complex64>> {
        if signal.is_empty() {
            Ok(Array2::zeros((0, self.config().num_bins())))
        } else {
            self.forward(signal)
        }
    }
}

/// Distance between `|C|` and the target magnitudes, in the full-spectrum norm
/// (interior bins of a one-sided spectrum count twice).
pub fn consistency_error(target: ArrayView2<f64>, spectrum: ArrayView2<Complex64>) -> f64 {
    let bins = target.ncols();
    let mut acc = 0.0;
    for (t, s) in target.outer_iter().zip(spectrum.outer_iter()) {
        for k in 0..bins {
            let w = if k == 0 || k == bins - 1 { 1.0 } else { 2.0 };
            acc += w * (s[k].norm() - t[k]).powi(2);
        }
    }
    acc.sqrt()
}

/// Waveform at 16 kHz from mel power `T × 80` (`T × 160` samples).
pub fn griffin_lim(mel_power: ArrayView2<f64>, iterations: usize, seed: u64) -> Result<AudioBuffer> {
    if iterations == 0 {
        return Err(Error::InvalidParameter("griffin-lim needs at least one iteration".into()));
    }
    let gl = GriffinLim::new();
    let mag = gl.mel_to_magnitude(mel_power)?;
    let phase = GriffinLim::random_phase(mag.nrows(), mag.ncols(), seed);
    let rec = gl.reconstruct(mag.view(), phase.view(), iterations)?;
    AudioBuffer::from_f64(&rec.signal, CODEC_RATE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_utterance, SpeakerProfile};

    #[test]
    fn zero_mel_gives_zero_waveform() {
        let out = griffin_lim(Array2::zeros((12, 80)).view(), 4, 1).unwrap();
        assert_eq!(out.len(), 12 * 160);
        assert!(out.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn deterministic_for_a_seed() {
        let audio = synth_utterance(&SpeakerProfile::preset(0), 0.5, 3);
        let mel = FbankExtractor::new().mel_power(&audio).unwrap();
        let a = griffin_lim(mel.view(), 5, 42).unwrap();
        let b = griffin_lim(mel.view(), 5, 42).unwrap();
        assert_eq!(a, b);
        let c = griffin_lim(mel.view(), 5, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn consistency_error_never_increases() {
        let audio = synth_utterance(&SpeakerProfile::preset(1), 0.6, 5);
        let gl = GriffinLim::new();
        let mel = FbankExtractor::new().mel_power(&audio).unwrap();
        let mag = gl.mel_to_magnitude(mel.view()).unwrap();
        let phase = GriffinLim::random_phase(mag.nrows(), mag.ncols(), 9);
        let rec = gl.reconstruct(mag.view(), phase.view(), 40).unwrap();
        for pair in rec.errors.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-9), "{} -> {}", pair[0], pair[1]);
        }
        assert!(rec.errors.last().unwrap() < &(0.8 * rec.errors[0]));
    }

    #[test]
    fn rejects_negative_magnitudes() {
        let gl = GriffinLim::new();
        let mut mel = Array2::<f64>::zeros((3, 80));
        mel[[1, 4]] = -1.0;
        assert!(gl.mel_to_magnitude(mel.view()).is_err());
        assert!(griffin_lim(mel.view(), 1, 0).is_err());
    }
}
