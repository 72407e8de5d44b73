//! Normalized cross-correlation pitch tracker, one estimate per 10 ms.

use super::audio::AudioBuffer;
use crate::error::Result;

pub const PITCH_HOP_MS: f64 = 10.0;
const WINDOW_MS: f64 = 40.0;
pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 600.0;
/// Peak normalized correlation below which a frame is unvoiced.
pub const VOICING_THRESHOLD: f64 = 0.3;
/// Lags whose correlation is within this fraction of the best are preferred
/// when shorter, which suppresses sub-harmonic (octave-down) picks.
const OCTAVE_TOLERANCE: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    /// Fundamental frequency per frame in Hz, 0 when unvoiced.
    pub f0: Vec<f64>,
    pub hop_ms: f64,
}

impl PitchTrack {
    pub fn voiced(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.f0.iter().copied().enumerate().filter(|(_, f)| *f > 0.0)
    }
}

pub fn estimate_pitch(audio: &AudioBuffer) -> Result<PitchTrack> {
    audio.require_codec_rate()?;
    let fs = audio.sample_rate() as f64;
    let x = audio.to_f64();
    let hop = (fs * PITCH_HOP_MS / 1000.0).round() as usize;
    let win = (fs * WINDOW_MS / 1000.0).round() as usize;
    let min_lag = (fs / F0_MAX).floor() as usize;
    let max_lag = (fs / F0_MIN).ceil() as usize;
    let frames = x.len().div_ceil(hop);

    let sample = |i: isize| -> f64 {
        if i < 0 || i as usize >= x.len() {
            0.0
        } else {
            x[i as usize]
        }
    };

    let mut f0 = Vec::with_capacity(frames);
    let mut seg = vec![0.0; win + max_lag + 1];
    let mut nccf = vec![0.0; max_lag + 2];
    for j in 0..frames {
        let start = (j * hop) as isize - (win / 2) as isize;
        for (k, s) in seg.iter_mut().enumerate() {
            *s = sample(start + k as isize);
        }
        let e0: f64 = seg[..win].iter().map(|v| v * v).sum();
        if e0 <= 1e-12 * win as f64 {
            f0.push(0.0);
            continue;
        }
        // Running energy of the lagged segment.
        let mut e_lag: f64 = seg[min_lag..min_lag + win].iter().map(|v| v * v).sum();
        for lag in min_lag..=max_lag + 1 {
            let cross: f64 = seg[..win].iter().zip(&seg[lag..lag + win]).map(|(a, b)| a * b).sum();
            nccf[lag] = if e_lag > 0.0 { cross / (e0 * e_lag).sqrt() } else { 0.0 };
            if lag + win < seg.len() {
                e_lag += seg[lag + win].powi(2) - seg[lag].powi(2);
                e_lag = e_lag.max(0.0);
            }
        }
        let (best_lag, best) = (min_lag..=max_lag)
            .map(|l| (l, nccf[l]))
            .fold((min_lag, f64::NEG_INFINITY), |acc, v| if v.1 > acc.1 { v } else { acc });
        if best < VOICING_THRESHOLD {
            f0.push(0.0);
            continue;
        }
        let lag = (min_lag..=best_lag)
            .find(|&l| {
                let local_peak = (l == min_lag || nccf[l] >= nccf[l - 1]) && nccf[l] >= nccf[l + 1];
                local_peak && nccf[l] >= OCTAVE_TOLERANCE * best
            })
            .unwrap_or(best_lag);
        let refined = if lag > min_lag {
            let (a, b, c) = (nccf[lag - 1], nccf[lag], nccf[lag + 1]);
            let denom = a - 2.0 * b + c;
            if denom.abs() > 1e-12 {
                lag as f64 + (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
            } else {
                lag as f64
            }
        } else {
            lag as f64
        };
        let freq = fs / refined;
        f0.push(if (F0_MIN..=F0_MAX).contains(&freq) { freq } else { 0.0 });
    }
    Ok(PitchTrack {
        f0,
        hop_ms: PITCH_HOP_MS,
    })
}
