//! Rational-ratio windowed-sinc resampler.

use std::collections::HashMap;

use super::audio::AudioBuffer;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: f64 = 24.0;
const ROLLOFF: f64 = 0.94;
const KAISER_BETA: f64 = 9.0;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Precomputed polyphase kernel for one rate pair. Output sample `n` sits at
/// input position `n · down / up`; input beyond either end counts as zero.
#[derive(Debug, Clone)]
pub(crate) struct RationalResampler {
    src: u64,
    dst: u64,
    up: u64,
    down: u64,
    taps: i64,
    half_width: f64,
    cutoff: f64,
    tables: HashMap<u64, Vec<f64>>,
}

impl RationalResampler {
    pub(crate) fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        if source_rate == 0 || target_rate == 0 {
            return Err(Error::InvalidParameter("sample rates must be positive".into()));
        }
        let (src, dst) = (source_rate as u64, target_rate as u64);
        let g = gcd(src, dst);
        // Cutoff in cycles per input sample.
        let cutoff = 0.5 * ROLLOFF * (dst as f64 / src as f64).min(1.0);
        let half_width = ZERO_CROSSINGS / (2.0 * cutoff);
        Ok(Self {
            src,
            dst,
            up: dst / g,
            down: src / g,
            taps: half_width.ceil() as i64,
            half_width,
            cutoff,
            tables: HashMap::new(),
        })
    }

    pub(crate) fn output_len(&self, input_len: usize) -> usize {
        ((input_len as u64 * self.dst + self.src / 2) / self.src) as usize
    }

    /// Input samples that must be known before output `n` is final.
    pub(crate) fn input_needed(&self, n: usize) -> usize {
        let base = (n as u64 * self.down / self.up) as i64;
        (base + self.taps + 1).max(0) as usize
    }

    fn kernel(&self, t: f64) -> f64 {
        let r = t / self.half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        2.0 * self.cutoff * sinc(2.0 * self.cutoff * t) * bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / bessel_i0(KAISER_BETA)
    }

    /// Output sample `n` from input samples stored in `x`, where `x[0]` is
    /// input index `offset`. Indices outside `offset..offset + x.len()` and
    /// beyond `input_len` contribute nothing.
    pub(crate) fn sample(&mut self, x: &[f32], offset: usize, input_len: usize, n: usize) -> f32 {
        let pos = n as u64 * self.down;
        let base = (pos / self.up) as i64;
        let phase = pos % self.up;
        if !self.tables.contains_key(&phase) {
            let frac = phase as f64 / self.up as f64;
            let w = (-self.taps + 1..=self.taps).map(|k| self.kernel(frac - k as f64)).collect();
            self.tables.insert(phase, w);
        }
        let weights = &self.tables[&phase];
        let mut acc = 0.0;
        for (w, k) in weights.iter().zip(-self.taps + 1..=self.taps) {
            let idx = base + k;
            if idx >= offset as i64 && (idx as usize) < input_len && ((idx as usize) - offset) < x.len() {
                acc += w * x[idx as usize - offset] as f64;
            }
        }
        acc as f32
    }
}

/// Incremental form of [`resample`]: feeding a signal in pieces and then
/// calling `finish` yields exactly the samples `resample` would produce.
#[derive(Debug, Clone)]
pub(crate) struct StreamingResampler {
    inner: RationalResampler,
    buffer: Vec<f32>,
    offset: usize,
    received: usize,
    emitted: usize,
}

impl StreamingResampler {
    pub(crate) fn new(source_rate: u32, target_rate: u32) -> Result<Self> {
        Ok(Self {
            inner: RationalResampler::new(source_rate, target_rate)?,
            buffer: Vec::new(),
            offset: 0,
            received: 0,
            emitted: 0,
        })
    }

    pub(crate) fn push(&mut self, samples: &[f32]) -> Vec<f32> {
        self.buffer.extend_from_slice(samples);
        self.received += samples.len();
        let mut out = Vec::new();
        while self.inner.input_needed(self.emitted) <= self.received {
            out.push(self.inner.sample(&self.buffer, self.offset, self.received, self.emitted));
            self.emitted += 1;
        }
        // Keep only what the next output's kernel can still reach.
        let keep_from = self.inner.input_needed(self.emitted).saturating_sub(2 * self.inner.taps as usize + 1);
        if keep_from > self.offset {
            let drop = (keep_from - self.offset).min(self.buffer.len());
            self.buffer.drain(..drop);
            self.offset += drop;
        }
        out
    }

    pub(crate) fn finish(&mut self) -> Vec<f32> {
        let total = self.inner.output_len(self.received);
        let out = (self.emitted..total)
            .map(|n| self.inner.sample(&self.buffer, self.offset, self.received, n))
            .collect();
        self.emitted = total.max(self.emitted);
        out
    }
}

/// Resample to `target_rate`; the output has `round(len · target / source)`
/// samples. Equal rates return an identical copy.
pub fn resample(audio: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidParameter("target rate must be positive".into()));
    }
    if audio.sample_rate() == target_rate {
        return Ok(audio.clone());
    }
    let mut r = RationalResampler::new(audio.sample_rate(), target_rate)?;
    let x = audio.samples();
    let out = (0..r.output_len(x.len())).map(|n| r.sample(x, 0, x.len(), n)).collect();
    AudioBuffer::new(out, target_rate)
}
