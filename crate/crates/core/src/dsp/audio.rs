use crate::error::{Error, Result};

/// Sample rate of the codec's analysis path.
pub const CODEC_RATE: u32 = 16_000;
/// Optional high-rate synthesis output.
pub const HIGH_RATE: u32 = 24_000;

/// Mono waveform with its sample rate.
///
/// Samples are nominally in `[-1, 1]`; the constructor only enforces
/// finiteness, and clipping happens on WAV egress.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn from_f64(samples: &[f64], sample_rate: u32) -> Result<Self> {
        Self::new(samples.iter().map(|&s| s as f32).collect(), sample_rate)
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&s| s as f64).collect()
    }

    /// Copy of the sub-range `[start, end)`, clamped to the buffer.
    pub fn slice(&self, start: usize, end: usize) -> AudioBuffer {
        let end = end.min(self.samples.len());
        let start = start.min(end);
        AudioBuffer {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn scaled(&self, gain: f32) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|&s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn require_rate(&self, rate: u32) -> Result<()> {
        if self.sample_rate != rate {
            return Err(Error::SampleRate {
                expected: rate,
                actual: self.sample_rate,
            });
        }
        Ok(())
    }

    pub(crate) fn require_codec_rate(&self) -> Result<()> {
        match self.sample_rate {
            CODEC_RATE | HIGH_RATE => Ok(()),
            actual => Err(Error::SampleRate {
                expected: CODEC_RATE,
                actual,
            }),
        }
    }
}

/// Truncate two signals to their common length.
pub(crate) fn common_prefix<'a>(a: &'a AudioBuffer, b: &'a AudioBuffer) -> Result<(&'a [f32], &'a [f32])> {
    if a.sample_rate() != b.sample_rate() {
        return Err(Error::SampleRate {
            expected: a.sample_rate(),
            actual: b.sample_rate(),
        });
    }
    let n = a.len().min(b.len());
    Ok((&a.samples()[..n], &b.samples()[..n]))
}
