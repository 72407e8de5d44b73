//! Little-endian RIFF/WAV ingestion and egress.

use std::io::{Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::audio::AudioBuffer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    #[default]
    Pcm16,
    Float32,
}

/// Read any integer-PCM or 32-bit float WAV, averaging channels to mono.
pub fn read_wav_from<R: Read>(reader: R) -> Result<AudioBuffer> {
    let reader = WavReader::new(reader)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedHeader("zero channels".into()));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader.into_samples::<f32>().collect::<std::result::Result<_, _>>()?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let file = std::fs::File::open(path.as_ref())?;
    read_wav_from(std::io::BufReader::new(file))
}

pub fn write_wav_to<W: Write + Seek>(writer: W, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: match format {
            WavFormat::Pcm16 => 16,
            WavFormat::Float32 => 32,
        },
        sample_format: match format {
            WavFormat::Pcm16 => SampleFormat::Int,
            WavFormat::Float32 => SampleFormat::Float,
        },
    };
    let mut w = WavWriter::new(writer, spec)?;
    for &s in audio.samples() {
        let s = s.clamp(-1.0, 1.0);
        match format {
            WavFormat::Pcm16 => w.write_sample((s * 32767.0).round() as i16)?,
            WavFormat::Float32 => w.write_sample(s)?,
        }
    }
    w.finalize()?;
    Ok(())
}

pub fn write_wav(path: impl AsRef<Path>, audio: &AudioBuffer, format: WavFormat) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_wav_to(std::io::BufWriter::new(file), audio, format)
}
