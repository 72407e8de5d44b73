//! Shared fixtures for the benchmarks.

use aqc_core::synth::{synth_corpus, SpeakerProfile};
use aqc_core::{AudioBuffer, CodecConfig, CodecModel};

pub fn corpus(speakers: usize, per_speaker: usize, seconds: f64, seed: u64) -> Vec<AudioBuffer> {
    let voices: Vec<_> = (0..speakers as u64).map(|i| SpeakerProfile::random(seed * 1000 + i)).collect();
    synth_corpus(&voices, per_speaker, seconds, seed).into_iter().map(|u| u.audio).collect()
}

/// A small model trained on about five minutes of synthetic speech.
pub fn small_model() -> CodecModel {
    let config = CodecConfig {
        k_sem: 128,
        kmeans_iters: 10,
        ..CodecConfig::default()
    };
    CodecModel::train_stage1(&corpus(8, 10, 4.0, 1), config, true).expect("benchmark model").0
}
