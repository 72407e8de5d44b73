//! Deterministic signal-processing kernels shared by the tokenizers, the
//! detokenizer and the metrics.

pub mod audio;
pub mod griffin_lim;
pub mod mel;
pub mod pitch;
pub mod resample;
pub mod stft;
pub mod wav;

pub use audio::{AudioBuffer, CODEC_RATE, HIGH_RATE};
pub use griffin_lim::{griffin_lim, GriffinLim};
pub use mel::{fbank, stack_to_tokens, FbankExtractor, FbankFrames, MelFilterbank, FRAMES_PER_TOKEN};
pub use pitch::{estimate_pitch, PitchTrack};
pub use resample::resample;
pub use stft::{istft, stft, SpectralFrames, Stft, StftConfig};
pub use wav::{read_wav, write_wav, WavFormat};
