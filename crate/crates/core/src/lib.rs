pub mod agrvq;
pub mod bitstream;
pub mod codec;
pub mod container;
pub mod corpus;
pub mod decoder;
pub mod dsp;
pub mod error;
pub mod metrics;
mod linalg;
pub mod semantic;
pub mod synth;

pub use agrvq::{AgrvqQuantizer, AgrvqStage, CombinedIndex, Grouping};
pub use bitstream::{BitstreamHeader, TokenFrame};
pub use codec::{CodecConfig, CodecModel, FeatureEncoder, Stage1Report, StreamDecoder};
pub use corpus::{load_corpus, CorpusEntry};
pub use decoder::{ChunkedVocoder, DecoderWeights, StreamState};
pub use dsp::{AudioBuffer, WavFormat};
pub use error::{Error, Result};
pub use metrics::{evaluate_codec, MetricsReport, Transcoder};
pub use semantic::SemanticCodebook;
