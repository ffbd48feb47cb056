//! Audio front end: silence removal, loudness equalization, framing and
//! spectral features.

mod cache;
mod features;
mod framing;
mod mel;
mod preprocess;

pub use cache::{read_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub use features::{
    deltas, log_mfb, mfcc, FeatureExtractor, FeatureKind, FeatureMatrix, SpectralAnalyzer,
    DELTA_HALF_WIDTH, LOG_FLOOR, N_FFT, N_LOG_MFB, N_MFCC, N_MFCC_MELS,
};
pub use framing::{frame_count, frame_signal, hann, Frames, FRAME_MS, HOP_MS};
pub use mel::{hz_to_mel, mel_to_hz, MelFilterBank};
pub use preprocess::{
    equalize_loudness, remove_silence, silence_portions, Preprocess, DEFAULT_LOUDNESS_WINDOW_MS,
    DEFAULT_SILENCE_FRAME_MS, DEFAULT_SILENCE_THRESHOLD_DB, DEFAULT_TARGET_RMS, LOUDNESS_FLOOR_RMS,
};
