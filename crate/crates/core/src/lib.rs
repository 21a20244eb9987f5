//! Bass-to-drums arrangement: audio I/O, mel-spectrogram features and their
//! inversion, chunked datasets, a small reverse-mode autograd engine, the
//! translation networks, and evaluation metrics.

pub mod audio_io;
pub mod autograd;
pub mod dataset;
pub mod diagnostics;
pub mod evaluation;
pub mod inversion;
pub mod matrix;
pub mod models;
pub mod pipeline;
pub mod spectral;
pub mod synth;

pub use audio_io::{AudioError, Waveform};
pub use dataset::{Chunk, DatasetError, Domain, LevelImage};
pub use inversion::InversionError;
pub use matrix::Matrix;
pub use pipeline::{PipelineError, Preset, RunConfig};
pub use spectral::{FilterBank, SpectralError, StftParams};
