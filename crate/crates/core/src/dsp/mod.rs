//! Waveform <-> normalized mel-spectrogram conversion and waveform
//! reconstruction from (possibly modified) magnitudes.

mod mel;
mod reconstruct;
mod stft;

pub use mel::{mel_invert, mel_project, MelFilterbank, MelScale, MelSpectrogram, NormMeta};
pub use reconstruct::{
    align_frames, griffin_lim, magnitude_of, phase_preserving_reconstruct, GriffinLimInit, GriffinLimOutput,
    MAX_FRAME_PAD,
};
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};

