//! Audio front end: radix-2 FFT, STFT and log-Mel spectrogram.

pub mod fft;
pub mod spectrogram;

pub use fft::{fft_in_place, fft_radix2};
pub use spectrogram::{
    hann, hz_to_mel, mel_filterbank, mel_points, mel_spectrogram, mel_to_hz, stft, AudioClip, MelExtractor,
    MelSpectrogram, SpectrogramConfig, LOG_FLOOR,
};
