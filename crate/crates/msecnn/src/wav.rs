//! WAV input and output.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use msecnn_core::audio::AudioClip;

use crate::error::{Error, Result};
use crate::fsutil;

fn audio_err(path: &Path, msg: impl ToString) -> Error {
    Error::Audio {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Reads a PCM or float WAV file, averaging channels to mono.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fsutil::read(path)?;
    let mut reader = WavReader::new(Cursor::new(bytes)).map_err(|e| audio_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| audio_err(path, e))?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| audio_err(path, e))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    AudioClip::new(mono, spec.sample_rate).map_err(|e| audio_err(path, e))
}

/// Writes mono 16-bit PCM; out-of-range samples saturate.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::new());
    {
        let mut w = WavWriter::new(&mut buf, spec).map_err(|e| audio_err(path, e))?;
        for &s in &clip.samples {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(q).map_err(|e| audio_err(path, e))?;
        }
        w.finalize().map_err(|e| audio_err(path, e))?;
    }
    fsutil::write_atomic(path, buf.get_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let samples: Vec<f32> = (0..1000).map(|i| (i as f32 * 0.05).sin() * 0.8).collect();
        write_wav(&p, &AudioClip::new(samples.clone(), 12_000).unwrap()).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.sample_rate, 12_000);
        assert_eq!(back.samples.len(), samples.len());
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 0.5 / 32768.0);
        }
    }

    #[test]
    fn stereo_is_averaged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        for _ in 0..10 {
            w.write_sample(0.5f32).unwrap();
            w.write_sample(-0.25f32).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&p).unwrap();
        assert_eq!(clip.samples, vec![0.125; 10]);
    }

    #[test]
    fn garbage_is_audio_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.wav");
        std::fs::write(&p, b"ID3 not a wav file").unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Audio { .. })));
        assert!(matches!(
            read_wav(&dir.path().join("missing.wav")),
            Err(Error::Io { .. })
        ));
    }
}
