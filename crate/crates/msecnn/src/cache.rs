//! Per-clip log-Mel feature records.
//!
//! A record is the magic `MSEFEAT1`, `n_mels` and `n_frames` as u32 LE, then
//! `n_mels * n_frames` f32 LE values, row-major (mel band outer).

use std::path::{Path, PathBuf};

use msecnn_core::audio::{MelExtractor, MelSpectrogram, SpectrogramConfig};
use msecnn_core::Tensor;
use rayon::prelude::*;

use crate::dataset::{default_manifest_path, DatasetManifest};
use crate::error::{CacheError, Error, Result};
use crate::{fsutil, wav};

pub const MAGIC: &[u8; 8] = b"MSEFEAT1";
const HEADER: usize = 16;

pub fn encode_record(values: &Tensor<f32>) -> Vec<u8> {
    let (m, f) = (values.shape()[0], values.shape()[1]);
    let mut out = Vec::with_capacity(HEADER + values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(m as u32).to_le_bytes());
    out.extend_from_slice(&(f as u32).to_le_bytes());
    for v in values.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes a record and checks it against the expected `(n_mels, n_frames)`.
pub fn decode_record(bytes: &[u8], path: &Path, expected: (usize, usize)) -> Result<Tensor<f32>> {
    let p = || path.to_path_buf();
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        let n = bytes.len().min(MAGIC.len());
        return Err(CacheError::BadMagic {
            path: p(),
            found: String::from_utf8_lossy(&bytes[..n]).into_owned(),
        }
        .into());
    }
    if bytes.len() < HEADER {
        return Err(CacheError::Truncated {
            path: p(),
            detail: "header shorter than 16 bytes".into(),
        }
        .into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let found = (word(8), word(12));
    if found != expected {
        return Err(CacheError::ShapeMismatch {
            path: p(),
            found,
            expected,
        }
        .into());
    }
    let need = HEADER + found.0 * found.1 * 4;
    if bytes.len() != need {
        return Err(CacheError::Truncated {
            path: p(),
            detail: format!("{} bytes, expected {need}", bytes.len()),
        }
        .into());
    }
    let data = bytes[HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Tensor::new(&[found.0, found.1], data)?)
}

/// File name of a clip's record; bytes outside `[A-Za-z0-9_-]` are %-escaped.
pub fn record_name(clip_id: &str) -> String {
    let mut s = String::with_capacity(clip_id.len() + 5);
    for b in clip_id.bytes() {
        if b.is_ascii_alphanumeric() || b == b'_' || b == b'-' {
            s.push(b as char);
        } else {
            s.push_str(&format!("%{b:02X}"));
        }
    }
    s.push_str(".feat");
    s
}

/// A directory of feature records built with one front-end config.
#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
    frontend: SpectrogramConfig,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>, frontend: SpectrogramConfig) -> Self {
        Self {
            dir: dir.into(),
            frontend,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn frontend(&self) -> &SpectrogramConfig {
        &self.frontend
    }

    pub fn record_path(&self, clip_id: &str) -> PathBuf {
        self.dir.join(record_name(clip_id))
    }

    fn expected(&self) -> (usize, usize) {
        (self.frontend.n_mels, self.frontend.n_frames())
    }

    pub fn write(&self, spec: &MelSpectrogram) -> Result<()> {
        if (spec.values.shape()[0], spec.values.shape()[1]) != self.expected() {
            return Err(CacheError::ShapeMismatch {
                path: self.record_path(&spec.clip_id),
                found: (spec.values.shape()[0], spec.values.shape()[1]),
                expected: self.expected(),
            }
            .into());
        }
        fsutil::write_atomic(&self.record_path(&spec.clip_id), &encode_record(&spec.values))
    }

    pub fn read(&self, clip_id: &str) -> Result<MelSpectrogram> {
        let path = self.record_path(clip_id);
        let bytes = fsutil::read(&path)?;
        Ok(MelSpectrogram {
            values: decode_record(&bytes, &path, self.expected())?,
            clip_id: clip_id.to_string(),
        })
    }
}

/// Worker count: `MSECNN_THREADS` if set and positive, else all cores.
pub fn thread_count() -> Result<usize> {
    match std::env::var("MSECNN_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!(
                "MSECNN_THREADS must be a positive integer, got {v:?}"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheSummary {
    pub records: usize,
    pub bytes: u64,
}

/// Audio file for an annotated path; `.mp3` entries point at the
/// pre-converted `.wav` beside them.
pub fn wav_path(audio_root: &Path, annotated: &str) -> PathBuf {
    let path = audio_root.join(annotated);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mp3")) {
        path.with_extension("wav")
    } else {
        path
    }
}

/// Extracts every clip of `manifest` into `cache_dir` in parallel, then
/// writes the manifest beside the records. Errors are reported for the
/// first failing clip in manifest order.
pub fn cache_build(
    manifest: &DatasetManifest,
    audio_root: &Path,
    cache_dir: &Path,
    threads: usize,
) -> Result<CacheSummary> {
    manifest.validate()?;
    let cache = FeatureCache::new(cache_dir, manifest.frontend.clone());
    let extractor = MelExtractor::new(&manifest.frontend)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<Result<u64>> = pool.install(|| {
        manifest
            .clips
            .par_iter()
            .map(|clip| {
                let path = wav_path(audio_root, &clip.audio_path);
                let audio = wav::read_wav(&path)?;
                if audio.sample_rate != manifest.frontend.sample_rate {
                    return Err(Error::Audio {
                        path,
                        msg: format!(
                            "sample rate {} Hz, expected {} Hz (resample before extraction)",
                            audio.sample_rate, manifest.frontend.sample_rate
                        ),
                    });
                }
                let spec = extractor.extract(&audio, &clip.clip_id)?;
                cache.write(&spec)?;
                Ok((HEADER + spec.values.len() * 4) as u64)
            })
            .collect()
    });
    let mut bytes = 0;
    for r in results {
        bytes += r?;
    }
    manifest.save(&default_manifest_path(cache_dir))?;
    Ok(CacheSummary {
        records: manifest.clips.len(),
        bytes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(m: usize, f: usize) -> MelSpectrogram {
        MelSpectrogram {
            values: Tensor::from_fn(&[m, f], |i| (i as f32).sin() - 3.0),
            clip_id: "clip 7/a".into(),
        }
    }

    #[test]
    fn mp3_entries_resolve_to_wav() {
        let root = Path::new("/data");
        assert_eq!(wav_path(root, "f/a-b.MP3"), Path::new("/data/f/a-b.wav"));
        assert_eq!(wav_path(root, "f/a.wav"), Path::new("/data/f/a.wav"));
        assert_eq!(wav_path(root, "f/a.flac"), Path::new("/data/f/a.flac"));
    }

    #[test]
    fn write_read_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = SpectrogramConfig::desk();
        cfg.clip_seconds = 0.1;
        let cache = FeatureCache::new(dir.path(), cfg.clone());
        let s = spec(cfg.n_mels, cfg.n_frames());
        cache.write(&s).unwrap();
        let back = cache.read("clip 7/a").unwrap();
        assert!(back
            .values
            .data()
            .iter()
            .zip(s.values.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(record_name("clip 7/a"), "clip%207%2Fa.feat");
    }

    #[test]
    fn canonical_cache_rejects_short_record() {
        let bytes = encode_record(&spec(96, 1000).values);
        let err = decode_record(&bytes, Path::new("r.feat"), (96, 1366)).unwrap_err();
        assert!(matches!(
            err,
            Error::Cache(CacheError::ShapeMismatch {
                found: (96, 1000),
                expected: (96, 1366),
                ..
            })
        ));
    }

    #[test]
    fn magic_and_truncation() {
        let mut bytes = encode_record(&spec(4, 5).values);
        assert!(decode_record(&bytes, Path::new("r"), (4, 5)).is_ok());
        bytes.pop();
        assert!(matches!(
            decode_record(&bytes, Path::new("r"), (4, 5)),
            Err(Error::Cache(CacheError::Truncated { .. }))
        ));
        assert!(matches!(
            decode_record(&bytes[..12], Path::new("r"), (4, 5)),
            Err(Error::Cache(CacheError::Truncated { .. }))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode_record(&bytes, Path::new("r"), (4, 5)),
            Err(Error::Cache(CacheError::BadMagic { .. }))
        ));
    }
}
