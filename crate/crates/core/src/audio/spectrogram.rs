//! STFT power spectrum and log-Mel features.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex;

use super::fft::fft_in_place;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor added before the logarithm; silent cells map to `log10(1e-10) = -10`.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono PCM audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Argument("audio samples must be finite".into()));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SpectrogramConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub clip_seconds: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        Self::canonical()
    }
}

impl SpectrogramConfig {
    /// 12 kHz, 512-point FFT, hop 256, 96 bands, 29.12 s: a 96x1366 input.
    pub fn canonical() -> Self {
        Self {
            sample_rate: 12_000,
            n_fft: 512,
            hop: 256,
            n_mels: 96,
            f_min: 0.0,
            f_max: 6_000.0,
            clip_seconds: 29.12,
        }
    }

    /// Reduced front end for CPU-scale experiments: 48 bands, 2.56 s clips
    /// (48x121 input).
    pub fn desk() -> Self {
        Self {
            n_mels: 48,
            clip_seconds: 2.56,
            ..Self::canonical()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Argument(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if !self.n_fft.is_power_of_two() || self.n_fft < 2 {
            return bad(alloc::format!("n_fft must be a power of two, got {}", self.n_fft));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return bad(alloc::format!("hop must be in 1..=n_fft, got {}", self.hop));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate as f64 / 2.0) {
            return bad(alloc::format!(
                "need 0 <= f_min < f_max <= sample_rate/2, got {}..{}",
                self.f_min,
                self.f_max
            ));
        }
        if !(self.clip_seconds > 0.0 && self.clip_seconds.is_finite()) {
            return bad(alloc::format!(
                "clip_seconds must be positive, got {}",
                self.clip_seconds
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn clip_samples(&self) -> usize {
        libm::round(self.clip_seconds * self.sample_rate as f64) as usize
    }

    /// Frame count of a full-length clip; every spectrogram is fixed to it.
    pub fn n_frames(&self) -> usize {
        self.clip_samples() / self.hop + 1
    }
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * libm::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (libm::pow(10.0, m / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * libm::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64))
        .collect()
}

/// Reflect an out-of-range index back into `0..len` (edge sample not repeated).
fn reflect(p: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = p.rem_euclid(period);
    if m >= len as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Filter edge frequencies in Hz: `n_mels + 2` points equally spaced in mel.
pub fn mel_points(cfg: &SpectrogramConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let n = cfg.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Triangular HTK filterbank `[n_mels, n_fft/2 + 1]`, each row peak-normalized to 1.
pub fn mel_filterbank(cfg: &SpectrogramConfig) -> Tensor<f64> {
    let bins = cfg.n_bins();
    let pts = mel_points(cfg);
    let bin_hz = cfg.sample_rate as f64 / cfg.n_fft as f64;
    let mut fb = Tensor::zeros(&[cfg.n_mels, bins]);
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (pts[m], pts[m + 1], pts[m + 2]);
        let row = &mut fb.data_mut()[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            *w = up.min(down).max(0.0);
        }
        let peak = row.iter().copied().fold(0.0, f64::max);
        if peak > 0.0 {
            row.iter_mut().for_each(|w| *w /= peak);
        }
    }
    fb
}

/// Precomputed window and filterbank for repeated extraction.
#[derive(Debug, Clone)]
pub struct MelExtractor {
    cfg: SpectrogramConfig,
    window: Vec<f64>,
    filterbank: Tensor<f64>,
}

/// Log-Mel matrix `[n_mels, n_frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Tensor<f32>,
    pub clip_id: String,
}

impl MelExtractor {
    pub fn new(cfg: &SpectrogramConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            window: hann(cfg.n_fft),
            filterbank: mel_filterbank(cfg),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &SpectrogramConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Tensor<f64> {
        &self.filterbank
    }

    /// Power spectrogram `|X|^2` as `[n_fft/2 + 1, floor(len/hop) + 1]`.
    pub fn stft(&self, clip: &AudioClip) -> Result<Tensor<f64>> {
        let cfg = &self.cfg;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::Argument(alloc::format!(
                "clip sample rate {} does not match configured {}",
                clip.sample_rate,
                cfg.sample_rate
            )));
        }
        let len = clip.samples.len();
        if len == 0 {
            return Err(Error::Argument("stft of an empty signal".into()));
        }
        let n_fft = cfg.n_fft;
        let pad = (n_fft / 2) as isize;
        let bins = cfg.n_bins();
        let frames = len / cfg.hop + 1;
        let mut power = vec![0.0f64; bins * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        for t in 0..frames {
            let start = (t * cfg.hop) as isize - pad;
            for (k, slot) in buf.iter_mut().enumerate() {
                let p = start + k as isize;
                let s = if p >= 0 && (p as usize) < len {
                    clip.samples[p as usize]
                } else {
                    clip.samples[reflect(p, len)]
                };
                *slot = Complex::new(s as f64 * self.window[k], 0.0);
            }
            fft_in_place(&mut buf)?;
            for b in 0..bins {
                power[b * frames + t] = buf[b].norm_sqr();
            }
        }
        Tensor::new(&[bins, frames], power)
    }

    /// `log10(filterbank . power + 1e-10)`, fixed to exactly `n_frames` columns.
    pub fn extract(&self, clip: &AudioClip, clip_id: &str) -> Result<MelSpectrogram> {
        let power = self.stft(clip)?;
        let (bins, frames) = (power.shape()[0], power.shape()[1]);
        let n_mels = self.cfg.n_mels;
        let target = self.cfg.n_frames();
        let pad_value = libm::log10(LOG_FLOOR) as f32;
        let mut out = vec![pad_value; n_mels * target];
        let used = frames.min(target);
        let pw = power.data();
        let mut acc = vec![0.0f64; used];
        for m in 0..n_mels {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let row = &self.filterbank.data()[m * bins..(m + 1) * bins];
            for (b, &wgt) in row.iter().enumerate() {
                if wgt == 0.0 {
                    continue;
                }
                let prow = &pw[b * frames..b * frames + used];
                for (a, &p) in acc.iter_mut().zip(prow) {
                    *a += wgt * p;
                }
            }
            for (o, &a) in out[m * target..m * target + used].iter_mut().zip(&acc) {
                *o = libm::log10(a + LOG_FLOOR) as f32;
            }
        }
        Ok(MelSpectrogram {
            values: Tensor::new(&[n_mels, target], out)?,
            clip_id: clip_id.into(),
        })
    }
}

pub fn stft(clip: &AudioClip, cfg: &SpectrogramConfig) -> Result<Tensor<f64>> {
    MelExtractor::new(cfg)?.stft(clip)
}

pub fn mel_spectrogram(clip: &AudioClip, cfg: &SpectrogramConfig, clip_id: &str) -> Result<MelSpectrogram> {
    MelExtractor::new(cfg)?.extract(clip, clip_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn noise(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5f32..0.5)).collect()
    }

    #[test]
    fn canonical_frame_count() {
        let cfg = SpectrogramConfig::canonical();
        assert_eq!(cfg.clip_samples(), 349_440);
        assert_eq!(cfg.n_frames(), 349_440 / 256 + 1);
        assert_eq!(cfg.n_frames(), 1366);
        let desk = SpectrogramConfig::desk();
        assert_eq!((desk.n_mels, desk.n_frames()), (48, 121));
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let base = SpectrogramConfig::canonical();
        for cfg in [
            SpectrogramConfig {
                n_fft: 500,
                ..base.clone()
            },
            SpectrogramConfig {
                hop: 1024,
                ..base.clone()
            },
            SpectrogramConfig {
                f_max: 7000.0,
                ..base.clone()
            },
            SpectrogramConfig {
                n_mels: 0,
                ..base.clone()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(6, 5), 2);
        assert_eq!(reflect(-7, 3), 1);
        assert_eq!(reflect(4, 1), 0);
    }

    #[test]
    fn zero_signal_has_zero_power() {
        let cfg = SpectrogramConfig::desk();
        let clip = AudioClip::new(vec![0.0; 5000], 12_000).unwrap();
        let p = stft(&clip, &cfg).unwrap();
        assert_eq!(p.shape(), &[257, 5000 / 256 + 1]);
        assert!(p.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_signal_dc_is_window_sum_squared() {
        assert!((hann(512).iter().sum::<f64>() - 256.0).abs() < 1e-9);
        let cfg = SpectrogramConfig::desk();
        let clip = AudioClip::new(vec![1.0; 4096], 12_000).unwrap();
        let p = stft(&clip, &cfg).unwrap();
        let frames = p.shape()[1];
        assert!((p.data()[0] - 65_536.0).abs() < 1e-6);
        // every frame sees a constant signal after reflection
        assert!((p.data()[frames - 1] - 65_536.0).abs() < 1e-6);
    }

    #[test]
    fn stft_errors() {
        let cfg = SpectrogramConfig::desk();
        assert!(stft(&AudioClip::new(vec![], 12_000).unwrap(), &cfg).is_err());
        assert!(stft(&AudioClip::new(vec![0.0; 100], 16_000).unwrap(), &cfg).is_err());
    }

    #[test]
    fn mel_scale_reference_point() {
        assert!((hz_to_mel(1000.0) - 1000.0).abs() <= 0.5);
        assert!((mel_to_hz(hz_to_mel(3210.0)) - 3210.0).abs() < 1e-9);
    }

    #[test]
    fn filterbank_geometry() {
        let cfg = SpectrogramConfig::canonical();
        let fb = mel_filterbank(&cfg);
        assert_eq!(fb.shape(), &[96, 257]);
        let pts = mel_points(&cfg);
        let mut prev_first = 0;
        let mut prev_last = 0;
        for m in 0..96 {
            let row = &fb.data()[m * 257..(m + 1) * 257];
            assert!(row.iter().all(|&w| w >= 0.0));
            let nz: Vec<usize> = (0..257).filter(|&k| row[k] > 0.0).collect();
            assert!(!nz.is_empty(), "row {m} empty");
            assert!((row.iter().copied().fold(0.0, f64::max) - 1.0).abs() < 1e-12);
            assert!(nz[0] >= prev_first && *nz.last().unwrap() >= prev_last);
            prev_first = nz[0];
            prev_last = *nz.last().unwrap();
            // support (pts[m], pts[m+2]) overlaps the next filter's (pts[m+1], pts[m+3])
            if m + 1 < 96 {
                let (lo, hi) = (pts[m].max(pts[m + 1]), pts[m + 2].min(pts[m + 3]));
                assert!(lo < hi);
            }
        }
    }

    #[test]
    fn silence_maps_to_floor_and_shape_is_fixed() {
        let cfg = SpectrogramConfig::desk();
        let ex = MelExtractor::new(&cfg).unwrap();
        let silent = ex
            .extract(&AudioClip::new(vec![0.0; cfg.clip_samples()], 12_000).unwrap(), "s")
            .unwrap();
        assert_eq!(silent.values.shape(), &[48, 121]);
        assert!(silent.values.data().iter().all(|&v| v == -10.0));
        for len in [1usize, 300, 10_000, cfg.clip_samples() + 5_000] {
            let m = ex
                .extract(&AudioClip::new(noise(len, len as u64), 12_000).unwrap(), "n")
                .unwrap();
            assert_eq!(m.values.shape(), &[48, 121]);
            assert!(m.values.all_finite());
        }
    }

    #[test]
    fn short_clip_is_right_padded() {
        let cfg = SpectrogramConfig::desk();
        let ex = MelExtractor::new(&cfg).unwrap();
        let m = ex
            .extract(&AudioClip::new(noise(2560, 3), 12_000).unwrap(), "short")
            .unwrap();
        // 2560 samples -> 11 real frames
        for row in 0..48 {
            assert!(m.values.data()[row * 121 + 10] > -10.0);
            assert!(m.values.data()[row * 121 + 11..(row + 1) * 121]
                .iter()
                .all(|&v| v == -10.0));
        }
    }

    #[test]
    fn canonical_clip_shape() {
        let cfg = SpectrogramConfig::canonical();
        let clip = AudioClip::new(noise(cfg.clip_samples(), 9), 12_000).unwrap();
        assert_eq!(stft(&clip, &cfg).unwrap().shape(), &[257, 1366]);
        let m = mel_spectrogram(&clip, &cfg, "full").unwrap();
        assert_eq!(m.values.shape(), &[96, 1366]);
    }

    #[test]
    fn tone_peaks_in_nearest_filter() {
        let cfg = SpectrogramConfig::canonical();
        let n = 12_000 * 3;
        let samples: Vec<f32> = (0..n)
            .map(|i| (0.5 * libm::sin(2.0 * core::f64::consts::PI * 1000.0 * i as f64 / 12_000.0)) as f32)
            .collect();
        let m = mel_spectrogram(&AudioClip::new(samples, 12_000).unwrap(), &cfg, "tone").unwrap();
        let used = n / 256 + 1;
        let mean = |r: usize| {
            m.values.data()[r * 1366..r * 1366 + used]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
        };
        let best = (0..96).max_by(|&a, &b| mean(a).total_cmp(&mean(b))).unwrap();
        let pts = mel_points(&cfg);
        let nearest = (0..96)
            .min_by(|&a, &b| (pts[a + 1] - 1000.0).abs().total_cmp(&(pts[b + 1] - 1000.0).abs()))
            .unwrap();
        assert_eq!(best, nearest);
    }

    #[test]
    fn louder_clip_never_decreases_cells() {
        let cfg = SpectrogramConfig::desk();
        let ex = MelExtractor::new(&cfg).unwrap();
        for seed in 0..5u64 {
            let base = noise(cfg.clip_samples(), 100 + seed);
            let a = ex.extract(&AudioClip::new(base.clone(), 12_000).unwrap(), "a").unwrap();
            let loud: Vec<f32> = base.iter().map(|v| v * 1.5).collect();
            let b = ex.extract(&AudioClip::new(loud, 12_000).unwrap(), "b").unwrap();
            assert!(a.values.data().iter().zip(b.values.data()).all(|(x, y)| y >= x));
        }
    }

    #[test]
    fn deterministic() {
        let cfg = SpectrogramConfig::desk();
        let clip = AudioClip::new(noise(20_000, 5), 12_000).unwrap();
        let a = mel_spectrogram(&clip, &cfg, "x").unwrap();
        let b = mel_spectrogram(&clip, &cfg, "x").unwrap();
        assert!(a
            .values
            .data()
            .iter()
            .zip(b.values.data())
            .all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
