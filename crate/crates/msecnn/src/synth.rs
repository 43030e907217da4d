//! Synthetic tagging corpus with one acoustic cue per tag.
//!
//! Texture cues are recognisable from any short window (noise colour,
//! tremolo, harmonic comb). Structure cues only differ over the whole clip
//! (sweep direction, section on/off pattern). Cues are interleaved so any
//! `n_tags` prefix has at least as many texture cues as structure cues.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use msecnn_core::audio::AudioClip;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::{fsutil, wav};

pub const MAX_TAGS: usize = 8;
pub const ANNOTATIONS_FILE: &str = "annotations.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CueKind {
    Texture,
    Structure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cue {
    NoiseBand,
    RisingSweep,
    Tremolo,
    FallingSweep,
    Comb,
    MiddleSection,
    Hiss,
    AlternatingSections,
}

/// Interleaved texture/structure order.
pub const CUES: [Cue; MAX_TAGS] = [
    Cue::NoiseBand,
    Cue::RisingSweep,
    Cue::Tremolo,
    Cue::FallingSweep,
    Cue::Comb,
    Cue::MiddleSection,
    Cue::Hiss,
    Cue::AlternatingSections,
];

impl Cue {
    pub fn name(self) -> &'static str {
        match self {
            Cue::NoiseBand => "noise_band",
            Cue::RisingSweep => "rising_sweep",
            Cue::Tremolo => "tremolo",
            Cue::FallingSweep => "falling_sweep",
            Cue::Comb => "harmonic_comb",
            Cue::MiddleSection => "middle_section",
            Cue::Hiss => "hiss",
            Cue::AlternatingSections => "alternating_sections",
        }
    }

    pub fn kind(self) -> CueKind {
        match self {
            Cue::NoiseBand | Cue::Tremolo | Cue::Comb | Cue::Hiss => CueKind::Texture,
            _ => CueKind::Structure,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_clips: usize,
    pub n_tags: usize,
    pub seed: u64,
    pub sample_rate: u32,
    pub clip_seconds: f64,
    /// Probability that a tag is active in a clip.
    pub p_active: f64,
    /// Use only texture cues (at most four tags).
    pub texture_only: bool,
}

impl SynthConfig {
    pub fn new(n_clips: usize, n_tags: usize, seed: u64) -> Self {
        Self {
            n_clips,
            n_tags,
            seed,
            sample_rate: 12_000,
            clip_seconds: 2.56,
            p_active: 0.4,
            texture_only: false,
        }
    }

    pub fn cues(&self) -> Vec<Cue> {
        CUES.iter()
            .copied()
            .filter(|c| !self.texture_only || c.kind() == CueKind::Texture)
            .take(self.n_tags)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let limit = if self.texture_only { 4 } else { MAX_TAGS };
        if self.n_tags == 0 || self.n_tags > limit {
            return Err(Error::Config(format!(
                "tags must be in 1..={limit} (one distinct cue per tag), got {}",
                self.n_tags
            )));
        }
        if self.n_clips == 0 {
            return Err(Error::Config("at least one clip is required".into()));
        }
        if !(self.p_active > 0.0 && self.p_active < 1.0) {
            return Err(Error::Config(format!(
                "p_active must be in (0, 1), got {}",
                self.p_active
            )));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if nyquist < 6_000.0 {
            return Err(Error::Config(format!(
                "sample rate {} Hz is too low for the cue set (needs >= 12000)",
                self.sample_rate
            )));
        }
        if !(self.clip_seconds >= 0.5 && self.clip_seconds.is_finite()) {
            return Err(Error::Config(format!(
                "clip_seconds must be >= 0.5, got {}",
                self.clip_seconds
            )));
        }
        Ok(())
    }
}

fn clip_rng(seed: u64, index: usize) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Adds a constant-frequency partial using a rotating phasor.
fn add_partial(buf: &mut [f64], fs: f64, freq: f64, amp: f64, phase: f64, env: Option<&[f64]>) {
    let (s, c) = (TAU * freq / fs).sin_cos();
    let (mut re, mut im) = (phase.cos(), phase.sin());
    for (i, y) in buf.iter_mut().enumerate() {
        let g = env.map_or(1.0, |e| e[i]);
        *y += amp * g * im;
        let nre = re * c - im * s;
        im = re * s + im * c;
        re = nre;
    }
}

fn add_noise_band(buf: &mut [f64], fs: f64, lo: f64, hi: f64, amp: f64, rng: &mut impl Rng, env: Option<&[f64]>) {
    const PARTIALS: usize = 24;
    let a = amp * (2.0 / PARTIALS as f64).sqrt();
    for _ in 0..PARTIALS {
        let f = rng.random_range(lo..hi);
        let ph = rng.random_range(0.0..TAU);
        add_partial(buf, fs, f, a, ph, env);
    }
}

fn add_sweep(buf: &mut [f64], fs: f64, f0: f64, f1: f64, amp: f64, phase: f64) {
    let n = buf.len() as f64;
    let mut ph = phase;
    for (i, y) in buf.iter_mut().enumerate() {
        *y += amp * ph.sin();
        ph += TAU * (f0 + (f1 - f0) * i as f64 / n) / fs;
    }
}

/// Gate that is on inside `[a, b)` (fractions of the clip), 20 ms cosine ramps.
fn section_gate(n: usize, fs: f64, spans: &[(f64, f64)]) -> Vec<f64> {
    let ramp = 0.02 * fs;
    (0..n)
        .map(|i| {
            let x = i as f64;
            spans
                .iter()
                .map(|&(a, b)| {
                    let (a, b) = (a * n as f64, b * n as f64);
                    let up = ((x - a) / ramp).clamp(0.0, 1.0);
                    let down = ((b - x) / ramp).clamp(0.0, 1.0);
                    let g = up.min(down);
                    0.5 - 0.5 * (std::f64::consts::PI * g).cos()
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

fn render_cue(cue: Cue, buf: &mut [f64], fs: f64, rng: &mut impl Rng) {
    let amp = rng.random_range(0.08..0.15);
    let n = buf.len();
    match cue {
        Cue::NoiseBand => {
            let fc = rng.random_range(1_200.0..1_400.0);
            add_noise_band(buf, fs, fc - 100.0, fc + 100.0, amp, rng, None);
        }
        Cue::Tremolo => {
            let f = rng.random_range(600.0..900.0);
            let rate = rng.random_range(10.0..14.0);
            let ph = rng.random_range(0.0..TAU);
            let env: Vec<f64> = (0..n)
                .map(|i| 0.5 + 0.5 * (TAU * rate * i as f64 / fs + ph).sin())
                .collect();
            add_partial(buf, fs, f, amp * 1.4, rng.random_range(0.0..TAU), Some(&env));
        }
        Cue::Comb => {
            let f0 = rng.random_range(150.0..190.0);
            for k in 1..=15 {
                let f = f0 * k as f64;
                if f < fs / 2.0 - 500.0 {
                    add_partial(buf, fs, f, amp / k as f64 * 1.5, rng.random_range(0.0..TAU), None);
                }
            }
        }
        Cue::Hiss => add_noise_band(buf, fs, 3_500.0, 4_500.0, amp, rng, None),
        Cue::RisingSweep | Cue::FallingSweep => {
            let lo = 2_000.0 + rng.random_range(-100.0..100.0);
            let hi = 2_800.0 + rng.random_range(-100.0..100.0);
            let (a, b) = if cue == Cue::RisingSweep { (lo, hi) } else { (hi, lo) };
            add_sweep(buf, fs, a, b, amp, rng.random_range(0.0..TAU));
        }
        Cue::MiddleSection => {
            let gate = section_gate(n, fs, &[(0.25, 0.75)]);
            add_noise_band(buf, fs, 5_000.0, 5_400.0, amp, rng, Some(&gate));
        }
        Cue::AlternatingSections => {
            let gate = section_gate(n, fs, &[(0.0, 0.25), (0.5, 0.75)]);
            add_noise_band(buf, fs, 5_000.0, 5_400.0, amp, rng, Some(&gate));
        }
    }
}

fn draw_labels(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<bool> {
    (0..cfg.n_tags).map(|_| rng.random::<f64>() < cfg.p_active).collect()
}

/// Labels of clip `index` without rendering its audio.
pub fn clip_labels(cfg: &SynthConfig, index: usize) -> Vec<bool> {
    draw_labels(cfg, &mut clip_rng(cfg.seed, index))
}

/// Labels and audio for clip `index`; the same inputs always give the same output.
pub fn render_clip(cfg: &SynthConfig, index: usize) -> (Vec<bool>, AudioClip) {
    let cues = cfg.cues();
    let mut rng = clip_rng(cfg.seed, index);
    let labels = draw_labels(cfg, &mut rng);
    let fs = cfg.sample_rate as f64;
    let n = (cfg.clip_seconds * fs).round() as usize;
    let mut buf: Vec<f64> = (0..n).map(|_| rng.random_range(-0.003..0.003)).collect();
    for (&cue, &on) in cues.iter().zip(&labels) {
        if on {
            render_cue(cue, &mut buf, fs, &mut rng);
        }
    }
    let gain = rng.random_range(0.7..1.0);
    let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.abs())) * gain;
    let scale = if peak > 0.98 { gain * 0.98 / peak } else { gain };
    let samples = buf.iter().map(|v| (v * scale) as f32).collect();
    let clip = AudioClip::new(samples, cfg.sample_rate).expect("finite synthetic audio");
    (labels, clip)
}

pub fn clip_path(index: usize) -> String {
    format!("{:x}/clip_{index:05}.wav", index % 16)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSummary {
    pub tags: Vec<String>,
    pub annotations: PathBuf,
    pub positives: Vec<usize>,
}

/// Writes `n_clips` WAV files under `out_dir/{hex}/` and an annotation TSV.
pub fn synth_generate(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    cfg.validate()?;
    let tags: Vec<String> = cfg.cues().iter().map(|c| c.name().to_string()).collect();
    let mut table = format!("clip_id\t{}\tpath\n", tags.join("\t"));
    let mut positives = vec![0; tags.len()];
    for i in 0..cfg.n_clips {
        let (labels, clip) = render_clip(cfg, i);
        let rel = clip_path(i);
        wav::write_wav(&out_dir.join(&rel), &clip)?;
        let cells: Vec<&str> = labels.iter().map(|&l| if l { "1" } else { "0" }).collect();
        table.push_str(&format!("clip_{i:05}\t{}\t{rel}\n", cells.join("\t")));
        for (p, &l) in positives.iter_mut().zip(&labels) {
            *p += l as usize;
        }
    }
    let annotations = out_dir.join(ANNOTATIONS_FILE);
    fsutil::write_atomic(&annotations, table.as_bytes())?;
    Ok(SynthSummary {
        tags,
        annotations,
        positives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_prefix_is_at_least_half_texture() {
        for n in 1..=MAX_TAGS {
            let c = SynthConfig::new(1, n, 0).cues();
            let tex = c.iter().filter(|c| c.kind() == CueKind::Texture).count();
            assert!(2 * tex >= n);
        }
        let mut t = SynthConfig::new(1, 4, 0);
        t.texture_only = true;
        assert!(t.cues().iter().all(|c| c.kind() == CueKind::Texture));
        t.n_tags = 5;
        assert!(t.validate().is_err());
        assert!(SynthConfig::new(1, 9, 0).validate().is_err());
    }

    #[test]
    fn silent_when_no_tag_is_active() {
        let cfg = SynthConfig::new(200, 4, 3);
        let mut found = 0;
        for i in 0..cfg.n_clips {
            let (labels, clip) = render_clip(&cfg, i);
            let peak = clip.samples.iter().fold(0.0f32, |m, v| m.max(v.abs()));
            if labels.iter().all(|&l| !l) {
                assert!(peak < 0.01, "clip {i} peak {peak}");
                found += 1;
            } else {
                assert!(peak > 0.02);
            }
        }
        assert!(found > 0);
    }

    #[test]
    fn label_marginals_within_three_sigma() {
        let cfg = SynthConfig::new(1000, 8, 11);
        let mut counts = [0usize; 8];
        for i in 0..cfg.n_clips {
            for (c, l) in counts.iter_mut().zip(clip_labels(&cfg, i)) {
                *c += l as usize;
            }
        }
        let n = cfg.n_clips as f64;
        let sigma = (n * cfg.p_active * (1.0 - cfg.p_active)).sqrt();
        for c in counts {
            assert!((c as f64 - n * cfg.p_active).abs() <= 3.0 * sigma, "{c}");
        }
        assert_eq!(render_clip(&cfg, 5).0, clip_labels(&cfg, 5));
    }

    #[test]
    fn gates_and_paths() {
        let g = section_gate(1000, 12_000.0, &[(0.25, 0.75)]);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[500], 1.0);
        assert!(g[999] < 1e-3);
        assert_eq!(clip_path(12), "c/clip_00012.wav");
        assert_eq!(clip_path(17), "1/clip_00017.wav");
    }
}
