//! Run configuration: preset defaults, then a TOML file, then flags.
//!
//! ```toml
//! preset = "desk"            # or "canonical"
//!
//! [frontend]                 # any SpectrogramConfig field
//! n_mels = 48
//!
//! [model]
//! variant = "msecnn"
//! channels = [8, 16, 16, 16, 8]
//! pooling = [[2, 4], [2, 4], [2, 2], [3, 3], [2, 1]]
//! dropout_rate = 0.0
//!
//! [train]                    # any TrainConfig field
//! max_epochs = 60
//! ```
//!
//! Every key is optional; unknown keys are rejected.

use std::path::Path;

use msecnn_core::audio::SpectrogramConfig;
use msecnn_core::model::{ModelConfig, Variant};
use msecnn_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 96x1366 input, channels 64-128-128-128-64.
    Canonical,
    /// 48x121 input, channels 8-16-16-16-8.
    Desk,
}

impl Preset {
    pub fn frontend(self) -> SpectrogramConfig {
        match self {
            Preset::Canonical => SpectrogramConfig::canonical(),
            Preset::Desk => SpectrogramConfig::desk(),
        }
    }

    pub fn model(self, variant: Variant, n_tags: usize) -> ModelConfig {
        match self {
            Preset::Canonical => ModelConfig {
                n_tags,
                ..ModelConfig::canonical(variant)
            },
            Preset::Desk => ModelConfig::desk(variant, n_tags),
        }
    }

    /// The preset whose front end is exactly `f`, if any.
    pub fn matching(f: &SpectrogramConfig) -> Option<Self> {
        [Preset::Canonical, Preset::Desk]
            .into_iter()
            .find(|p| &p.frontend() == f)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontendFile {
    pub sample_rate: Option<u32>,
    pub n_fft: Option<usize>,
    pub hop: Option<usize>,
    pub n_mels: Option<usize>,
    pub f_min: Option<f64>,
    pub f_max: Option<f64>,
    pub clip_seconds: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub variant: Option<Variant>,
    pub channels: Option<Vec<usize>>,
    pub pooling: Option<Vec<(usize, usize)>>,
    pub dropout_rate: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    pub learning_rate: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub early_stop_patience: Option<usize>,
}

/// Contents of a config file, all keys optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub preset: Option<Preset>,
    #[serde(default)]
    pub frontend: FrontendFile,
    #[serde(default)]
    pub model: ModelFile,
    #[serde(default)]
    pub train: TrainFile,
}

impl FileConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Document {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let bytes = fsutil::read(p)?;
                let text = String::from_utf8(bytes).map_err(|e| Error::Document {
                    path: p.to_path_buf(),
                    msg: e.to_string(),
                })?;
                Self::parse(&text, p)
            }
        }
    }

    /// Overlays `flags` (the command line wins).
    pub fn merge(mut self, flags: FileConfig) -> Self {
        macro_rules! over {
            ($($sec:ident . $f:ident),*) => { $( if flags.$sec.$f.is_some() { self.$sec.$f = flags.$sec.$f; } )* };
        }
        if flags.preset.is_some() {
            self.preset = flags.preset;
        }
        over!(
            frontend.sample_rate,
            frontend.n_fft,
            frontend.hop,
            frontend.n_mels,
            frontend.f_min,
            frontend.f_max,
            frontend.clip_seconds,
            model.variant,
            model.channels,
            model.pooling,
            model.dropout_rate,
            train.learning_rate,
            train.beta1,
            train.beta2,
            train.eps,
            train.batch_size,
            train.max_epochs,
            train.seed,
            train.early_stop_patience
        );
        self
    }

    fn frontend_overridden(&self) -> bool {
        self.frontend != FrontendFile::default()
    }

    /// Front end from the preset plus overrides.
    pub fn resolve_frontend(&self) -> Result<SpectrogramConfig> {
        let mut f = self.preset.unwrap_or(Preset::Canonical).frontend();
        let o = &self.frontend;
        f.sample_rate = o.sample_rate.unwrap_or(f.sample_rate);
        f.n_fft = o.n_fft.unwrap_or(f.n_fft);
        f.hop = o.hop.unwrap_or(f.hop);
        f.n_mels = o.n_mels.unwrap_or(f.n_mels);
        f.f_min = o.f_min.unwrap_or(f.f_min);
        f.f_max = o.f_max.unwrap_or(f.f_max);
        f.clip_seconds = o.clip_seconds.unwrap_or(f.clip_seconds);
        f.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(f)
    }

    /// Model for a cache built with `frontend` over `n_tags` tags. Without
    /// an explicit preset, the preset matching the front end supplies the
    /// channel and pooling defaults.
    pub fn resolve_model(&self, frontend: &SpectrogramConfig, n_tags: usize) -> Result<ModelConfig> {
        let preset = self
            .preset
            .or_else(|| Preset::matching(frontend))
            .unwrap_or(Preset::Canonical);
        let variant = self
            .model
            .variant
            .ok_or_else(|| Error::Config("no model variant given (use --variant fcn5|msecnn)".into()))?;
        let mut m = preset.model(variant, n_tags);
        m.input_shape = (1, frontend.n_mels, frontend.n_frames());
        if let Some(c) = &self.model.channels {
            m.channels = c.clone();
        }
        if let Some(p) = &self.model.pooling {
            m.pooling = p.clone();
        }
        if let Some(d) = self.model.dropout_rate {
            m.dropout_rate = d;
        }
        m.validate().map_err(|e| {
            Error::Config(format!(
                "{e}; input is {}x{} (set [model] channels and pooling for a custom front end)",
                m.input_shape.1, m.input_shape.2
            ))
        })?;
        Ok(m)
    }

    pub fn resolve_train(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let o = &self.train;
        let t = TrainConfig {
            learning_rate: o.learning_rate.unwrap_or(d.learning_rate),
            beta1: o.beta1.unwrap_or(d.beta1),
            beta2: o.beta2.unwrap_or(d.beta2),
            eps: o.eps.unwrap_or(d.eps),
            batch_size: o.batch_size.unwrap_or(d.batch_size),
            max_epochs: o.max_epochs.unwrap_or(d.max_epochs),
            seed: o.seed.unwrap_or(d.seed),
            early_stop_patience: o.early_stop_patience.unwrap_or(d.early_stop_patience),
        };
        t.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(t)
    }

    /// Rejects front-end settings that disagree with an existing cache.
    pub fn check_frontend_against(&self, cache_frontend: &SpectrogramConfig) -> Result<()> {
        if self.frontend_overridden() && &self.resolve_frontend()? != cache_frontend {
            return Err(Error::Config(
                "[frontend] settings differ from the front end the cache was built with".into(),
            ));
        }
        Ok(())
    }
}

/// Fully resolved settings echoed before a command runs.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig<'a> {
    pub command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<toml::Table>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frontend: Option<&'a SpectrogramConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<&'a ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<&'a TrainConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<toml::Table>,
}

impl<'a> RunConfig<'a> {
    pub fn new(command: &'a str) -> Self {
        Self {
            command,
            paths: None,
            frontend: None,
            model: None,
            train: None,
            options: None,
        }
    }

    pub fn path(mut self, key: &str, value: &Path) -> Self {
        self.paths
            .get_or_insert_with(toml::Table::new)
            .insert(key.into(), value.display().to_string().into());
        self
    }

    pub fn option(mut self, key: &str, value: impl Into<toml::Value>) -> Self {
        self.options
            .get_or_insert_with(toml::Table::new)
            .insert(key.into(), value.into());
        self
    }

    /// `# resolved config` followed by the TOML rendering, one `# ` per line.
    pub fn render(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        let mut out = String::from("# resolved config\n");
        for line in body.lines() {
            out.push('#');
            if !line.is_empty() {
                out.push(' ');
                out.push_str(line);
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file_over_preset() {
        let file = FileConfig::parse(
            "preset = \"desk\"\n[train]\nseed = 3\nbatch_size = 8\n[model]\nvariant = \"fcn5\"\n",
            Path::new("c.toml"),
        )
        .unwrap();
        let flags = FileConfig {
            train: TrainFile {
                seed: Some(9),
                ..Default::default()
            },
            model: ModelFile {
                variant: Some(Variant::MsECnn),
                ..Default::default()
            },
            ..Default::default()
        };
        let cfg = file.merge(flags);
        let t = cfg.resolve_train().unwrap();
        assert_eq!((t.seed, t.batch_size, t.max_epochs), (9, 8, 100));
        let f = cfg.resolve_frontend().unwrap();
        assert_eq!(f, SpectrogramConfig::desk());
        let m = cfg.resolve_model(&f, 4).unwrap();
        assert_eq!(m, ModelConfig::desk(Variant::MsECnn, 4));
    }

    #[test]
    fn model_preset_follows_cache_frontend() {
        let cfg = FileConfig {
            model: ModelFile {
                variant: Some(Variant::Fcn5),
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(
            cfg.resolve_model(&SpectrogramConfig::desk(), 3).unwrap(),
            ModelConfig::desk(Variant::Fcn5, 3)
        );
        let canon = cfg.resolve_model(&SpectrogramConfig::canonical(), 50).unwrap();
        assert_eq!(canon, ModelConfig::canonical(Variant::Fcn5));
        let mut odd = SpectrogramConfig::desk();
        odd.n_mels = 40;
        assert!(matches!(cfg.resolve_model(&odd, 3), Err(Error::Config(_))));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(FileConfig::parse("[train]\nlearnin_rate = 1.0\n", Path::new("c")).is_err());
        assert!(FileConfig::parse("preset = \"huge\"\n", Path::new("c")).is_err());
        let bad = FileConfig::parse("[train]\nbeta1 = 1.5\n", Path::new("c")).unwrap();
        assert!(bad.resolve_train().is_err());
        let none = FileConfig::default();
        assert!(none.resolve_model(&SpectrogramConfig::desk(), 3).is_err());
    }

    #[test]
    fn render_is_commented_toml() {
        let f = SpectrogramConfig::desk();
        let text = RunConfig::new("extract")
            .path("cache_out", Path::new("/tmp/c"))
            .option("top_k", 50)
            .render();
        assert!(text.starts_with("# resolved config\n"));
        assert!(text.lines().all(|l| l.starts_with('#')));
        let with_frontend = RunConfig {
            frontend: Some(&f),
            ..RunConfig::new("x")
        }
        .render();
        assert!(with_frontend.contains("n_mels = 48"));
    }
}
