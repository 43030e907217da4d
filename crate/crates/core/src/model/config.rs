use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Network wiring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Variant {
    /// Plain conv -> BN -> ReLU -> pool stack.
    Fcn5,
    /// Each level also pools its raw input and concatenates it ahead of the
    /// conv path, so every earlier scale reaches the classifier.
    MsECnn,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Fcn5 => "fcn5",
            Variant::MsECnn => "msecnn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcn5" => Ok(Variant::Fcn5),
            "msecnn" => Ok(Variant::MsECnn),
            other => Err(Error::Argument(alloc::format!(
                "unknown variant {other:?} (expected fcn5 or msecnn)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub variant: Variant,
    /// Conv output channels per level.
    pub channels: Vec<usize>,
    /// `(height, width)` pooling window per level.
    pub pooling: Vec<(usize, usize)>,
    pub n_tags: usize,
    /// `(channels, height, width)` of one input example.
    pub input_shape: (usize, usize, usize),
    /// Inverted dropout before the dense head (train mode only).
    pub dropout_rate: f64,
}

impl ModelConfig {
    /// Five levels over a 96x1366 log-Mel input, 50 tags.
    pub fn canonical(variant: Variant) -> Self {
        Self {
            variant,
            channels: alloc::vec![64, 128, 128, 128, 64],
            pooling: alloc::vec![(2, 4), (2, 4), (2, 4), (3, 5), (4, 4)],
            n_tags: 50,
            input_shape: (1, 96, 1366),
            dropout_rate: 0.0,
        }
    }

    /// Narrow five-level network over the 48x121 desk front end.
    pub fn desk(variant: Variant, n_tags: usize) -> Self {
        Self {
            variant,
            channels: alloc::vec![8, 16, 16, 16, 8],
            pooling: alloc::vec![(2, 4), (2, 4), (2, 2), (3, 3), (2, 1)],
            n_tags,
            input_shape: (1, 48, 121),
            dropout_rate: 0.0,
        }
    }

    /// Two-level network on a 6x8 input used by the gradient checks.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            variant,
            channels: alloc::vec![2, 2],
            pooling: alloc::vec![(2, 2), (3, 4)],
            n_tags: 3,
            input_shape: (1, 6, 8),
            dropout_rate: 0.0,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: alloc::string::String| Err(Error::Config(m));
        if self.channels.is_empty() {
            return err("at least one level is required".into());
        }
        if self.channels.len() != self.pooling.len() {
            return err(alloc::format!(
                "{} channel entries but {} pooling entries",
                self.channels.len(),
                self.pooling.len()
            ));
        }
        if self.channels.contains(&0) || self.input_shape.0 == 0 || self.n_tags == 0 {
            return err("channel and tag counts must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return err(alloc::format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        let (mut h, mut w) = (self.input_shape.1, self.input_shape.2);
        for (k, &(ph, pw)) in self.pooling.iter().enumerate() {
            if ph == 0 || pw == 0 || ph > h || pw > w {
                return err(alloc::format!(
                    "level {} pooling ({ph}, {pw}) does not fit spatial size ({h}, {w})",
                    k + 1
                ));
            }
            h /= ph;
            w /= pw;
        }
        if (h, w) != (1, 1) {
            return err(alloc::format!("pooling schedule ends at ({h}, {w}), not (1, 1)"));
        }
        Ok(())
    }

    /// Spatial size after each level's pooling.
    pub fn spatial_chain(&self) -> Vec<(usize, usize)> {
        let (mut h, mut w) = (self.input_shape.1, self.input_shape.2);
        self.pooling
            .iter()
            .map(|&(ph, pw)| {
                h /= ph;
                w /= pw;
                (h, w)
            })
            .collect()
    }

    /// Spatial size entering each level.
    pub fn level_input_spatial(&self) -> Vec<(usize, usize)> {
        let mut out = alloc::vec![(self.input_shape.1, self.input_shape.2)];
        let chain = self.spatial_chain();
        out.extend_from_slice(&chain[..chain.len() - 1]);
        out
    }

    /// Channels entering each level's convolution.
    pub fn level_in_channels(&self) -> Vec<usize> {
        let outs = self.level_out_channels();
        let mut ins = alloc::vec![self.input_shape.0];
        ins.extend_from_slice(&outs[..outs.len() - 1]);
        ins
    }

    /// Channels leaving each level: `C_k` for fcn5, `n_{k-1} + C_k` for msecnn.
    pub fn level_out_channels(&self) -> Vec<usize> {
        let mut n = self.input_shape.0;
        self.channels
            .iter()
            .map(|&c| {
                n = match self.variant {
                    Variant::Fcn5 => c,
                    Variant::MsECnn => n + c,
                };
                n
            })
            .collect()
    }

    /// Width of the flattened feature vector fed to the dense head.
    pub fn feature_width(&self) -> usize {
        *self.level_out_channels().last().unwrap_or(&0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_shape_chain() {
        for v in [Variant::Fcn5, Variant::MsECnn] {
            let c = ModelConfig::canonical(v);
            c.validate().unwrap();
            assert_eq!(c.spatial_chain(), [(48, 341), (24, 85), (12, 21), (4, 4), (1, 1)]);
        }
    }

    #[test]
    fn channel_recurrence() {
        let m = ModelConfig::canonical(Variant::MsECnn);
        assert_eq!(m.level_in_channels(), [1, 65, 193, 321, 449]);
        assert_eq!(m.level_out_channels(), [65, 193, 321, 449, 513]);
        assert_eq!(m.feature_width(), 513);
        let f = ModelConfig::canonical(Variant::Fcn5);
        assert_eq!(f.level_in_channels(), [1, 64, 128, 128, 128]);
        assert_eq!(f.feature_width(), 64);
    }

    #[test]
    fn presets_validate() {
        for v in [Variant::Fcn5, Variant::MsECnn] {
            ModelConfig::tiny(v).validate().unwrap();
            ModelConfig::desk(v, 8).validate().unwrap();
        }
    }

    #[test]
    fn rejects_schedule_not_reaching_one() {
        let mut c = ModelConfig::canonical(Variant::Fcn5);
        c.pooling[4] = (2, 2);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::canonical(Variant::Fcn5);
        c.channels.pop();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ModelConfig::tiny(Variant::Fcn5);
        c.dropout_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn variant_parse() {
        assert_eq!("msecnn".parse::<Variant>().unwrap(), Variant::MsECnn);
        assert!("bogus".parse::<Variant>().is_err());
    }
}
