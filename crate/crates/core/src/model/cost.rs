use alloc::vec::Vec;

use super::config::ModelConfig;
use crate::ops::KERNEL;

/// Multiply-accumulate count of one conv level (pre-pool spatial size).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelCost {
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub levels: Vec<LevelCost>,
    pub dense_macs: u64,
    pub total_macs: u64,
}

/// Forward-pass MACs of convolutions and the dense head only; pooling,
/// normalization and activations are not counted.
pub fn count_flops(config: &ModelConfig) -> FlopReport {
    let levels: Vec<LevelCost> = config
        .level_input_spatial()
        .iter()
        .zip(config.level_in_channels())
        .zip(&config.channels)
        .map(|((&(h, w), cin), &cout)| LevelCost {
            height: h,
            width: w,
            in_channels: cin,
            out_channels: cout,
            macs: (h * w * cin * cout * KERNEL * KERNEL) as u64,
        })
        .collect();
    let dense_macs = (config.feature_width() * config.n_tags) as u64;
    let total_macs = levels.iter().map(|l| l.macs).sum::<u64>() + dense_macs;
    FlopReport {
        levels,
        dense_macs,
        total_macs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    #[test]
    fn canonical_level_two() {
        let r = count_flops(&ModelConfig::canonical(Variant::Fcn5));
        assert_eq!(r.levels[1].macs, 48 * 341 * 64 * 128 * 9);
        assert!((r.levels[1].macs as f64 / 1.207e9 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn variant_ratio() {
        // per-level sums written out independently of the config helpers
        let spatial = [(96u64, 1366u64), (48, 341), (24, 85), (12, 21), (4, 4)];
        let fcn_in = [1u64, 64, 128, 128, 128];
        let mse_in = [1u64, 65, 193, 321, 449];
        let out = [64u64, 128, 128, 128, 64];
        let total = |cin: &[u64; 5], d: u64| {
            spatial
                .iter()
                .zip(cin)
                .zip(&out)
                .map(|((&(h, w), &i), &o)| h * w * i * o * 9)
                .sum::<u64>()
                + d * 50
        };
        let f = count_flops(&ModelConfig::canonical(Variant::Fcn5));
        let m = count_flops(&ModelConfig::canonical(Variant::MsECnn));
        assert_eq!(f.total_macs, total(&fcn_in, 64));
        assert_eq!(m.total_macs, total(&mse_in, 513));
        let ratio = m.total_macs as f64 / f.total_macs as f64;
        assert!((ratio - 1.14).abs() < 0.005, "{ratio}");
        assert!(ratio <= 1.25);
    }

    #[test]
    fn unit_case() {
        let cfg = ModelConfig {
            variant: Variant::Fcn5,
            channels: alloc::vec![1],
            pooling: alloc::vec![(5, 7)],
            n_tags: 1,
            input_shape: (1, 5, 7),
            dropout_rate: 0.0,
        };
        let r = count_flops(&cfg);
        assert_eq!(r.levels[0].macs, 5 * 7 * 9);
    }
}
