//! Network hyper-structure.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const ROD_CLASSES: usize = 3;
pub const HAR_CLASSES: usize = 5;
pub const INPUT_CHANNELS: usize = 3;

/// One ghost bottleneck: depthwise kernel, expansion width, output width,
/// squeeze-excitation ratio (0 for none) and stride. Widths are before
/// the width multiplier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockCfg {
    pub kernel: usize,
    pub expansion: usize,
    pub out: usize,
    pub se_ratio: f64,
    pub stride: usize,
}

const fn block(kernel: usize, expansion: usize, out: usize, se_ratio: f64, stride: usize) -> BlockCfg {
    BlockCfg {
        kernel,
        expansion,
        out,
        se_ratio,
        stride,
    }
}

/// The GhostNet 1.0 stage table.
pub fn ghostnet_stages() -> Vec<Vec<BlockCfg>> {
    vec![
        vec![block(3, 16, 16, 0.0, 1)],
        vec![block(3, 48, 24, 0.0, 2)],
        vec![block(3, 72, 24, 0.0, 1)],
        vec![block(5, 72, 40, 0.25, 2)],
        vec![block(5, 120, 40, 0.25, 1)],
        vec![block(3, 240, 80, 0.0, 2)],
        vec![
            block(3, 200, 80, 0.0, 1),
            block(3, 184, 80, 0.0, 1),
            block(3, 184, 80, 0.0, 1),
            block(3, 480, 112, 0.25, 1),
            block(3, 672, 112, 0.25, 1),
        ],
        vec![block(5, 672, 160, 0.25, 2)],
        vec![
            block(5, 960, 160, 0.0, 1),
            block(5, 960, 160, 0.25, 1),
            block(5, 960, 160, 0.0, 1),
            block(5, 960, 160, 0.25, 1),
        ],
    ]
}

/// Channel count rounded to the nearest multiple of `divisor`, never
/// dropping more than 10% below `v`.
pub fn make_divisible(v: f64, divisor: usize) -> usize {
    let d = divisor as f64;
    let mut n = ((v + d / 2.0) / d).floor().max(1.0) as usize * divisor;
    if (n as f64) < 0.9 * v {
        n += divisor;
    }
    n
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub width: f64,
    pub stages: Vec<Vec<BlockCfg>>,
    /// Index of the last stage shared by both exits.
    pub branch_after: usize,
    pub stem_channels: usize,
    /// Width of the 1×1 layer opening the final exit, before scaling.
    pub tail_channels: usize,
    pub head_hidden: usize,
    pub early_channels: usize,
    pub early_hidden: usize,
    pub ghost_ratio: usize,
    pub bn_eps: f64,
    pub bn_momentum: f64,
    pub seed: u64,
    /// Required `(conv, fc)` layer counts; the build fails if they differ.
    pub expect_layers: Option<(usize, usize)>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 1.35,
            stages: ghostnet_stages(),
            branch_after: 5,
            stem_channels: 16,
            tail_channels: 960,
            head_hidden: 1280,
            early_channels: 256,
            early_hidden: 512,
            ghost_ratio: 2,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
            seed: 0,
            expect_layers: Some((97, 2)),
        }
    }
}

impl ModelConfig {
    /// Same topology at a quarter width with slim heads, for CPU training.
    pub fn desk() -> Self {
        ModelConfig {
            width: 0.25,
            early_channels: 32,
            early_hidden: 64,
            head_hidden: 128,
            ..ModelConfig::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn scaled(&self, channels: usize) -> usize {
        make_divisible(channels as f64 * self.width, 4)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(CoreError::Config(format!("width multiplier must be > 0, got {}", self.width)));
        }
        if self.stages.is_empty() || self.stages.iter().any(Vec::is_empty) {
            return Err(CoreError::Config("every stage needs at least one block".into()));
        }
        if self.branch_after + 1 >= self.stages.len() {
            return Err(CoreError::Config(format!(
                "branch point {} must leave at least one stage after it (have {})",
                self.branch_after,
                self.stages.len()
            )));
        }
        if self.ghost_ratio < 1 {
            return Err(CoreError::Config("ghost ratio must be at least 1".into()));
        }
        for b in self.stages.iter().flatten() {
            if !matches!(b.stride, 1 | 2) || b.kernel % 2 == 0 || !(0.0..1.0).contains(&b.se_ratio) {
                return Err(CoreError::Config(format!("unsupported block {b:?}")));
            }
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(CoreError::Config("batch-norm eps must be > 0 and momentum in [0, 1]".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisible_rounding() {
        assert_eq!(make_divisible(16.0 * 1.35, 4), 20);
        assert_eq!(make_divisible(80.0 * 1.35, 4), 108);
        assert_eq!(make_divisible(16.0 * 0.25, 4), 4);
        assert_eq!(make_divisible(1.0, 4), 4);
        // 10% floor: 10 would round down to 8 (< 9)
        assert_eq!(make_divisible(10.0, 8), 16);
    }

    #[test]
    fn stage_table_has_sixteen_blocks() {
        assert_eq!(ghostnet_stages().iter().map(Vec::len).sum::<usize>(), 16);
    }

    #[test]
    fn branch_point_must_leave_a_tail() {
        let cfg = ModelConfig {
            branch_after: 8,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
        assert!(ModelConfig {
            width: 0.0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
    }
}
