//! Architecture hyperparameters shared by both detectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape contract for the feature pyramid and the networks built on it.
///
/// Level `l` (0-based) has spatial side `image_size / (4 << l)` and
/// `base_channels << l` channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub image_size: usize,
    /// Number of pyramid levels L.
    pub levels: usize,
    /// Channels at the first pyramid level.
    pub base_channels: usize,
    /// Width of the stem that runs at full and half resolution.
    pub stem_channels: usize,
    pub num_classes: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            image_size: 64,
            levels: 3,
            base_channels: 8,
            stem_channels: 40,
            num_classes: 3,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("levels must be >= 1".into()));
        }
        if self.base_channels == 0 || self.stem_channels == 0 {
            return Err(Error::InvalidConfig("channel counts must be >= 1".into()));
        }
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be >= 1".into()));
        }
        let deepest_stride = self.stride(self.levels - 1);
        if self.image_size % deepest_stride != 0 {
            return Err(Error::InvalidConfig(format!(
                "image_size {} must be divisible by the deepest stride {}",
                self.image_size, deepest_stride
            )));
        }
        Ok(())
    }

    /// Stride of pyramid level `l` relative to the input image.
    pub fn stride(&self, level: usize) -> usize {
        4 << level
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn spatial(&self, level: usize) -> usize {
        self.image_size / self.stride(level)
    }

    /// Total pooled channel count `d` feeding the router.
    pub fn pooled_dim(&self) -> usize {
        (0..self.levels).map(|l| self.channels(l)).sum()
    }

    /// Prediction channels per head cell: objectness, 4 box deltas, class scores.
    pub fn pred_channels(&self) -> usize {
        5 + self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pyramid_contract() {
        let arch = ArchConfig::default();
        arch.validate().unwrap();
        assert_eq!(
            (0..3).map(|l| (arch.channels(l), arch.spatial(l))).collect::<Vec<_>>(),
            vec![(8, 16), (16, 8), (32, 4)]
        );
        assert_eq!(arch.pooled_dim(), 56);
    }

    #[test]
    fn indivisible_image_rejected() {
        let arch = ArchConfig {
            image_size: 40,
            ..ArchConfig::default()
        };
        assert!(arch.validate().is_err());
    }
}
