//! Per-level detection heads. Each level applies a hidden conv (ReLU) and an
//! output conv producing `[5 + num_classes, h, w]`: objectness logit, box
//! deltas `(tx, ty, tw, th)`, class logits.

use rand::Rng;

use crate::det::arch::ArchConfig;
use crate::det::backbone::{ConvBlock, ConvBlockCache, MultiScaleFeatures};
use crate::error::{Error, Result};
use crate::nn::Tensor;

use super::GradMap;

/// Raw per-level prediction maps.
#[derive(Debug, Clone, PartialEq)]
pub struct RawPredictions {
    pub levels: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct Head {
    pub levels: Vec<HeadLevel>,
}

#[derive(Debug, Clone)]
pub struct HeadLevel {
    pub hidden: ConvBlock,
    pub out: ConvBlock,
}

#[derive(Debug)]
pub struct HeadCache {
    levels: Vec<(ConvBlockCache, ConvBlockCache)>,
}

impl Head {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let levels = (0..arch.levels)
            .map(|l| {
                let c = arch.channels(l);
                HeadLevel {
                    hidden: ConvBlock::new(c, c, 1, true, rng),
                    out: ConvBlock::new(c, arch.pred_channels(), 1, false, rng),
                }
            })
            .collect();
        Head { levels }
    }

    pub fn forward(&self, f: &MultiScaleFeatures) -> Result<(RawPredictions, HeadCache)> {
        if f.levels.len() != self.levels.len() {
            return Err(Error::shape(
                "Head::forward",
                format!("{} levels", self.levels.len()),
                format!("{}", f.levels.len()),
            ));
        }
        let mut preds = Vec::with_capacity(self.levels.len());
        let mut caches = Vec::with_capacity(self.levels.len());
        for (level, feat) in self.levels.iter().zip(&f.levels) {
            let (hid, c1) = level.hidden.forward(feat)?;
            let (out, c2) = level.out.forward(&hid)?;
            preds.push(out);
            caches.push((c1, c2));
        }
        Ok((RawPredictions { levels: preds }, HeadCache { levels: caches }))
    }

    /// Backward from prediction-map gradients; returns gradients wrt features.
    pub fn backward(
        &self,
        prefix: &str,
        cache: &HeadCache,
        d_preds: &[Tensor],
        grads: &mut GradMap,
    ) -> Result<Vec<Tensor>> {
        let mut d_feats = Vec::with_capacity(self.levels.len());
        for (l, level) in self.levels.iter().enumerate() {
            let (c1, c2) = &cache.levels[l];
            let d_hid = level
                .out
                .backward(&format!("{prefix}.l{l}.out"), c2, &d_preds[l], grads)?;
            let d_feat = level
                .hidden
                .backward(&format!("{prefix}.l{l}.hidden"), c1, &d_hid, grads)?;
            d_feats.push(d_feat);
        }
        Ok(d_feats)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (l, level) in self.levels.iter().enumerate() {
            level.hidden.visit_params(&format!("{prefix}.l{l}.hidden"), out);
            level.out.visit_params(&format!("{prefix}.l{l}.out"), out);
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (l, level) in self.levels.iter_mut().enumerate() {
            level.hidden.visit_params_mut(&format!("{prefix}.l{l}.hidden"), out);
            level.out.visit_params_mut(&format!("{prefix}.l{l}.out"), out);
        }
    }

    pub fn macs(&self, arch: &ArchConfig) -> u64 {
        self.levels
            .iter()
            .enumerate()
            .map(|(l, level)| {
                let side = arch.spatial(l);
                level.hidden.conv.macs(side, side) + level.out.conv.macs(side, side)
            })
            .sum()
    }
}
