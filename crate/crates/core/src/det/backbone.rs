//! Backbone: a three-conv stem (full, half, quarter resolution) followed by
//! one conv stage per pyramid level. The assisted variant adds externally
//! supplied feature maps to each stage output before the next stage runs.

use rand::Rng;

use crate::det::arch::ArchConfig;
use crate::error::{Error, Result};
use crate::nn::{add, relu, relu_backward, Conv3x3, Tensor};

use super::GradMap;

/// Per-stage feature maps, shallow to deep.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleFeatures {
    pub levels: Vec<Tensor>,
}

impl MultiScaleFeatures {
    pub fn check_contract(&self, arch: &ArchConfig) -> Result<()> {
        if self.levels.len() != arch.levels {
            return Err(Error::shape(
                "MultiScaleFeatures",
                format!("{} levels", arch.levels),
                format!("{} levels", self.levels.len()),
            ));
        }
        for (l, t) in self.levels.iter().enumerate() {
            let want = [arch.channels(l), arch.spatial(l), arch.spatial(l)];
            if t.shape() != want {
                return Err(Error::shape(
                    format!("MultiScaleFeatures level {l}"),
                    format!("{want:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }
}

/// Conv followed by ReLU, with the pieces the backward pass needs.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: Conv3x3,
    pub relu: bool,
}

#[derive(Debug)]
pub struct ConvBlockCache {
    pub input: Tensor,
    pub preact: Tensor,
}

impl ConvBlock {
    pub fn new(c_in: usize, c_out: usize, stride: usize, relu: bool, rng: &mut impl Rng) -> Self {
        ConvBlock {
            conv: Conv3x3::new(c_in, c_out, stride, rng),
            relu,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, ConvBlockCache)> {
        let preact = self.conv.forward(x)?;
        let out = if self.relu { relu(&preact) } else { preact.clone() };
        Ok((
            out,
            ConvBlockCache {
                input: x.clone(),
                preact,
            },
        ))
    }

    /// Accumulates weight grads into `grads` under `prefix` and returns grad wrt input.
    pub fn backward(
        &self,
        prefix: &str,
        cache: &ConvBlockCache,
        grad_out: &Tensor,
        grads: &mut GradMap,
    ) -> Result<Tensor> {
        let d_pre = if self.relu {
            relu_backward(&cache.preact, grad_out)?
        } else {
            grad_out.clone()
        };
        let (dx, dw, db) = self.conv.backward(&cache.input, &d_pre)?;
        super::accumulate(grads, format!("{prefix}.w"), dw);
        super::accumulate(grads, format!("{prefix}.b"), db);
        Ok(dx)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.w"), &self.conv.weight));
        out.push((format!("{prefix}.b"), &self.conv.bias));
    }

    pub fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.w"), &mut self.conv.weight));
        out.push((format!("{prefix}.b"), &mut self.conv.bias));
    }
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub stem: Vec<ConvBlock>,
    pub stages: Vec<ConvBlock>,
}

#[derive(Debug)]
pub struct BackboneCache {
    stem: Vec<ConvBlockCache>,
    stages: Vec<ConvBlockCache>,
}

impl Backbone {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let c = arch.base_channels;
        let s = arch.stem_channels;
        let stem = vec![
            ConvBlock::new(1, s, 2, true, rng),
            ConvBlock::new(s, s, 1, true, rng),
            ConvBlock::new(s, c, 2, true, rng),
        ];
        let mut stages = Vec::with_capacity(arch.levels);
        stages.push(ConvBlock::new(c, c, 1, true, rng));
        for l in 1..arch.levels {
            stages.push(ConvBlock::new(arch.channels(l - 1), arch.channels(l), 2, true, rng));
        }
        Backbone { stem, stages }
    }

    fn run(
        &self,
        x: &Tensor,
        assist: Option<&MultiScaleFeatures>,
    ) -> Result<(MultiScaleFeatures, BackboneCache)> {
        let mut stem_caches = Vec::with_capacity(self.stem.len());
        let mut cur = x.clone();
        for block in &self.stem {
            let (out, cache) = block.forward(&cur)?;
            stem_caches.push(cache);
            cur = out;
        }
        let mut levels = Vec::with_capacity(self.stages.len());
        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for (l, block) in self.stages.iter().enumerate() {
            let (out, cache) = block.forward(&cur)?;
            stage_caches.push(cache);
            let level = match assist {
                Some(h) => add(&out, &h.levels[l])?,
                None => out,
            };
            levels.push(level.clone());
            cur = level;
        }
        Ok((
            MultiScaleFeatures { levels },
            BackboneCache {
                stem: stem_caches,
                stages: stage_caches,
            },
        ))
    }

    /// Plain forward pass producing the feature pyramid.
    pub fn forward(&self, x: &Tensor) -> Result<(MultiScaleFeatures, BackboneCache)> {
        self.run(x, None)
    }

    /// Assisted forward pass: stage `l` output is `stage_l(prev) + h[l]`,
    /// and that sum is what the next stage consumes.
    pub fn forward_assisted(
        &self,
        x: &Tensor,
        h: &MultiScaleFeatures,
    ) -> Result<(MultiScaleFeatures, BackboneCache)> {
        self.run(x, Some(h))
    }

    /// Backward through stem and stages. `d_levels[l]` is the gradient
    /// flowing into level `l` from outside consumers. Returns the gradient
    /// wrt each assist map when `assisted` (the assist enters each level sum
    /// with unit weight, so it equals the total gradient at that level).
    pub fn backward(
        &self,
        prefix: &str,
        cache: &BackboneCache,
        d_levels: &[Tensor],
        assisted: bool,
        grads: &mut GradMap,
    ) -> Result<Option<Vec<Tensor>>> {
        if d_levels.len() != self.stages.len() {
            return Err(Error::shape(
                "Backbone::backward",
                format!("{} level grads", self.stages.len()),
                format!("{}", d_levels.len()),
            ));
        }
        let mut d_assist = assisted.then(|| vec![Tensor::zeros(&[0]); self.stages.len()]);
        let mut upstream: Option<Tensor> = None;
        for l in (0..self.stages.len()).rev() {
            let mut d_level = d_levels[l].clone();
            if let Some(up) = upstream.take() {
                d_level.add_assign(&up)?;
            }
            if let Some(da) = d_assist.as_mut() {
                da[l] = d_level.clone();
            }
            let d_in = self.stages[l].backward(
                &format!("{prefix}.stage{l}"),
                &cache.stages[l],
                &d_level,
                grads,
            )?;
            upstream = Some(d_in);
        }
        let mut cur = upstream.expect("at least one stage");
        for (i, block) in self.stem.iter().enumerate().rev() {
            cur = block.backward(&format!("{prefix}.stem{i}"), &cache.stem[i], &cur, grads)?;
        }
        Ok(d_assist)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, b) in self.stem.iter().enumerate() {
            b.visit_params(&format!("{prefix}.stem{i}"), out);
        }
        for (l, b) in self.stages.iter().enumerate() {
            b.visit_params(&format!("{prefix}.stage{l}"), out);
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, b) in self.stem.iter_mut().enumerate() {
            b.visit_params_mut(&format!("{prefix}.stem{i}"), out);
        }
        for (l, b) in self.stages.iter_mut().enumerate() {
            b.visit_params_mut(&format!("{prefix}.stage{l}"), out);
        }
    }

    pub fn macs(&self, image_size: usize) -> u64 {
        let mut total = 0;
        let mut side = image_size;
        for b in &self.stem {
            total += b.conv.macs(side, side);
            side = b.conv.out_spatial(side, side).0;
        }
        for b in &self.stages {
            total += b.conv.macs(side, side);
            side = b.conv.out_spatial(side, side).0;
        }
        total
    }
}
