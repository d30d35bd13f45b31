//! Composite connection: embeds the first backbone's pyramid into assist
//! maps for the second backbone. Each target level sums channel projections
//! of every same-or-deeper source level, nearest-neighbor upsampled to the
//! target resolution.

use rand::Rng;

use crate::det::arch::ArchConfig;
use crate::det::backbone::MultiScaleFeatures;
use crate::error::{Error, Result};
use crate::nn::{upsample_nearest, upsample_nearest_backward, Tensor};

use super::GradMap;

/// Per-pixel channel mixing with a `[c_out, c_in]` weight matrix (a 1x1
/// projection without bias).
fn project(weight: &Tensor, x: &Tensor) -> Tensor {
    let (c_out, c_in) = (weight.shape()[0], weight.shape()[1]);
    let (h, w) = (x.shape()[1], x.shape()[2]);
    debug_assert_eq!(x.shape()[0], c_in);
    let px = h * w;
    let mut out = Tensor::zeros(&[c_out, h, w]);
    let od = out.data_mut();
    let xd = x.data();
    let wd = weight.data();
    for co in 0..c_out {
        for ci in 0..c_in {
            let wv = wd[co * c_in + ci];
            if wv == 0.0 {
                continue;
            }
            let src = &xd[ci * px..(ci + 1) * px];
            let dst = &mut od[co * px..(co + 1) * px];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wv * s;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct CompositeConnection {
    /// `proj[l][j - l]` maps source level `j >= l` to target level `l`.
    pub proj: Vec<Vec<Tensor>>,
}

#[derive(Debug)]
pub struct ConnectionCache {
    /// Upsampled source per (target, source) pair, needed for weight grads.
    upsampled: Vec<Vec<Tensor>>,
}

impl CompositeConnection {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let mut proj = Vec::with_capacity(arch.levels);
        for l in 0..arch.levels {
            let mut row = Vec::new();
            for j in l..arch.levels {
                let (c_out, c_in) = (arch.channels(l), arch.channels(j));
                let bound = 1.0 / (c_in as f64).sqrt();
                let data = (0..c_out * c_in)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect();
                row.push(Tensor::from_vec(&[c_out, c_in], data).unwrap());
            }
            proj.push(row);
        }
        CompositeConnection { proj }
    }

    pub fn zero_weights(&mut self) {
        for row in &mut self.proj {
            for t in row {
                *t = Tensor::zeros(t.shape());
            }
        }
    }

    pub fn forward(&self, f1: &MultiScaleFeatures) -> Result<(MultiScaleFeatures, ConnectionCache)> {
        let levels_n = self.proj.len();
        if f1.levels.len() != levels_n {
            return Err(Error::shape(
                "CompositeConnection::forward",
                format!("{levels_n} levels"),
                format!("{}", f1.levels.len()),
            ));
        }
        let mut out_levels = Vec::with_capacity(levels_n);
        let mut cache = Vec::with_capacity(levels_n);
        for l in 0..levels_n {
            let target_side = f1.levels[l].shape()[1];
            let mut acc: Option<Tensor> = None;
            let mut ups = Vec::new();
            for j in l..levels_n {
                let src_side = f1.levels[j].shape()[1];
                let factor = target_side / src_side;
                let up = upsample_nearest(&f1.levels[j], factor)?;
                let contrib = project(&self.proj[l][j - l], &up);
                ups.push(up);
                match acc.as_mut() {
                    Some(a) => a.add_assign(&contrib)?,
                    None => acc = Some(contrib),
                }
            }
            out_levels.push(acc.expect("at least one source level"));
            cache.push(ups);
        }
        Ok((
            MultiScaleFeatures { levels: out_levels },
            ConnectionCache { upsampled: cache },
        ))
    }

    /// Backward from gradients on the assist maps. Returns gradients wrt
    /// the source pyramid and accumulates projection weight grads.
    pub fn backward(
        &self,
        prefix: &str,
        f1: &MultiScaleFeatures,
        cache: &ConnectionCache,
        d_h: &[Tensor],
        grads: &mut GradMap,
    ) -> Result<Vec<Tensor>> {
        let levels_n = self.proj.len();
        let mut d_f1: Vec<Tensor> = f1.levels.iter().map(|t| Tensor::zeros(t.shape())).collect();
        for l in 0..levels_n {
            let g = &d_h[l];
            let (h, w) = (g.shape()[1], g.shape()[2]);
            let px = h * w;
            for j in l..levels_n {
                let weight = &self.proj[l][j - l];
                let (c_out, c_in) = (weight.shape()[0], weight.shape()[1]);
                let up = &cache.upsampled[l][j - l];
                // dW[co, ci] = sum_px g[co, p] * up[ci, p]
                let mut dw = Tensor::zeros(&[c_out, c_in]);
                {
                    let dwd = dw.data_mut();
                    let gd = g.data();
                    let ud = up.data();
                    for co in 0..c_out {
                        let grow = &gd[co * px..(co + 1) * px];
                        for ci in 0..c_in {
                            let urow = &ud[ci * px..(ci + 1) * px];
                            let mut acc = 0.0;
                            for (a, b) in grow.iter().zip(urow) {
                                acc += a * b;
                            }
                            dwd[co * c_in + ci] += acc;
                        }
                    }
                }
                super::accumulate(grads, format!("{prefix}.p{l}_{j}.w"), dw);
                // d_up[ci, p] = sum_co W[co, ci] * g[co, p]
                let mut d_up = Tensor::zeros(&[c_in, h, w]);
                {
                    let dud = d_up.data_mut();
                    let gd = g.data();
                    let wd = weight.data();
                    for co in 0..c_out {
                        let grow = &gd[co * px..(co + 1) * px];
                        for ci in 0..c_in {
                            let wv = wd[co * c_in + ci];
                            if wv == 0.0 {
                                continue;
                            }
                            let dst = &mut dud[ci * px..(ci + 1) * px];
                            for (d, s) in dst.iter_mut().zip(grow) {
                                *d += wv * s;
                            }
                        }
                    }
                }
                let src_side = f1.levels[j].shape()[1];
                let factor = h / src_side;
                let d_src = upsample_nearest_backward(&d_up, factor)?;
                d_f1[j].add_assign(&d_src)?;
            }
        }
        Ok(d_f1)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (l, row) in self.proj.iter().enumerate() {
            for (off, t) in row.iter().enumerate() {
                out.push((format!("{prefix}.p{l}_{}.w", l + off), t));
            }
        }
    }

    pub fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (l, row) in self.proj.iter_mut().enumerate() {
            for (off, t) in row.iter_mut().enumerate() {
                out.push((format!("{prefix}.p{l}_{}.w", l + off), t));
            }
        }
    }

    /// MAC count: channel mixing at the target resolution for every
    /// (target, source) pair. Upsampling and summation are free.
    pub fn macs(&self, arch: &ArchConfig) -> u64 {
        let mut total = 0u64;
        for l in 0..arch.levels {
            let px = (arch.spatial(l) * arch.spatial(l)) as u64;
            for j in l..arch.levels {
                total += px * arch.channels(l) as u64 * arch.channels(j) as u64;
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny_arch() -> ArchConfig {
        ArchConfig {
            image_size: 32,
            levels: 2,
            base_channels: 1,
            stem_channels: 1,
            num_classes: 1,
        }
    }

    #[test]
    fn zero_weights_give_zero_embedding() {
        let arch = ArchConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = CompositeConnection::new(&arch, &mut rng);
        g.zero_weights();
        let f1 = MultiScaleFeatures {
            levels: (0..3)
                .map(|l| Tensor::filled(&[arch.channels(l), arch.spatial(l), arch.spatial(l)], 1.5))
                .collect(),
        };
        let (h, _) = g.forward(&f1).unwrap();
        for level in &h.levels {
            assert!(level.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_level_identity_projection() {
        let arch = ArchConfig {
            levels: 1,
            base_channels: 2,
            ..ArchConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = CompositeConnection::new(&arch, &mut rng);
        g.proj[0][0] = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f1 = MultiScaleFeatures {
            levels: vec![Tensor::from_vec(
                &[2, 16, 16],
                (0..2 * 256).map(|i| i as f64 * 0.01).collect(),
            )
            .unwrap()],
        };
        let (h, _) = g.forward(&f1).unwrap();
        assert_eq!(h.levels[0], f1.levels[0]);
    }

    /// L=2 pyramid with 2x2 / 1x1 spatial maps and hand-set 1x1 projections.
    #[test]
    fn hand_computed_two_level_sum() {
        let arch = tiny_arch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = CompositeConnection::new(&arch, &mut rng);
        // Level 0: 1 channel 2x2; level 1: 2 channels 1x1.
        let f0 = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f1 = Tensor::from_vec(&[2, 1, 1], vec![10.0, 20.0]).unwrap();
        // proj[0][0]: [1,1] scale by 2; proj[0][1]: [1,2] combine (0.5, 0.25);
        // proj[1][0]: [2,2] swap channels.
        g.proj = vec![
            vec![
                Tensor::from_vec(&[1, 1], vec![2.0]).unwrap(),
                Tensor::from_vec(&[1, 2], vec![0.5, 0.25]).unwrap(),
            ],
            vec![Tensor::from_vec(&[2, 2], vec![0.0, 1.0, 1.0, 0.0]).unwrap()],
        ];
        let feats = MultiScaleFeatures {
            levels: vec![f0, f1],
        };
        let (h, _) = g.forward(&feats).unwrap();
        // Target 0: 2*f0 + upsample(0.5*10 + 0.25*20 = 10) over 2x2.
        assert_eq!(h.levels[0].data(), &[12.0, 14.0, 16.0, 18.0]);
        // Target 1: swapped channels of f1.
        assert_eq!(h.levels[1].data(), &[20.0, 10.0]);
    }
}
