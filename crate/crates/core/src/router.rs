//! Difficulty router: global-average-pools each pyramid level, concatenates
//! the channel descriptors, and maps them through two fully connected layers
//! (ReLU then sigmoid) to a difficulty score in (0, 1).

use rand::Rng;

use crate::det::arch::ArchConfig;
use crate::det::backbone::MultiScaleFeatures;
use crate::det::GradMap;
use crate::error::{Error, Result};
use crate::nn::{global_avg_pool, sigmoid_scalar, Linear, Tensor};

/// Router parameters. The hidden width is `floor(d / 4)` where `d` is the
/// total pooled channel count.
#[derive(Debug, Clone)]
pub struct Router {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Activations needed to backpropagate one scored image.
#[derive(Debug, Clone)]
pub struct RouterCache {
    pub pooled: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    phi: f64,
}

impl RouterCache {
    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// Pools each level to one scalar per channel and concatenates in level
/// order. Output length is the pooled dimension `d`.
pub fn pool_concat(f1: &MultiScaleFeatures) -> Result<Tensor> {
    let mut data = Vec::new();
    for level in &f1.levels {
        data.extend_from_slice(global_avg_pool(level)?.data());
    }
    Tensor::from_vec(&[data.len()], data)
}

impl Router {
    pub fn new(arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let d = arch.pooled_dim();
        let hidden = d / 4;
        Router {
            fc1: Linear::new(d, hidden, rng),
            fc2: Linear::new(hidden, 1, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.n_in()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.n_out()
    }

    /// Difficulty score for a pooled descriptor, with the backward cache.
    pub fn forward(&self, pooled: &Tensor) -> Result<RouterCache> {
        if pooled.shape() != [self.input_dim()] {
            return Err(Error::shape(
                "Router::forward",
                format!("[{}]", self.input_dim()),
                format!("{:?}", pooled.shape()),
            ));
        }
        let hidden_pre = self.fc1.forward(pooled)?;
        let hidden = crate::nn::relu(&hidden_pre);
        let logit = self.fc2.forward(&hidden)?.data()[0];
        let phi = sigmoid_scalar(logit);
        Ok(RouterCache {
            pooled: pooled.clone(),
            hidden_pre,
            hidden,
            phi,
        })
    }

    /// Convenience: score a feature pyramid directly.
    pub fn score(&self, f1: &MultiScaleFeatures) -> Result<f64> {
        Ok(self.forward(&pool_concat(f1)?)?.phi)
    }

    /// Gradient of the training objective wrt the router parameters given
    /// `coeff = L1 - L2 - delta`: returns `-coeff * dphi/dparams`.
    pub fn backward(&self, cache: &RouterCache, coeff: f64) -> Result<GradMap> {
        // dL/dz at the output logit: through sigma'(z) = phi (1 - phi).
        let dz = -coeff * cache.phi * (1.0 - cache.phi);
        self.backward_logit(cache, dz)
    }

    /// Backward from a gradient on the pre-sigmoid logit.
    pub fn backward_logit(&self, cache: &RouterCache, dz: f64) -> Result<GradMap> {
        let d_out = Tensor::from_vec(&[1], vec![dz])?;
        let (d_hidden, dw2, db2) = self.fc2.backward(&cache.hidden, &d_out)?;
        let d_pre = crate::nn::relu_backward(&cache.hidden_pre, &d_hidden)?;
        let (_, dw1, db1) = self.fc1.backward(&cache.pooled, &d_pre)?;
        let mut grads = GradMap::new();
        grads.insert("router.fc1.w".into(), dw1);
        grads.insert("router.fc1.b".into(), db1);
        grads.insert("router.fc2.w".into(), dw2);
        grads.insert("router.fc2.b".into(), db2);
        Ok(grads)
    }

    pub fn visit_params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.fc1.w"), &self.fc1.weight));
        out.push((format!("{prefix}.fc1.b"), &self.fc1.bias));
        out.push((format!("{prefix}.fc2.w"), &self.fc2.weight));
        out.push((format!("{prefix}.fc2.b"), &self.fc2.bias));
    }

    pub fn visit_params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((format!("{prefix}.fc1.w"), &mut self.fc1.weight));
        out.push((format!("{prefix}.fc1.b"), &mut self.fc1.bias));
        out.push((format!("{prefix}.fc2.w"), &mut self.fc2.weight));
        out.push((format!("{prefix}.fc2.b"), &mut self.fc2.bias));
    }

    pub fn macs(&self) -> u64 {
        self.fc1.macs() + self.fc2.macs()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::finite_diff_check;

    fn arch() -> ArchConfig {
        ArchConfig {
            image_size: 64,
            levels: 3,
            base_channels: 8,
            stem_channels: 8,
            num_classes: 3,
        }
    }

    fn features(arch: &ArchConfig, fill: impl Fn(usize, usize) -> f64) -> MultiScaleFeatures {
        MultiScaleFeatures {
            levels: (0..arch.levels)
                .map(|l| {
                    let side = arch.spatial(l);
                    let c = arch.channels(l);
                    let data = (0..c * side * side).map(|i| fill(l, i)).collect();
                    Tensor::from_vec(&[c, side, side], data).unwrap()
                })
                .collect(),
        }
    }

    #[test]
    fn pool_concat_of_constant_is_constant() {
        let arch = arch();
        let f = features(&arch, |_, _| 2.5);
        let pooled = pool_concat(&f).unwrap();
        assert_eq!(pooled.len(), 56);
        assert!(pooled.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn pool_concat_hand_means() {
        // Two 2x2 channels on a single level.
        let f = MultiScaleFeatures {
            levels: vec![Tensor::from_vec(
                &[2, 2, 2],
                vec![1.0, 2.0, 3.0, 4.0, -1.0, 1.0, -1.0, 1.0],
            )
            .unwrap()],
        };
        let pooled = pool_concat(&f).unwrap();
        assert_eq!(pooled.data(), &[2.5, 0.0]);
    }

    #[test]
    fn zero_params_give_half() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut router = Router::new(&arch, &mut rng);
        router.fc1.weight = Tensor::zeros(router.fc1.weight.shape());
        router.fc2.weight = Tensor::zeros(router.fc2.weight.shape());
        let pooled = Tensor::filled(&[56], 0.7);
        assert_eq!(router.forward(&pooled).unwrap().phi(), 0.5);
    }

    #[test]
    fn bias_only_closed_form() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut router = Router::new(&arch, &mut rng);
        router.fc2.weight = Tensor::zeros(router.fc2.weight.shape());
        router.fc2.bias = Tensor::from_vec(&[1], vec![5.0]).unwrap();
        let pooled = Tensor::filled(&[56], 0.3);
        let phi = router.forward(&pooled).unwrap().phi();
        assert!((phi - sigmoid_scalar(5.0)).abs() < 1e-15);
        assert!((phi - 0.9933).abs() < 1e-4);
    }

    #[test]
    fn hidden_dim_is_quarter_of_pooled() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let router = Router::new(&arch, &mut rng);
        assert_eq!(router.input_dim(), 56);
        assert_eq!(router.hidden_dim(), 14);
    }

    #[test]
    fn router_mac_count_formula() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let router = Router::new(&arch, &mut rng);
        let (d, h) = (56u64, 14u64);
        assert_eq!(router.macs(), d * h + h + h + 1);
    }

    fn router_flat(router: &Router) -> Vec<f64> {
        let mut named = Vec::new();
        router.visit_params("router", &mut named);
        named.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    fn set_router_flat(router: &mut Router, flat: &[f64]) {
        let mut named = Vec::new();
        router.visit_params_mut("router", &mut named);
        let mut off = 0;
        for (_, t) in named {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    fn grads_flat(router: &Router, grads: &GradMap) -> Vec<f64> {
        let mut named = Vec::new();
        router.visit_params("router", &mut named);
        named
            .iter()
            .flat_map(|(n, _)| grads.get(n).unwrap().data().iter().copied())
            .collect()
    }

    #[test]
    fn phi_gradient_matches_finite_differences() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let router = Router::new(&arch, &mut rng);
        let pooled = Tensor::from_vec(&[56], (0..56).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();

        let cache = router.forward(&pooled).unwrap();
        // coeff = -1 gives dphi/dparams exactly.
        let grads = router.backward(&cache, -1.0).unwrap();
        let analytic = grads_flat(&router, &grads);

        let mut probe = router.clone();
        let pooled_c = pooled.clone();
        let mut f = move |p: &[f64]| {
            set_router_flat(&mut probe, p);
            probe.forward(&pooled_c).unwrap().phi()
        };
        let err = finite_diff_check(&mut f, &router_flat(&router), &analytic, 1e-5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn zero_coeff_gives_zero_grads() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let router = Router::new(&arch, &mut rng);
        let pooled = Tensor::filled(&[56], 0.4);
        let cache = router.forward(&pooled).unwrap();
        let grads = router.backward(&cache, 0.0).unwrap();
        for (_, g) in grads.iter() {
            assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn grads_scale_linearly_in_coeff() {
        let arch = arch();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let router = Router::new(&arch, &mut rng);
        let pooled = Tensor::from_vec(&[56], (0..56).map(|i| (i as f64 * 0.1).sin()).collect()).unwrap();
        let cache = router.forward(&pooled).unwrap();
        let g1 = router.backward(&cache, 0.7).unwrap();
        let g2 = router.backward(&cache, 1.4).unwrap();
        for (name, a) in g1.iter() {
            let b = &g2[name];
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1.0));
            }
        }
    }

    /// Gradient of the offset objective at fixed branch losses.
    #[test]
    fn objective_gradient_matches_finite_differences() {
        let arch = arch();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let router = Router::new(&arch, &mut rng);
            let pooled =
                Tensor::from_vec(&[56], (0..56).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let (l1, l2, delta): (f64, f64, f64) = (
                rng.random_range(0.1..2.0),
                rng.random_range(0.1..2.0),
                rng.random_range(-0.5..0.5),
            );
            let cache = router.forward(&pooled).unwrap();
            let grads = router.backward(&cache, l1 - l2 - delta).unwrap();
            let analytic = grads_flat(&router, &grads);

            let mut probe = router.clone();
            let pooled_c = pooled.clone();
            let mut f = move |p: &[f64]| {
                set_router_flat(&mut probe, p);
                let phi = probe.forward(&pooled_c).unwrap().phi();
                (1.0 - phi) * (l1 - delta / 2.0) + phi * (l2 + delta / 2.0)
            };
            let err = finite_diff_check(&mut f, &router_flat(&router), &analytic, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: max relative error {err}");
        }
    }

    /// Spatial shuffles within channels leave the pooled vector unchanged.
    #[test]
    fn pool_concat_permutation_equivariance() {
        use proptest::prelude::*;
        let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(32));
        runner
            .run(
                &(proptest::collection::vec(-10.0f64..10.0, 16), any::<u64>()),
                |(vals, seed)| {
                    let t = Tensor::from_vec(&[1, 4, 4], vals.clone()).unwrap();
                    let f = MultiScaleFeatures { levels: vec![t] };
                    let before = pool_concat(&f).unwrap();

                    let mut shuffled = vals.clone();
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for i in (1..shuffled.len()).rev() {
                        let j = rng.random_range(0..=i);
                        shuffled.swap(i, j);
                    }
                    let t2 = Tensor::from_vec(&[1, 4, 4], shuffled).unwrap();
                    let f2 = MultiScaleFeatures { levels: vec![t2] };
                    let after = pool_concat(&f2).unwrap();
                    // Means agree to rounding; the sum order differs.
                    prop_assert!((before.data()[0] - after.data()[0]).abs() < 1e-12);
                    Ok(())
                },
            )
            .unwrap();
    }
}
