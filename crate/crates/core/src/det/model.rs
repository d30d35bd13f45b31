//! The cascade model: two backbones with per-level heads, the composite
//! connection between them, the difficulty router, and the calibrated offset.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::scene::SyntheticScene;
use crate::det::arch::ArchConfig;
use crate::det::backbone::{Backbone, BackboneCache, MultiScaleFeatures};
use crate::det::connect::{CompositeConnection, ConnectionCache};
use crate::det::head::{Head, HeadCache, RawPredictions};
use crate::det::loss::{detection_loss, detection_loss_backward, LossBreakdown};
use crate::error::Result;
use crate::router::Router;

use super::GradMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    Easy,
    Hard,
}

impl Route {
    pub fn name(&self) -> &'static str {
        match self {
            Route::Easy => "easy",
            Route::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CascadeModel {
    pub arch: ArchConfig,
    pub b1: Backbone,
    pub d1: Head,
    pub g: CompositeConnection,
    pub b2: Backbone,
    pub d2: Head,
    pub router: Router,
    /// Median training-loss difference between the detectors, set by
    /// calibration; 0 until then.
    pub delta: f64,
}

/// Forward caches for one full cascade pass.
pub struct CascadeCaches {
    pub f1: MultiScaleFeatures,
    pub b1: BackboneCache,
    pub d1: HeadCache,
    pub p1: RawPredictions,
    pub h: MultiScaleFeatures,
    pub g: ConnectionCache,
    pub f2: MultiScaleFeatures,
    pub b2: BackboneCache,
    pub d2: HeadCache,
    pub p2: RawPredictions,
}

impl CascadeModel {
    /// Builds a model with seeded initial weights.
    pub fn new(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = Backbone::new(arch, &mut rng);
        let d1 = Head::new(arch, &mut rng);
        let g = CompositeConnection::new(arch, &mut rng);
        let b2 = Backbone::new(arch, &mut rng);
        let d2 = Head::new(arch, &mut rng);
        let router = Router::new(arch, &mut rng);
        Ok(CascadeModel {
            arch: arch.clone(),
            b1,
            d1,
            g,
            b2,
            d2,
            router,
            delta: 0.0,
        })
    }

    /// First-backbone features only (shared prefix of both routes).
    pub fn features1(&self, image: &crate::nn::Tensor) -> Result<(MultiScaleFeatures, BackboneCache)> {
        self.b1.forward(image)
    }

    /// Easy-route predictions from precomputed first features.
    pub fn predict_easy(&self, f1: &MultiScaleFeatures) -> Result<RawPredictions> {
        Ok(self.d1.forward(f1)?.0)
    }

    /// Hard-route predictions from the input image and first features.
    pub fn predict_hard(
        &self,
        image: &crate::nn::Tensor,
        f1: &MultiScaleFeatures,
    ) -> Result<RawPredictions> {
        let (h, _) = self.g.forward(f1)?;
        let (f2, _) = self.b2.forward_assisted(image, &h)?;
        Ok(self.d2.forward(&f2)?.0)
    }

    /// Runs both branches with caches, for training.
    pub fn forward_full(&self, image: &crate::nn::Tensor) -> Result<CascadeCaches> {
        let (f1, b1) = self.b1.forward(image)?;
        let (p1, d1) = self.d1.forward(&f1)?;
        let (h, g) = self.g.forward(&f1)?;
        let (f2, b2) = self.b2.forward_assisted(image, &h)?;
        let (p2, d2) = self.d2.forward(&f2)?;
        Ok(CascadeCaches {
            f1,
            b1,
            d1,
            p1,
            h,
            g,
            f2,
            b2,
            d2,
            p2,
        })
    }

    /// Per-image losses of both detectors (no gradients).
    pub fn branch_losses(
        &self,
        scene: &SyntheticScene,
    ) -> Result<(LossBreakdown, LossBreakdown)> {
        let (f1, _) = self.b1.forward(&scene.image)?;
        let p1 = self.predict_easy(&f1)?;
        let l1 = detection_loss(&p1, scene, &self.arch)?;
        let p2 = self.predict_hard(&scene.image, &f1)?;
        let l2 = detection_loss(&p2, scene, &self.arch)?;
        Ok((l1, l2))
    }

    /// Joint objective `L1 + L2` with gradients over all detector and
    /// connection parameters. The router takes no part in this phase.
    pub fn joint_loss_backward(
        &self,
        scene: &SyntheticScene,
    ) -> Result<(LossBreakdown, LossBreakdown, GradMap)> {
        let caches = self.forward_full(&scene.image)?;
        let mut grads = GradMap::new();

        let (l1, d_p1) = detection_loss_backward(&caches.p1, scene, &self.arch)?;
        let (l2, d_p2) = detection_loss_backward(&caches.p2, scene, &self.arch)?;

        // Second branch: head -> assisted backbone -> connection.
        let d_f2 = self.d2.backward("d2", &caches.d2, &d_p2, &mut grads)?;
        let d_h = self
            .b2
            .backward("b2", &caches.b2, &d_f2, true, &mut grads)?
            .expect("assisted backward returns assist grads");
        let d_f1_from_g = self
            .g
            .backward("g", &caches.f1, &caches.g, &d_h, &mut grads)?;

        // First branch: head gradient plus the connection's contribution.
        let d_f1_from_d1 = self.d1.backward("d1", &caches.d1, &d_p1, &mut grads)?;
        let mut d_f1 = d_f1_from_d1;
        for (a, b) in d_f1.iter_mut().zip(&d_f1_from_g) {
            a.add_assign(b)?;
        }
        self.b1.backward("b1", &caches.b1, &d_f1, false, &mut grads)?;

        Ok((l1, l2, grads))
    }

    pub fn visit_params<'a>(&'a self, out: &mut Vec<(String, &'a Tensor)>) {
        self.b1.visit_params("b1", out);
        self.d1.visit_params("d1", out);
        self.g.visit_params("g", out);
        self.b2.visit_params("b2", out);
        self.d2.visit_params("d2", out);
        self.router.visit_params("router", out);
    }

    pub fn visit_params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.b1.visit_params_mut("b1", out);
        self.d1.visit_params_mut("d1", out);
        self.g.visit_params_mut("g", out);
        self.b2.visit_params_mut("b2", out);
        self.d2.visit_params_mut("d2", out);
        self.router.visit_params_mut("router", out);
    }

    /// Detector-phase parameters: everything except the router.
    pub fn visit_detector_params_mut<'a>(&'a mut self, out: &mut Vec<(String, &'a mut Tensor)>) {
        self.b1.visit_params_mut("b1", out);
        self.d1.visit_params_mut("d1", out);
        self.g.visit_params_mut("g", out);
        self.b2.visit_params_mut("b2", out);
        self.d2.visit_params_mut("d2", out);
    }

    /// Flat snapshot of all parameters in visit order.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut named = Vec::new();
        self.visit_params(&mut named);
        named.iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut named = Vec::new();
        self.visit_params_mut(&mut named);
        let mut off = 0;
        for (_, t) in named {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    /// Analytic multiply-accumulate count for one image on the given route.
    pub fn count_flops(&self, route: Route) -> u64 {
        let image = self.arch.image_size;
        let shared = self.b1.macs(image) + self.router.macs();
        match route {
            Route::Easy => shared + self.d1.macs(&self.arch),
            Route::Hard => {
                shared + self.g.macs(&self.arch) + self.b2.macs(image) + self.d2.macs(&self.arch)
            }
        }
    }
}

use crate::nn::Tensor;
