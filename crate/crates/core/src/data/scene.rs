//! Synthetic detection scenes: images of geometric shapes with tunable
//! difficulty (object count, size, overlap, noise).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const SHAPE_KINDS: usize = 3; // rectangle, disk, triangle

/// Axis-aligned box as center, width, height, in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxCxcywh {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BoxCxcywh {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

/// Intersection over union of two axis-aligned boxes.
pub fn iou(a: &BoxCxcywh, b: &BoxCxcywh) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Generation knobs for one scene distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Square image side in pixels.
    pub image_size: usize,
    /// Inclusive range for the number of objects.
    pub num_objects_range: (usize, usize),
    /// Object side as a fraction of the image side.
    pub size_range: (f64, f64),
    /// Maximum allowed IoU between placed boxes.
    pub max_overlap_iou: f64,
    /// Additive Gaussian pixel noise.
    pub noise_sigma: f64,
    /// Number of object classes (at most 3 shape kinds are available).
    pub num_classes: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            image_size: 64,
            num_objects_range: (1, 5),
            size_range: (0.12, 0.5),
            max_overlap_iou: 0.4,
            noise_sigma: 0.03,
            num_classes: 3,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 32 {
            return Err(Error::InvalidConfig(format!(
                "image_size must be >= 32, got {}",
                self.image_size
            )));
        }
        if self.num_objects_range.0 > self.num_objects_range.1 {
            return Err(Error::InvalidConfig(format!(
                "num_objects_range min > max: {:?}",
                self.num_objects_range
            )));
        }
        if !(self.size_range.0 <= self.size_range.1
            && self.size_range.0 > 0.0
            && self.size_range.1 < 1.0)
        {
            return Err(Error::InvalidConfig(format!(
                "size_range must satisfy 0 < min <= max < 1, got {:?}",
                self.size_range
            )));
        }
        if !(0.0..=1.0).contains(&self.max_overlap_iou) {
            return Err(Error::InvalidConfig(format!(
                "max_overlap_iou must be in [0, 1], got {}",
                self.max_overlap_iou
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.num_classes < 1 || self.num_classes > SHAPE_KINDS {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be in 1..={SHAPE_KINDS}, got {}",
                self.num_classes
            )));
        }
        Ok(())
    }
}

/// One synthetic scene: a `[1, S, S]` grayscale image plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub scene_id: u64,
    pub image: Tensor,
    pub boxes: Vec<BoxCxcywh>,
    pub classes: Vec<u32>,
}

impl SyntheticScene {
    pub fn image_size(&self) -> usize {
        self.image.shape()[1]
    }
}

/// Per-scene generation diagnostics.
#[derive(Debug, Clone, Copy, Default)]
pub struct SceneGenStats {
    /// Objects dropped because no non-overlapping placement was found
    /// within the rejection-sampling budget.
    pub placement_failures: u32,
}

const PLACEMENT_ATTEMPTS: usize = 100;

fn snap_f32(v: f64) -> f64 {
    (v as f32) as f64
}

/// Deterministic scene generation from `(config, seed)`.
pub fn generate_scene(config: &SceneConfig, seed: u64) -> Result<SyntheticScene> {
    generate_scene_with_stats(config, seed).map(|(scene, _)| scene)
}

pub fn generate_scene_with_stats(
    config: &SceneConfig,
    seed: u64,
) -> Result<(SyntheticScene, SceneGenStats)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = config.image_size;
    let sizef = size as f64;

    let (lo, hi) = config.num_objects_range;
    let n_objects = if lo == hi { lo } else { rng.random_range(lo..=hi) };

    let mut boxes: Vec<BoxCxcywh> = Vec::with_capacity(n_objects);
    let mut classes: Vec<u32> = Vec::with_capacity(n_objects);
    let mut intensities: Vec<f64> = Vec::with_capacity(n_objects);
    let mut stats = SceneGenStats::default();

    for _ in 0..n_objects {
        let class = rng.random_range(0..config.num_classes) as u32;
        let side = if config.size_range.0 == config.size_range.1 {
            config.size_range.0 * sizef
        } else {
            rng.random_range(config.size_range.0..config.size_range.1) * sizef
        };
        let intensity = rng.random_range(0.35..0.95);
        // Box sides are snapped to f32 so the on-disk record round-trips exactly.
        let s = snap_f32(side);
        let half = s / 2.0;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let cx = snap_f32(rng.random_range(half..(sizef - half)))
                .clamp(half, sizef - half);
            let cy = snap_f32(rng.random_range(half..(sizef - half)))
                .clamp(half, sizef - half);
            let candidate = BoxCxcywh { cx, cy, w: s, h: s };
            if boxes.iter().all(|b| iou(b, &candidate) <= config.max_overlap_iou) {
                placed = Some(candidate);
                break;
            }
        }
        match placed {
            Some(b) => {
                boxes.push(b);
                classes.push(class);
                intensities.push(intensity);
            }
            None => stats.placement_failures += 1,
        }
    }

    let mut pixels = vec![0.0f64; size * size];
    for ((b, &class), &intensity) in boxes.iter().zip(&classes).zip(&intensities) {
        render_shape(&mut pixels, size, b, class, intensity);
    }

    if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| Error::InvalidConfig(format!("noise_sigma: {e}")))?;
        for p in &mut pixels {
            *p += normal.sample(&mut rng);
        }
    }
    for p in &mut pixels {
        *p = snap_f32(p.clamp(0.0, 1.0));
    }

    let image = Tensor::from_vec(&[1, size, size], pixels)?;
    Ok((
        SyntheticScene {
            scene_id: seed,
            image,
            boxes,
            classes,
        },
        stats,
    ))
}

fn render_shape(pixels: &mut [f64], size: usize, b: &BoxCxcywh, class: u32, intensity: f64) {
    let (x0, y0, x1, y1) = b.corners();
    let px0 = x0.floor().max(0.0) as usize;
    let py0 = y0.floor().max(0.0) as usize;
    let px1 = (x1.ceil() as usize).min(size);
    let py1 = (y1.ceil() as usize).min(size);
    let (hw, hh) = (b.w / 2.0, b.h / 2.0);
    for py in py0..py1 {
        let y = py as f64 + 0.5;
        for px in px0..px1 {
            let x = px as f64 + 0.5;
            let dx = x - b.cx;
            let dy = y - b.cy;
            let inside = match class % SHAPE_KINDS as u32 {
                0 => dx.abs() <= hw && dy.abs() <= hh,
                1 => (dx / hw).powi(2) + (dy / hh).powi(2) <= 1.0,
                _ => {
                    // Isoceles triangle: apex top center, base at the bottom.
                    let rel = (y - (b.cy - hh)) / b.h;
                    (0.0..=1.0).contains(&rel) && dx.abs() <= rel * hw
                }
            };
            if inside {
                pixels[py * size + px] = intensity;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_empty_scene() {
        let config = SceneConfig {
            num_objects_range: (0, 0),
            ..SceneConfig::default()
        };
        let scene = generate_scene(&config, 1).unwrap();
        assert!(scene.boxes.is_empty());
        assert!(scene.classes.is_empty());
    }

    #[test]
    fn determinism_bit_identical() {
        let config = SceneConfig::default();
        let a = generate_scene(&config, 42).unwrap();
        let b = generate_scene(&config, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn forced_geometry_single_box() {
        let config = SceneConfig {
            image_size: 64,
            num_objects_range: (1, 1),
            size_range: (0.5, 0.5),
            noise_sigma: 0.0,
            ..SceneConfig::default()
        };
        let scene = generate_scene(&config, 3).unwrap();
        assert_eq!(scene.boxes.len(), 1);
        assert_eq!(scene.boxes[0].w, 32.0);
        assert_eq!(scene.boxes[0].h, 32.0);
    }

    #[test]
    fn boxes_inside_image_and_pixels_in_range() {
        let config = SceneConfig::default();
        for seed in 0..50 {
            let scene = generate_scene(&config, seed).unwrap();
            let sz = scene.image_size() as f64;
            for b in &scene.boxes {
                let (x0, y0, x1, y1) = b.corners();
                assert!(x0 >= 0.0 && y0 >= 0.0 && x1 <= sz && y1 <= sz, "box escapes image: {b:?}");
            }
            assert!(scene.image.iter().all(|&p| (0.0..=1.0).contains(&p) && p.is_finite()));
            assert_eq!(scene.boxes.len(), scene.classes.len());
        }
    }

    #[test]
    fn object_count_tracks_range_midpoint() {
        // Difficulty monotonicity hook: noise off, overlap unconstrained.
        let config = SceneConfig {
            num_objects_range: (1, 5),
            max_overlap_iou: 1.0,
            noise_sigma: 0.0,
            ..SceneConfig::default()
        };
        let n = 1000;
        let total: usize = (0..n)
            .map(|seed| generate_scene(&config, seed).unwrap().boxes.len())
            .sum();
        let mean = total as f64 / n as f64;
        let midpoint = 3.0;
        assert!((mean - midpoint).abs() <= 0.1 * midpoint, "mean {mean}");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = SceneConfig::default();
        c.image_size = 16;
        assert!(c.validate().is_err());
        let mut c = SceneConfig::default();
        c.num_objects_range = (3, 1);
        assert!(c.validate().is_err());
        let mut c = SceneConfig::default();
        c.num_classes = 4;
        assert!(c.validate().is_err());
    }
}
