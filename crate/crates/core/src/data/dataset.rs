//! On-disk dataset: `manifest.json` plus one little-endian binary record per
//! scene. Record layout: header `(scene_id: u64, image_size: u32,
//! num_boxes: u32)`, then pixels as `f32` row-major, boxes as `f32`
//! `(cx, cy, w, h)` quadruples, classes as `u32`. Round-trips bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::scene::{
    generate_scene_with_stats, BoxCxcywh, SceneConfig, SyntheticScene,
};
use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub config: SceneConfig,
    pub seed: u64,
    pub count: usize,
    /// Indices of scenes that lost objects to placement failures.
    #[serde(default)]
    pub truncated_scene_indices: Vec<usize>,
}

fn record_name(index: usize) -> String {
    format!("scene_{index:06}.bin")
}

fn encode_record(scene: &SyntheticScene) -> Vec<u8> {
    let size = scene.image_size();
    let mut buf = Vec::with_capacity(16 + size * size * 4 + scene.boxes.len() * 20);
    buf.extend_from_slice(&scene.scene_id.to_le_bytes());
    buf.extend_from_slice(&(size as u32).to_le_bytes());
    buf.extend_from_slice(&(scene.boxes.len() as u32).to_le_bytes());
    for &p in scene.image.iter() {
        buf.extend_from_slice(&(p as f32).to_le_bytes());
    }
    for b in &scene.boxes {
        for v in [b.cx, b.cy, b.w, b.h] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &c in &scene.classes {
        buf.extend_from_slice(&c.to_le_bytes());
    }
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Dataset(format!(
                "truncated record {}: wanted {n} bytes at offset {}",
                self.path.display(),
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
}

fn decode_record(buf: &[u8], path: &Path) -> Result<SyntheticScene> {
    let mut cur = Cursor { buf, pos: 0, path };
    let scene_id = cur.u64()?;
    let size = cur.u32()? as usize;
    let num_boxes = cur.u32()? as usize;
    let mut pixels = Vec::with_capacity(size * size);
    for _ in 0..size * size {
        pixels.push(cur.f32()?);
    }
    let mut boxes = Vec::with_capacity(num_boxes);
    for _ in 0..num_boxes {
        let cx = cur.f32()?;
        let cy = cur.f32()?;
        let w = cur.f32()?;
        let h = cur.f32()?;
        boxes.push(BoxCxcywh { cx, cy, w, h });
    }
    let mut classes = Vec::with_capacity(num_boxes);
    for _ in 0..num_boxes {
        classes.push(cur.u32()?);
    }
    if cur.pos != buf.len() {
        return Err(Error::Dataset(format!(
            "trailing bytes in record {}",
            path.display()
        )));
    }
    Ok(SyntheticScene {
        scene_id,
        image: Tensor::from_vec(&[1, size, size], pixels)?,
        boxes,
        classes,
    })
}

/// Generates `n` scenes with per-scene seeds `seed + index` and writes them
/// under `dir`. Returns the manifest that was written.
pub fn generate_dataset(
    config: &SceneConfig,
    n: usize,
    seed: u64,
    dir: &Path,
) -> Result<DatasetManifest> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be >= 1".into()));
    }
    config.validate()?;
    fs::create_dir_all(dir).map_err(Error::io(dir))?;

    let scenes: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| generate_scene_with_stats(config, seed + i as u64))
        .collect::<Result<Vec<_>>>()?;

    let mut truncated = Vec::new();
    for (i, (scene, stats)) in scenes.iter().enumerate() {
        if stats.placement_failures > 0 {
            truncated.push(i);
        }
        let path = dir.join(record_name(i));
        let mut file = fs::File::create(&path).map_err(Error::io(&path))?;
        file.write_all(&encode_record(scene)).map_err(Error::io(&path))?;
    }

    let manifest = DatasetManifest {
        version: DATASET_FORMAT_VERSION,
        config: config.clone(),
        seed,
        count: n,
        truncated_scene_indices: truncated,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(Error::io(&manifest_path))?;
    Ok(manifest)
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    if manifest.version != DATASET_FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset version {} in {}",
            manifest.version,
            path.display()
        )));
    }
    Ok(manifest)
}

pub fn load_scene(dir: &Path, index: usize) -> Result<SyntheticScene> {
    let path: PathBuf = dir.join(record_name(index));
    let mut buf = Vec::new();
    fs::File::open(&path)
        .map_err(Error::io(&path))?
        .read_to_end(&mut buf)
        .map_err(Error::io(&path))?;
    decode_record(&buf, &path)
}

/// Loads the whole dataset in manifest order.
pub fn load_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<SyntheticScene>)> {
    let manifest = load_manifest(dir)?;
    let scenes = (0..manifest.count)
        .into_par_iter()
        .map(|i| load_scene(dir, i))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, scenes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::scene::generate_scene;
    use proptest::prelude::*;

    #[test]
    fn manifest_counts_records() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = generate_dataset(&SceneConfig::default(), 10, 7, dir.path()).unwrap();
        assert_eq!(manifest.count, 10);
        let (m2, scenes) = load_dataset(dir.path()).unwrap();
        assert_eq!(m2.count, 10);
        assert_eq!(scenes.len(), 10);
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let config = SceneConfig::default();
        generate_dataset(&config, 8, 100, dir.path()).unwrap();
        let (_, scenes) = load_dataset(dir.path()).unwrap();
        for (i, loaded) in scenes.iter().enumerate() {
            let original = generate_scene(&config, 100 + i as u64).unwrap();
            assert_eq!(*loaded, original, "scene {i} differs after round trip");
        }
    }

    #[test]
    fn disjoint_seeds_do_not_collide() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let config = SceneConfig::default();
        generate_dataset(&config, 20, 0, dir_a.path()).unwrap();
        generate_dataset(&config, 20, 1_000_000, dir_b.path()).unwrap();
        let (_, a) = load_dataset(dir_a.path()).unwrap();
        let (_, b) = load_dataset(dir_b.path()).unwrap();
        for sa in &a {
            for sb in &b {
                assert_ne!(sa.scene_id, sb.scene_id);
            }
        }
        assert!(a[0].image != b[0].image, "different seeds should give different pixels");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn record_codec_round_trips(seed in 0u64..10_000) {
            let config = SceneConfig::default();
            let scene = generate_scene(&config, seed).unwrap();
            let buf = encode_record(&scene);
            let back = decode_record(&buf, Path::new("prop")).unwrap();
            prop_assert_eq!(scene, back);
        }
    }
}
