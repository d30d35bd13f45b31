//! Synthetic detection data: scene generation and the on-disk dataset format.

pub mod dataset;
pub mod scene;

pub use dataset::{
    generate_dataset, load_dataset, load_manifest, load_scene, DatasetManifest,
    DATASET_FORMAT_VERSION,
};
pub use scene::{
    generate_scene, generate_scene_with_stats, iou, BoxCxcywh, SceneConfig, SceneGenStats,
    SyntheticScene, SHAPE_KINDS,
};
