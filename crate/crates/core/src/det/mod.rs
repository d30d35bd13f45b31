//! Cascade detector: backbones, composite connection, heads, loss, decoding,
//! FLOPs accounting, and checkpointing.

use std::collections::BTreeMap;

use crate::nn::Tensor;

pub mod arch;
pub mod backbone;
pub mod checkpoint;
pub mod connect;
pub mod decode;
pub mod head;
pub mod loss;
pub mod model;

pub use arch::ArchConfig;
pub use backbone::{Backbone, ConvBlock, MultiScaleFeatures};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use connect::CompositeConnection;
pub use decode::{decode_predictions, Detection};
pub use head::{Head, RawPredictions};
pub use loss::{assign_targets, detection_loss, detection_loss_backward, Assignment, LossBreakdown};
pub use model::{CascadeCaches, CascadeModel, Route};

/// Named parameter gradients, keyed by the same names the parameter
/// visitors produce. BTreeMap keeps iteration deterministic.
pub type GradMap = BTreeMap<String, Tensor>;

/// Adds `grad` into `grads[name]`, creating the slot if needed.
pub fn accumulate(grads: &mut GradMap, name: String, grad: Tensor) {
    match grads.get_mut(&name) {
        Some(existing) => existing
            .add_assign(&grad)
            .expect("gradient shapes are fixed per name"),
        None => {
            grads.insert(name, grad);
        }
    }
}
