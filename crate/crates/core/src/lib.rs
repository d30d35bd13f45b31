//! Two-detector cascade with a learned difficulty router.
//!
//! A first detector handles easy images; a router scores each image from the
//! first backbone's pooled multi-scale features, and images above a threshold
//! continue through a composite connection into a second backbone and head.
//! The router trains against the per-image loss difference between the two
//! detectors, centered by its median over the training set, which balances
//! the split without any cost hyperparameter. Sweeping the threshold over
//! quantiles of validation scores turns one trained model into a family of
//! accuracy/cost operating points.
//!
//! Everything runs on a synthetic shapes detection task with hand-written
//! forward and backward passes in `f64`, so gradients are checkable against
//! finite differences end to end.

pub mod data;
pub mod det;
pub mod error;
pub mod eval;
pub mod infer;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod router;
pub mod train;

pub use error::{Error, Result};
