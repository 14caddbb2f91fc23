//! Condition-adaptive representation learning for driver drowsiness detection.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure computation:
//!
//! - [`tensor`]: dense row-major `f64` arrays.
//! - [`layers`]: 3D convolution, max pooling, ReLU, dense, softmax and
//!   softmax cross-entropy, each with an analytic backward pass.
//! - [`network`]: the 3D-CNN representation learner, the four scene
//!   understanding heads, multiplicative fusion and the drowsiness detector.
//! - [`training`]: the balanced joint objective, SGD, the two-phase schedule
//!   and a finite-difference gradient checker.
//! - [`data`]: temporal-IOU clip labeling, resizing, Gaussian blur,
//!   augmentation and a procedural clip generator.
//! - [`eval`]: confusion counts, precision / detection rate / F-measure,
//!   ROC / AUC and per-scenario reports.
//!
//! File formats, report rendering and the command-line driver live in the
//! `condadapt` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod data;
pub mod eval;
pub mod labels;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod training;

mod hash;

pub use data::{Dataset, FrameSequence, LabeledClip, SynthConfig};
pub use eval::{Confusion, Metrics, MetricsReport};
pub use labels::{ConditionLabels, Drowsiness, Eye, GlassesIllum, Head, Mouth};
pub use network::{Network, NetworkConfig, Params};
pub use tensor::{Shape, Tensor, TensorError};
pub use training::{TrainConfig, TrainError, TrainReport};
