//! Patient contrastive pretraining for multi-lead ECG.
//!
//! A query branch (encoder, projection head, prediction head) is trained by
//! gradient descent against a patient memory queue of keys produced by a
//! momentum-averaged key branch. Positives are every queued key that shares
//! the query's patient ID; every queued key is a negative in the softmax
//! denominator. After pretraining, the query encoder is finetuned with a fresh
//! classification head on a labelled, patient-independent split.
//!
//! Module map:
//!
//! - [`data`]: record/manifest file formats, segmentation, splits, batching,
//!   synthetic corpora.
//! - [`augment`]: temporal neighbouring views plus the frequency and timestamp
//!   embedding masks.
//! - [`nn`]: hand-written layers with explicit backward passes.
//! - [`model`]: dilated convolutional encoder and the MLP heads.
//! - [`pcl`]: memory queue, multi-positive contrastive loss, momentum update,
//!   and the single pretraining step.
//! - [`train`]: optimizer, warmup schedule, pretraining and finetuning drivers.
//! - [`eval`]: accuracy, macro-F1, macro-AUROC and the cross-dataset overall.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pcl;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use nn::Scalar;
