//! Image-mixing augmentation pipelines with deterministic per-sample
//! randomness, plus a small MLP trainer for evaluating them.
//!
//! A [`PipelineSpec`] is a base transform chain followed by mixing stages
//! (`mixup`, `cutmix`, `augmix`, `stackmix`). Every batch slot draws from its
//! own counter-based stream, so batches are reproducible from
//! `(seed, epoch, batch_index)` regardless of thread count.

pub mod data;
pub mod error;
pub mod image;
pub mod label;
pub mod mixers;
pub mod rng;
pub mod sample;
pub mod trainer;
pub mod transforms;

pub use data::{Dataset, Split};
pub use error::{Error, Result};
pub use image::{concat_images, Axis, Image, RangeTag};
pub use label::{mix_labels, LabelVector};
pub use mixers::{build_batch, compose, AugMixParams, PipelineSpec, Stage};
pub use rng::{derive_stream, domain_seed, slot_stream_id, RngStream};
pub use sample::{Batch, Sample};
pub use transforms::{apply_chain, apply_transform, AugMixOp, TransformChain, TransformSpec};
