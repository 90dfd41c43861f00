//! Unsupervised segmentation from self-supervised transformer features.
//!
//! The pipeline runs downstream of feature extraction:
//!
//! 1. [`distill`] turns per-image attention features ([`store::pack`]) into one
//!    object mask each, via the CLS and patch affinity graphs in [`affinity`].
//! 2. [`cluster`] assigns pseudo-labels by K-means over masked-image CLS
//!    embeddings.
//! 3. [`pseudo_gt`] filters candidates by confidence and paints per-image
//!    semantic maps.
//! 4. [`loss`] provides the hard-pixel-mining cross-entropy for training on
//!    those maps, and [`eval`] scores results with Hungarian-matched mIoU and
//!    COCO-style mask AP.
//!
//! [`stages`] wires these together over the on-disk formats.

pub mod affinity;
pub mod cluster;
pub mod distill;
pub mod error;
pub mod eval;
pub mod loss;
pub mod mask;
pub mod pseudo_gt;
pub mod stages;
pub mod store;

pub use error::{Error, Result};
pub use mask::{BBox, BinaryMask};
pub use store::manifest::Candidate;
pub use store::pack::FeaturePack;
