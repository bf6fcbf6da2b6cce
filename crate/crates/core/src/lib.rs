//! Unsupervised entity alignment between two knowledge graphs.
//!
//! Every entity gets a personalized rooted tree sampled from an attention
//! distribution over its neighborhood. Trees are encoded leaves-to-root with
//! relation-aware tree attention built on Householder reflections. Training is
//! self-supervised: pseudo-labels come from mutual-nearest matching on a
//! CSLS-rescaled similarity matrix, and a contrastive alignment loss is
//! regularized by mutual-information terms that anchor the encoder to the
//! name features it was initialized from.
//!
//! Module map:
//!
//! * [`kg`] parses and indexes the two graphs and the reference alignment.
//! * [`embed`] holds trainable tables, feature files and momentum copies.
//! * [`geometry`] implements reflections and path-relation composition.
//! * [`sampler`] draws rooted trees from frozen momentum tables.
//! * [`encoder`] runs tree attention over a sampled tree.
//! * [`alignment`] covers similarity, CSLS, pseudo-labels and metrics.
//! * [`losses`] has the contrastive and mutual-information objectives.
//! * [`trainer`] orchestrates refreshes, batches and optimizer steps.
//! * [`synth`] generates twin benchmarks with a planted alignment.

pub mod alignment;
pub mod autodiff;
pub mod config;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod geometry;
pub mod kg;
pub mod losses;
pub mod sampler;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Matrix, Real};
