//! Pixel-tag scoring, gap-based pseudo-tag selection and text-tag
//! self-distillation over serialized embedding tensors.
//!
//! The pipeline for one image-text pair:
//!
//! 1. [`scoring`] ranks every caption word (tag) against the image, most
//!    usefully by its best-matching pixel embedding.
//! 2. [`selection`] keeps the tags above the largest drop in that ranking.
//! 3. [`distill`] pulls the caption's similarity map toward the union of the
//!    selected tags' normalized maps, and each tag map toward its own
//!    normalization (selected) or zero (rejected).
//! 4. [`adapter`] trains a low-rank adapter on that objective.
//! 5. [`metrics`] scores tag selection and segmentation quality.
//!
//! Per-sample work runs on rayon when the `parallel` feature is enabled
//! (default); see [`par::Exec`].

pub mod adapter;
pub mod distill;
pub mod error;
pub mod maps;
pub mod metrics;
pub mod par;
pub mod sample;
pub mod scoring;
pub mod selection;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, IoError, Result};
pub use maps::{Embedding, PixelMap, ScalarMap};
pub use par::Exec;
pub use sample::{Sample, TagEmbedding};
pub use scoring::{ScoreMethod, TagScores};
pub use selection::{SelectionMode, SelectionResult};
