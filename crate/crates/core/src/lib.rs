//! Allocation-only numerics for out-of-core learning over dense row-major
//! matrices.
//!
//! Everything in this crate works on borrowed `&[f64]` views, so the same code
//! runs unchanged whether the rows live in a heap buffer or in a file mapping
//! owned by the caller. IO, mapping, threads and the CLI live in the `m3`
//! crate; this crate only needs `alloc`.
//!
//! Reductions over rows are always split by a [`ChunkPlan`] and combined in
//! ascending chunk order, which makes every result independent of how many
//! threads a [`ChunkExecutor`] uses.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod exec;
pub mod format;
pub mod generator;
pub mod kmeans;
pub mod matrix;
pub mod optim;
pub mod prng;
pub mod softmax;
mod vecops;

pub use error::{Error, FormatError};
pub use exec::{ChunkExecutor, Sequential};
pub use format::{LabelHeader, MatrixHeader, HEADER_LEN};
pub use generator::{Generator, GeneratorSpec};
pub use kmeans::{KmeansInit, KmeansModel, KmeansOptions};
pub use matrix::{ChunkPlan, MatrixView, DEFAULT_CHUNK_ROWS};
pub use optim::{LbfgsOptions, LbfgsReport, Objective};
pub use prng::SplitMix64;
pub use softmax::{LogregConfig, SoftmaxModel};
