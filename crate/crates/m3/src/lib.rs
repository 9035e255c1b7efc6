//! Memory-mapped matrices, dataset files and the scaling benchmark harness.
//!
//! The numerical kernels live in `m3_core`; this crate supplies file-backed
//! storage, a thread-pool executor and the `m3` command line tool.

pub mod bench;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod exec;
pub mod memcap;
pub mod mmatrix;

pub use error::{Error, Result};
pub use exec::ThreadPoolExecutor;
pub use mmatrix::{Advice, LabelFile, MappedMatrix, Mode};
