//! AdaSplit: sequential recommendation with adaptive preference
//! disentanglement.
//!
//! A user's interaction history is partitioned on the fly into a variable
//! number of interest sub-sequences by a reinforcement-learned behavior
//! allocator. Each sub-sequence keeps a recurrently updated representation;
//! the next item is scored against the representation of the sub-sequence
//! the allocator routes it to.
//!
//! The crate is organized around the training pipeline:
//!
//! - [`autodiff`]: reverse-mode differentiation tape and Adam optimizer
//! - [`dataio`]: interaction-log ingestion, filtering, leave-one-out splits
//! - [`encoder`]: self-attention encoder producing globally contextualized
//!   item vectors for the allocation task
//! - [`allocator`]: the MDP core that maintains sub-sequences and scores
//!   actions, including "create a new sub-sequence"
//! - [`reward`]: reward components, curriculum penalty schedule, returns
//! - [`trainer`]: episode rollouts, joint loss, optimization loop
//! - [`eval`]: full-ranking NDCG/MRR evaluation plus a popularity baseline
//! - [`synth`]: synthetic multi-interest generator and NMI scoring of the
//!   recovered partitions
//! - [`config`] / [`cli`]: experiment configuration and batch entry points
//!
//! See the `examples/` directory for one runnable example per capability,
//! and the `adasplit` binary for the batch CLI.

pub mod allocator;
pub mod autodiff;
pub mod cli;
pub mod config;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod model;
pub mod reward;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
