//! Offline partition-and-reassembly optimizer for zoos of pre-trained networks.
//!
//! Each network is described as a path graph of atomic nodes with parameter and FLOP
//! costs plus probe-batch activation dumps. The pipeline is:
//!
//! 1. [`similarity`]: fill a node-pair linear CKA table once, offline.
//! 2. [`partition`]: cut every model into K contiguous blocks and cluster the blocks into
//!    K equivalence sets, maximizing summed functional similarity to per-set anchors.
//! 3. [`reassembly`]: sample one block per set and per stage under parameter and FLOP
//!    budgets (stitching adapters included) and rank candidates by the NASWOT
//!    log-determinant score.
//!
//! [`synthzoo`] generates small synthetic zoos with exact forward evaluation, used as
//! ground truth in tests.

pub mod cli;
pub mod error;
pub mod formats;
pub mod linalg;
pub mod numeric;
pub mod partition;
pub mod reassembly;
pub mod seeding;
pub mod similarity;
pub mod synthzoo;
pub mod zoo;

pub use error::{Error, ErrorClass, Result};
pub use numeric::Real;

/// Shipped defaults.
pub mod defaults {
    /// Number of blocks per model and of equivalence sets.
    pub const K: usize = 4;
    /// Block size coefficient in `|B| < (1+eps)·|M|/K`.
    pub const EPS: f64 = 0.2;
    /// Independent partition restarts.
    pub const RESTARTS: usize = 200;
    /// Reassembly candidates scored per search.
    pub const CANDIDATES: usize = 500;
    /// Probe mini-batches averaged per NASWOT score.
    pub const BATCHES: usize = 5;
    pub const BATCH_SIZE: usize = 32;
    /// Fraction of probe rows used for the similarity table.
    pub const SUBSAMPLE: f64 = 1.0 / 20.0;
    /// Partition convergence threshold on the objective gain per sweep.
    pub const TOL: f64 = 1e-6;
    /// Sweep cap per partition restart.
    pub const MAX_ITERS: usize = 100;
}

pub type Matrix = linalg::Mat<f64>;
pub type FeatureMatrix = linalg::Mat<f32>;
pub type SimilarityTable = similarity::SimilarityTable<f64>;
pub type FunctionalSimilarity = similarity::FunctionalSimilarity<f64>;
pub type ZooPartition = partition::ZooPartition<f64>;
pub type PartitionProblem<'a> = partition::PartitionProblem<'a, f64>;
