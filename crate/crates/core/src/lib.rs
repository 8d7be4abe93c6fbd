//! Stationary measures of the spread-out voter model.

pub mod bounds;
pub mod coalescence;
pub mod error;
pub mod field;
pub mod lattice;
pub mod measure;
pub mod percolation;
pub mod renorm;
pub mod rng;
pub mod stats;
pub mod threshold;
pub mod walks;

pub use error::{Error, Result};
pub use field::{shift_config, FieldSample, Provenance, Window};
pub use lattice::{BoxSpec, Norm, Point};
pub use rng::{SeedStream, SimRng};
pub use stats::EstimateWithCI;
pub use bounds::{InequalityReport, Verdict};
pub use coalescence::{CoalescenceRun, MarkedPartition, StopPolicy};
pub use measure::{CylinderEvent, Sampler};
pub use percolation::Adjacency;
pub use renorm::{EmbeddingRule, ProperEmbedding};
pub use threshold::{AnnulusSpec, ThresholdEstimate};
pub use walks::{JumpKernel, TruncationPolicy};
