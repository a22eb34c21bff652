//! Minibatch optimal transport toolkit.
//!
//! Exact and entropic OT solvers between uniform point clouds, minibatch
//! estimators of OT losses with their averaged and subsampled transport
//! plans, concentration-bound formulas with an experiment harness,
//! position gradients with a stochastic gradient-flow driver, and
//! incremental barycentric color transfer that never materializes an
//! `n x n` coupling.

pub mod bounds;
pub mod cloud;
pub mod closed_form;
pub mod comb;
pub mod cost;
pub mod error;
pub mod exact;
pub mod gradients;
pub mod io;
pub mod minibatch;
pub mod oracle;
pub mod plan;
pub mod rng;
pub mod sinkhorn;
pub mod transfer;

pub use cloud::{diameter_of, DiscreteDistribution};
pub use cost::{CostKind, CostSpec};
pub use error::{OtError, Result};
pub use exact::{solve_exact_1d, solve_exact_assignment};
pub use gradients::{FlowConfig, FlowTrajectory, GradField};
pub use minibatch::{BatchPair, LossKind, MinibatchConfig, PairSampling};
pub use plan::{SparsePlan, TransportPlan};
pub use sinkhorn::{sinkhorn, sinkhorn_divergence, SinkhornParams, SinkhornResult};
pub use transfer::{Normalization, PixelCloud, TransferOutput};
