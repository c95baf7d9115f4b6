//! Multi-stream multicast queues with beamforming: queue disciplines,
//! beamformer solvers, a discrete-event simulator and delay approximations.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod error;
pub mod model;
pub mod queue;
pub mod report;
pub mod simulator;
pub mod theory;

pub use beamforming::{BeamformerSolution, ServiceGroups, SolverOptions};
pub use channel::{ChannelMatrix, ChannelStatistics};
pub use error::{Error, Result};
pub use model::{build_rate_matrix, validate, QueueKind, RateMatrix, Scheme, SystemConfig};
pub use queue::{MulticastQueue, QueueClass, Request};
pub use report::{RowClass, Source, SummaryRow};
pub use simulator::{DelayReport, Replications};
pub use theory::{TheoryOptions, TheoryResult};
