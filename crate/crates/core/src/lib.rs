//! Numerical library for projected linear fixed-point equations
//! `v = Pi_S (L v + b)` in finite-dimensional weighted Hilbert spaces:
//! weighted geometry, instance-dependent approximation factors,
//! Polyak-Ruppert-averaged stochastic approximation, and generators for the
//! worked examples and adversarial constructions the theory is tested on.

pub mod error;
pub mod fixpoint;
pub mod instances;
pub mod sa;
pub mod wspace;

pub use error::{Error, Result};
pub use fixpoint::{FactorReport, FixedPointInstance, OracleReport, ProjectedInstance};
pub use sa::{MseSummary, NoiseStats, ObservationStream, SaConfig, SaResult, Schedule};
pub use wspace::{Basis, DenseOperator, WeightedSpace};
