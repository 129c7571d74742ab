//! Generators for the worked examples and adversarial constructions:
//! subspace-constrained linear regression, the 1-D elliptic Galerkin
//! problem, Markov reward processes on random graphs with temporal
//! difference streams, and the lower-bound instances with closed-form
//! solutions.

pub mod elliptic;
pub mod lower_bound;
pub mod mrp;
pub mod regression;

pub use elliptic::{EllipticAssembly, EllipticProblem1d};
pub use lower_bound::{lb_mrp, lb_theorem2, lb_theorem4, MrpLbSpec, Sign, Theorem2Spec, Theorem4Spec};
pub use mrp::{graph_mrp, mrp_projected, GraphKind, MarkovRewardProcess, MrpProjection, TdStream};
pub use regression::RegressionModel;
