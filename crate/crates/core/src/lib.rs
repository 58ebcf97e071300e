//! Particle solvers for mean field games and mean field type control,
//! built on the forward-backward SDE systems of the stochastic maximum
//! principle, together with sampled monotonicity checks, closed-form
//! well-posedness thresholds and linear-quadratic reference solutions.

// `!(a < b)` is used on purpose so that NaN fails the test.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod error;
pub mod fbsde;
pub mod hamiltonian;
pub mod lq_oracle;
pub mod meanfield;
pub mod measure;
pub mod model;
pub mod monotonicity;
pub mod report;
pub mod rng;

pub use error::{Error, Result};
pub use measure::{MeasureFlow, ParticleCloud};
pub use model::{ConstantsLedger, ModeFlags, ModelSpec};
pub use report::{CheckReport, Verdict, Witness};
