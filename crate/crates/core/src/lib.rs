//! Linear reservoir embeddings of dynamical systems.
//!
//! Randomly generated linear state maps `x ↦ A x + C z` driven by scalar
//! observations of a flow synchronize to a map `f` from phase space into
//! `R^N`. This crate builds such reservoirs, evaluates `f` and its Jacobian,
//! checks the algebraic conditions under which `f` is an embedding, and runs
//! reconstruction and forecasting pipelines on the Rössler, Van der Pol and
//! Lorenz systems.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` also rejects NaN

pub mod diagnostics;
pub mod dynsys;
pub mod experiments;
pub mod linalg;
pub mod persistence;
pub mod readout;
pub mod reservoir;

pub use dynsys::{Direction, DynamicalSystem, ObservationFn, PhaseMap, PhasePoint, SystemKind};
pub use linalg::{DenseMatrix, DenseVector};
pub use reservoir::{ReservoirSystem, StateTrajectory};
