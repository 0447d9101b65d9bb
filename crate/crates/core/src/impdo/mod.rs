//! Infinite MPDO with a two-site unit cell in Vidal form.
//!
//! `gammas[0]` and `gammas[1]` carry legs `(left bond In, physical In,
//! right bond Out)`. `lambdas[0]` sits between them (bond 0, intra-pair) and
//! `lambdas[1]` joins neighbouring cells (bond 1, inter-pair).

mod canonical;
pub mod checkpoint;
mod evolve;
mod state;

pub use canonical::{
    canonicalize, isometry_residual, trace_per_cell, BondMatrix, CanonicalReport, FixedPointParams,
};
pub use evolve::{evolve, observe, steps_for, Evolver, Observation, ObservationSink, RunSummary, SinkError, VecSink};
pub use state::{apply_gate, init_state, FlipGauge, GateReport, StateKind, StateMeta, UnitCellMPDO};

use thiserror::Error;

use crate::lindblad::ModelError;
use crate::observables::ObservableError;
use crate::symtensor::TensorError;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("unknown initial state `{0}`")]
    UnknownKind(String),
    #[error("non-finite values after {0}: run blew up")]
    BlowUp(&'static str),
    #[error("invalid evolution setting: {0}")]
    InvalidSetting(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error("observation sink failed: {0}")]
    Sink(String),
}
