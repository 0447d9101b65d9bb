//! Block-sparse tensors with two U(1) charges per leg.

mod charge;
pub mod dense;
mod expm;
pub(crate) mod flip;
mod svd;
mod tensor;

pub use charge::{Charge, Direction, GradedIndex};
pub use expm::dense_expm;
pub use flip::{flip_residual, flip_tensor, LegFlip, Parity};
pub use svd::{svd_truncate, svd_truncate_flip, SchmidtValues, SvdOutput, TruncationParams};
pub use tensor::{contract, fuse, unfuse, BlockKey, ChargeTensor, FusedPiece, FusionRecord};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("duplicate sector {0} on one leg")]
    DuplicateSector(Charge),
    #[error("sector {0} has zero degeneracy")]
    EmptySector(Charge),
    #[error("expected {expected} legs, got {got}")]
    RankMismatch { expected: usize, got: usize },
    #[error("leg {axis} has no sector {charge}")]
    MissingSector { axis: usize, charge: Charge },
    #[error("block shape {got:?} does not match {expected:?}")]
    BlockShape { expected: Vec<usize>, got: Vec<usize> },
    #[error("block {key:?} violates charge conservation (net {net})")]
    ChargeViolation { key: Vec<Charge>, net: Charge },
    #[error("non-finite entry encountered")]
    NonFinite,
    #[error("dense tensor has weight {0:e} outside allowed blocks")]
    DenseNotSymmetric(f64),
    #[error("invalid axis {0}")]
    BadAxis(usize),
    #[error("leg mismatch: {0}")]
    IndexMismatch(String),
    #[error("empty leg group")]
    EmptyGroup,
    #[error("every singular value was truncated")]
    AllTruncated,
    #[error("invalid truncation parameters")]
    BadTruncation,
    #[error("spin flip does not match the tensor: {0}")]
    FlipMismatch(String),
    #[error("singular value decomposition failed")]
    SvdFailed,
    #[error("matrix is {0}x{1}, expected square")]
    NotSquare(usize, usize),
    #[error("matrix dimension {0} too large for dense exponential")]
    TooLarge(usize),
    #[error("exponential series did not converge (last term {0:e})")]
    ExpmNotConverged(f64),
    #[error("overflow in matrix exponential")]
    Overflow,
}
