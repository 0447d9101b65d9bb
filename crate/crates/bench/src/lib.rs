//! Shared fixtures for the benchmarks.

use opent_core::impdo::{init_state, Evolver, StateKind, UnitCellMPDO};
use opent_core::lindblad::ModelParams;
use opent_core::symtensor::TruncationParams;

/// Singlet-pair chain at γ = 0.25, dt = 0.5, stepped until the bond
/// dimension saturates at `chi_max` (or 40 steps).
pub fn saturated_singlet(chi_max: usize) -> UnitCellMPDO {
    let params = ModelParams::new(1.0, 0.25, 0.5).expect("valid parameters");
    let state = init_state(StateKind::SingletPairs, params, TruncationParams::with_chi(chi_max)).expect("initial state");
    let mut evolver = Evolver::new(state).expect("evolver");
    for _ in 0..40 {
        evolver.step().expect("step");
        if evolver.state().chi() >= chi_max {
            break;
        }
    }
    evolver.into_state()
}
