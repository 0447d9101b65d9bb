use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::StateError;
use crate::lindblad::{pair_coefficients, BondParity, Grading, ModelParams};
use crate::symtensor::{
    contract, svd_truncate, svd_truncate_flip, Charge, ChargeTensor, Direction, GradedIndex, LegFlip,
    Parity, SchmidtValues, SvdOutput, TensorError, TruncationParams,
};
use crate::C64;

/// Product states of two-site density matrices used as initial conditions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    SingletPairs,
    TripletPairs,
    Neel,
    Identity,
}

impl StateKind {
    pub const ALL: [StateKind; 4] =
        [StateKind::SingletPairs, StateKind::TripletPairs, StateKind::Neel, StateKind::Identity];

    pub fn name(self) -> &'static str {
        match self {
            StateKind::SingletPairs => "singlet_pairs",
            StateKind::TripletPairs => "triplet_pairs",
            StateKind::Neel => "neel",
            StateKind::Identity => "identity",
        }
    }

    /// Grading under which the state is representable.
    pub fn grading(self) -> Grading {
        match self {
            StateKind::Identity => Grading::Weak,
            _ => Grading::Strong,
        }
    }

    /// Whether the pair state is invariant under the global spin flip.
    pub fn flip_symmetric(self) -> bool {
        !matches!(self, StateKind::Neel)
    }

    /// Trace-one density matrix of one pair in the `|a1 a2⟩` basis.
    pub fn pair_density(self) -> Array2<C64> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let projector = |v: [f64; 4]| {
            let v = Array1::from_iter(v.iter().map(|&x| C64::new(x, 0.0)));
            Array2::from_shape_fn((4, 4), |(i, j)| v[i] * v[j].conj())
        };
        match self {
            StateKind::SingletPairs => projector([0.0, h, -h, 0.0]),
            StateKind::TripletPairs => projector([0.0, h, h, 0.0]),
            StateKind::Neel => projector([0.0, 1.0, 0.0, 0.0]),
            StateKind::Identity => Array2::eye(4).mapv(|z: C64| z * 0.25),
        }
    }
}

impl fmt::Display for StateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StateKind {
    type Err = StateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StateKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| StateError::UnknownKind(s.to_string()))
    }
}

/// Bookkeeping carried along with the tensors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateMeta {
    /// Completed full Trotter steps; elapsed time is `steps · dt`.
    pub steps: u64,
    /// Accumulated relative truncation weight.
    pub trunc_weight: f64,
    /// Natural log of the factor dividing the physical state per unit cell.
    pub log_norm: f64,
    /// Physical trace per unit cell at `t = 0`.
    pub trace_ref: f64,
    /// Degenerate groups dropped whole at the `chi_max` edge.
    pub split_groups: u64,
}

/// Flip parities of the zero-sector states on bond 0 and bond 1, kept while
/// the tensors are in a flip-covariant gauge.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipGauge {
    pub parity: [Vec<Parity>; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct UnitCellMPDO {
    pub params: ModelParams,
    pub truncation: TruncationParams,
    pub grading: Grading,
    pub gammas: [ChargeTensor; 2],
    pub lambdas: [SchmidtValues; 2],
    pub meta: StateMeta,
    /// `None` for states without spin-flip symmetry.
    pub flip: Option<FlipGauge>,
}

impl UnitCellMPDO {
    /// Spin flip on bond `bond`, if the state carries a flip gauge.
    pub fn bond_flip(&self, bond: usize) -> Option<Result<LegFlip, TensorError>> {
        self.flip.as_ref().map(|f| LegFlip::bond(&self.lambdas[bond], &f.parity[bond]))
    }

    pub fn time(&self) -> f64 {
        self.meta.steps as f64 * self.params.dt
    }

    pub fn chi(&self) -> usize {
        self.lambdas.iter().map(|l| l.dim()).max().unwrap_or(0)
    }

    pub fn is_finite(&self) -> bool {
        self.gammas.iter().all(|g| g.is_finite())
            && self.lambdas.iter().all(|l| l.sectors().values().flatten().all(|x| x.is_finite()))
    }

    /// Largest deviation of the bond spectrum from its mirror under
    /// `(qk, qb) → (qb, qk)`.
    pub fn hermiticity_residual(&self, bond: usize) -> f64 {
        let l = &self.lambdas[bond];
        let mirrored = SchmidtValues::new(
            l.sectors().iter().map(|(q, v)| (q.swapped(), v.clone())).collect(),
        )
        .expect("valid spectrum");
        l.max_abs_diff(&mirrored)
    }
}

/// Exact unit cell of a product of identical pair density matrices.
pub fn init_state(
    kind: StateKind,
    params: ModelParams,
    truncation: TruncationParams,
) -> Result<UnitCellMPDO, StateError> {
    params.validate()?;
    let grading = kind.grading();
    let coeffs = pair_coefficients(&kind.pair_density());
    let order = grading.dense_order();
    let dense = ArrayD::from_shape_fn(IxDyn(&[1, 4, 4, 1]), |ix| coeffs[4 * order[ix[1]] + order[ix[2]]]);
    let legs = vec![
        GradedIndex::trivial(Charge::ZERO, Direction::In),
        grading.physical_leg(Direction::In),
        grading.physical_leg(Direction::In),
        GradedIndex::trivial(Charge::ZERO, Direction::Out),
    ];
    let theta = ChargeTensor::from_dense(legs, &dense.view(), 1e-14)?;
    let outer = LegFlip::bond(&SchmidtValues::trivial(Charge::ZERO), &[1])?;
    let flip = kind.flip_symmetric().then(|| [outer.clone(), grading.physical_flip(), grading.physical_flip(), outer]);
    let split = split_theta(&theta, &truncation, flip.as_ref())?;
    let mut state = UnitCellMPDO {
        params,
        truncation,
        grading,
        gammas: [split.u, split.v],
        lambdas: [split.s, SchmidtValues::trivial(Charge::ZERO)],
        meta: StateMeta {
            steps: 0,
            trunc_weight: split.trunc_weight,
            log_norm: -split.norm.ln(),
            trace_ref: 1.0,
            split_groups: split.split_groups as u64,
        },
        flip: flip.map(|_| FlipGauge { parity: [split.parity, vec![1]] }),
    };
    let tau = super::trace_per_cell(&state)?;
    state.meta.trace_ref = tau;
    Ok(state)
}

/// Splits a two-site tensor `(bond, phys, phys, bond)` between its physical legs.
pub(crate) fn split_theta(
    theta: &ChargeTensor,
    truncation: &TruncationParams,
    flips: Option<&[LegFlip; 4]>,
) -> Result<SvdOutput, TensorError> {
    match flips {
        Some(f) => svd_truncate_flip(theta, &[0, 1], truncation, f),
        None => svd_truncate(theta, &[0, 1], truncation),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GateReport {
    pub trunc_weight: f64,
    pub norm: f64,
    pub split_groups: usize,
}

fn blowup(e: TensorError, stage: &'static str) -> StateError {
    match e {
        TensorError::NonFinite | TensorError::AllTruncated | TensorError::SvdFailed => {
            StateError::BlowUp(stage)
        }
        other => StateError::Tensor(other),
    }
}

/// Applies a two-site gate to one bond of the unit cell and re-splits it.
pub fn apply_gate(
    state: &mut UnitCellMPDO,
    gate: &ChargeTensor,
    parity: BondParity,
) -> Result<GateReport, StateError> {
    let bond = parity.bond();
    let (left, right) = (bond, 1 - bond);
    let outer = state.lambdas[right].map(|x| x);
    let inner = state.lambdas[bond].map(|x| x);

    let mut a = state.gammas[left].clone();
    a.scale_axis(0, &outer)?;
    a.scale_axis(2, &inner)?;
    let mut b = state.gammas[right].clone();
    b.scale_axis(2, &outer)?;
    let theta = contract(&a, &b, &[(2, 0)])?;
    let theta = contract(gate, &theta, &[(2, 1), (3, 2)])?.permute(&[2, 0, 1, 3])?;
    if !theta.is_finite() {
        return Err(StateError::BlowUp("gate application"));
    }
    let flips = match state.bond_flip(right).transpose()? {
        Some(outer) => {
            let phys = state.grading.physical_flip();
            Some([outer.clone(), phys.clone(), phys, outer])
        }
        None => None,
    };
    let split = split_theta(&theta, &state.truncation, flips.as_ref()).map_err(|e| blowup(e, "truncation"))?;

    let inv = state.lambdas[right].map(|x| 1.0 / x);
    let mut gl = split.u;
    gl.scale_axis(0, &inv)?;
    let mut gr = split.v;
    gr.scale_axis(2, &inv)?;
    state.gammas[left] = gl;
    state.gammas[right] = gr;
    state.lambdas[bond] = split.s;
    if let Some(f) = state.flip.as_mut() {
        f.parity[bond] = split.parity;
    }
    state.meta.log_norm -= split.norm.ln();
    state.meta.trunc_weight += split.trunc_weight;
    state.meta.split_groups += split.split_groups as u64;
    Ok(GateReport { trunc_weight: split.trunc_weight, norm: split.norm, split_groups: split.split_groups })
}
