//! Two-site Liouvillian of the exchange model, its gate exponentials and
//! the fourth-order Trotter schedule.
//!
//! Superkets use the row-of-ket ⊗ column-of-bra vectorization. On one site
//! the basis is `e_s = √2·|a⟩⟨b|` with `s = 2a + b` and `a, b ∈ {↑ = 0, ↓ = 1}`,
//! orthonormal under `Tr(x†y)/2`.

use std::collections::BTreeMap;
use std::sync::Mutex;

use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symtensor::{dense_expm, Charge, ChargeTensor, Direction, GradedIndex, LegFlip, TensorError};
use crate::C64;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter `{field}` = {value}: {reason}")]
    InvalidParam { field: &'static str, value: f64, reason: &'static str },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Exchange coupling; sets the unit of time.
    #[serde(rename = "J")]
    pub coupling: f64,
    pub gamma: f64,
    pub dt: f64,
}

impl ModelParams {
    pub fn new(coupling: f64, gamma: f64, dt: f64) -> Result<Self, ModelError> {
        let p = Self { coupling, gamma, dt };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.coupling.is_finite() && self.coupling > 0.0) {
            return Err(ModelError::InvalidParam {
                field: "J",
                value: self.coupling,
                reason: "must be positive",
            });
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(ModelError::InvalidParam {
                field: "gamma",
                value: self.gamma,
                reason: "must be non-negative",
            });
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ModelError::InvalidParam { field: "dt", value: self.dt, reason: "must be positive" });
        }
        Ok(())
    }
}

/// Which conserved charges label the physical superket index.
///
/// `Strong` tracks the ket and bra magnetizations separately. `Weak` tracks
/// only their difference `d = qk − qb`, stored as `(d, −d)`; it is needed for
/// states such as the identity that mix different ket magnetizations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grading {
    #[default]
    Strong,
    Weak,
}

/// Spin label of a local basis state: `0` is up, `1` is down.
fn doubled_sz(spin: usize) -> i64 {
    1 - 2 * spin as i64
}

impl Grading {
    /// Charge of the site basis operator `e_s`.
    pub fn site_charge(self, s: usize) -> Charge {
        let (a, b) = (s / 2, s % 2);
        let (qk, qb) = (doubled_sz(a), doubled_sz(b));
        match self {
            Grading::Strong => Charge::new(qk, qb),
            Grading::Weak => Charge::new(qk - qb, qb - qk),
        }
    }

    /// Physical superket leg in the given direction.
    pub fn physical_leg(self, dir: Direction) -> GradedIndex {
        let mut counts: BTreeMap<Charge, usize> = BTreeMap::new();
        for s in 0..4 {
            *counts.entry(self.site_charge(s)).or_insert(0) += 1;
        }
        GradedIndex::new(counts, dir).expect("four basis states")
    }

    /// Site label found at each dense position of [`Grading::physical_leg`].
    pub fn dense_order(self) -> [usize; 4] {
        let mut order = [0, 1, 2, 3];
        order.sort_by_key(|&s| (self.site_charge(s), s));
        order
    }

    /// Sector charge and position inside that sector of site label `s`.
    pub fn slot(self, s: usize) -> (Charge, usize) {
        let q = self.site_charge(s);
        let pos = (0..s).filter(|&x| self.site_charge(x) == q).count();
        (q, pos)
    }

    /// Spin flip `s ↦ 3 − s` on the physical leg.
    pub fn physical_flip(self) -> LegFlip {
        let mut images: BTreeMap<Charge, Vec<(usize, f64)>> = BTreeMap::new();
        for s in 0..4 {
            let (q, pos) = self.slot(s);
            let img = images.entry(q).or_default();
            if img.len() <= pos {
                img.resize(pos + 1, (0, 1.0));
            }
            img[pos] = (self.slot(3 - s).1, 1.0);
        }
        LegFlip::new(images).expect("s ↦ 3 − s is an involution")
    }

    /// Inverse of [`Grading::dense_order`]: dense position of site label `s`.
    pub fn dense_position(self, s: usize) -> usize {
        self.dense_order().iter().position(|&x| x == s).expect("valid site label")
    }
}

/// Site-local coefficients `c[4·s1 + s2]` of a two-site operator given in the
/// `|a1 a2⟩⟨b1 b2|` matrix basis (row index `2·a1 + a2`).
pub fn pair_coefficients(rho: &Array2<C64>) -> [C64; 16] {
    let mut c = [C64::new(0.0, 0.0); 16];
    for (s1, s2) in (0..4).flat_map(|x| (0..4).map(move |y| (x, y))) {
        let (a1, b1, a2, b2) = (s1 / 2, s1 % 2, s2 / 2, s2 % 2);
        c[4 * s1 + s2] = rho[[2 * a1 + a2, 2 * b1 + b2]] * 0.5;
    }
    c
}

/// Inverse of [`pair_coefficients`].
pub fn pair_operator(c: &[C64; 16]) -> Array2<C64> {
    let mut rho = Array2::zeros((4, 4));
    for (s1, s2) in (0..4).flat_map(|x| (0..4).map(move |y| (x, y))) {
        let (a1, b1, a2, b2) = (s1 / 2, s1 % 2, s2 / 2, s2 % 2);
        rho[[2 * a1 + a2, 2 * b1 + b2]] = c[4 * s1 + s2] * 2.0;
    }
    rho
}

/// Coefficients of the single-site identity: `(e_0 + e_3)/√2`.
pub fn site_identity() -> [C64; 4] {
    let h = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    [h, C64::new(0.0, 0.0), C64::new(0.0, 0.0), h]
}

/// Two-site swap in the `|a1 a2⟩` basis.
pub fn swap_matrix() -> Array2<f64> {
    let mut p = Array2::zeros((4, 4));
    for a1 in 0..2 {
        for a2 in 0..2 {
            p[[2 * a2 + a1, 2 * a1 + a2]] = 1.0;
        }
    }
    p
}

/// The 16×16 two-site generator acting on site-local coefficients
/// (row/column index `4·s1 + s2`).
pub fn exchange_superop(params: &ModelParams) -> Result<Array2<C64>, ModelError> {
    params.validate()?;
    let p = swap_matrix();
    let eye = Array2::<f64>::eye(4);
    let kron = |x: &Array2<f64>, y: &Array2<f64>| {
        Array2::from_shape_fn((16, 16), |(i, j)| x[[i / 4, j / 4]] * y[[i % 4, j % 4]])
    };
    let ham = &kron(&p, &eye) - &kron(&eye, &p);
    let diss = &kron(&p, &p) - &Array2::<f64>::eye(16);
    // Matrix-vector index: 4·(2a1 + a2) + (2b1 + b2).
    let vec_index = |s1: usize, s2: usize| 8 * (s1 / 2) + 4 * (s2 / 2) + 2 * (s1 % 2) + (s2 % 2);
    let mut out = Array2::zeros((16, 16));
    for i in 0..16 {
        let vi = vec_index(i / 4, i % 4);
        for j in 0..16 {
            let vj = vec_index(j / 4, j % 4);
            out[[i, j]] = C64::new(params.gamma * diss[[vi, vj]], -params.coupling * ham[[vi, vj]]);
        }
    }
    Ok(out)
}

/// Bond class within the unit cell: `Odd` is bond 0 (intra-pair), `Even` is
/// bond 1 (inter-pair).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BondParity {
    Odd,
    Even,
}

impl BondParity {
    pub fn bond(self) -> usize {
        match self {
            BondParity::Odd => 0,
            BondParity::Even => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrotterStep {
    pub parity: BondParity,
    pub tau: f64,
}

/// Fourth-order splitting `U(δ₁)U(δ₂)U(δ₃)U(δ₂)U(δ₁)` with
/// `U(δ) = e^{L_odd δ/2} e^{L_even δ} e^{L_odd δ/2}`, flattened with adjacent
/// odd half-steps merged.
pub fn trotter_schedule(dt: f64) -> Vec<TrotterStep> {
    let outer = dt / (4.0 - 4f64.powf(1.0 / 3.0));
    let middle = dt - 4.0 * outer;
    let subs = [outer, outer, middle, outer, outer];
    let mut out: Vec<TrotterStep> = Vec::with_capacity(11);
    for d in subs {
        let half = TrotterStep { parity: BondParity::Odd, tau: 0.5 * d };
        match out.last_mut() {
            Some(last) if last.parity == BondParity::Odd => last.tau += half.tau,
            _ => out.push(half),
        }
        out.push(TrotterStep { parity: BondParity::Even, tau: d });
        out.push(half);
    }
    out
}

/// `exp(generator·tau)` as a 4-leg tensor with legs
/// `(out s1, out s2, in s1, in s2)`; the first two legs are incoming so the
/// result contracts against physical legs of the state.
pub fn gate(generator: &Array2<C64>, grading: Grading, tau: f64) -> Result<ChargeTensor, ModelError> {
    if !tau.is_finite() {
        return Err(ModelError::InvalidParam { field: "tau", value: tau, reason: "must be finite" });
    }
    let m = generator.mapv(|z| z * tau);
    let e = dense_expm(&m, 1e-13)?;
    Ok(gate_tensor(&e, grading)?)
}

/// Wraps a 16×16 site-local superoperator as a graded 4-leg tensor.
pub fn gate_tensor(e: &Array2<C64>, grading: Grading) -> Result<ChargeTensor, TensorError> {
    let order = grading.dense_order();
    let dense = ArrayD::from_shape_fn(IxDyn(&[4, 4, 4, 4]), |ix| {
        let (o1, o2, i1, i2) = (order[ix[0]], order[ix[1]], order[ix[2]], order[ix[3]]);
        e[[4 * o1 + o2, 4 * i1 + i2]]
    });
    let legs = vec![
        grading.physical_leg(Direction::In),
        grading.physical_leg(Direction::In),
        grading.physical_leg(Direction::Out),
        grading.physical_leg(Direction::Out),
    ];
    ChargeTensor::from_dense(legs, &dense.view(), 1e-12)
}

/// Generator, schedule and a cache of gate tensors per distinct `tau`.
#[derive(Debug)]
pub struct LiouvillianGate {
    params: ModelParams,
    grading: Grading,
    generator: Array2<C64>,
    schedule: Vec<TrotterStep>,
    cache: Mutex<BTreeMap<u64, ChargeTensor>>,
}

impl LiouvillianGate {
    pub fn new(params: ModelParams, grading: Grading) -> Result<Self, ModelError> {
        let generator = exchange_superop(&params)?;
        let schedule = trotter_schedule(params.dt);
        let g = Self { params, grading, generator, schedule, cache: Mutex::new(BTreeMap::new()) };
        for step in g.schedule.clone() {
            g.gate(step.tau)?;
        }
        Ok(g)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn grading(&self) -> Grading {
        self.grading
    }

    pub fn generator(&self) -> &Array2<C64> {
        &self.generator
    }

    pub fn schedule(&self) -> &[TrotterStep] {
        &self.schedule
    }

    pub fn gate(&self, tau: f64) -> Result<ChargeTensor, ModelError> {
        let key = tau.to_bits();
        let mut cache = self.cache.lock().expect("gate cache poisoned");
        if let Some(g) = cache.get(&key) {
            return Ok(g.clone());
        }
        let g = gate(&self.generator, self.grading, tau)?;
        cache.insert(key, g.clone());
        Ok(g)
    }

    pub fn cached_taus(&self) -> Vec<f64> {
        let cache = self.cache.lock().expect("gate cache poisoned");
        cache.keys().map(|&k| f64::from_bits(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams::new(1.0, 0.25, 0.5).unwrap()
    }

    #[test]
    fn validation_names_the_field() {
        let err = ModelParams::new(1.0, -0.1, 0.5).unwrap_err();
        assert!(err.to_string().contains("gamma"));
        assert!(ModelParams::new(0.0, 0.1, 0.5).is_err());
        assert!(ModelParams::new(1.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn coefficient_round_trip() {
        let rho = Array2::from_shape_fn((4, 4), |(i, j)| C64::new(i as f64, j as f64 - 1.0));
        let c = pair_coefficients(&rho);
        assert_eq!(pair_operator(&c), rho);
    }

    #[test]
    fn grading_layouts() {
        assert_eq!(Grading::Strong.dense_order(), [3, 2, 1, 0]);
        assert_eq!(Grading::Weak.dense_order(), [2, 0, 3, 1]);
        assert_eq!(Grading::Weak.site_charge(1), Charge::new(2, -2));
        assert_eq!(Grading::Strong.site_charge(1), Charge::new(1, -1));
        for g in [Grading::Strong, Grading::Weak] {
            for s in 0..4 {
                assert_eq!(g.dense_order()[g.dense_position(s)], s);
            }
        }
    }

    #[test]
    fn schedule_has_eleven_steps() {
        let s = trotter_schedule(0.5);
        assert_eq!(s.len(), 11);
        assert_eq!(s[0].parity, BondParity::Odd);
        assert_eq!(s[10].parity, BondParity::Odd);
        for w in s.windows(2) {
            assert_ne!(w[0].parity, w[1].parity);
        }
    }

    #[test]
    fn cache_reuses_schedule_taus() {
        let g = LiouvillianGate::new(params(), Grading::Strong).unwrap();
        assert_eq!(g.cached_taus().len(), 4);
    }
}
