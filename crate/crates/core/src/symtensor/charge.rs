use std::fmt;
use std::ops::{Add, AddAssign, Neg, Sub};

use serde::{Deserialize, Serialize};

use super::TensorError;

/// Pair of U(1) charges carried by an operator-space index.
///
/// Both components are stored doubled (`2·m`) so that half-integer
/// magnetizations stay exact. `qk` is the charge seen by left
/// multiplication with `S^z` (ket side), `qb` the charge seen by right
/// multiplication (bra side).
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
pub struct Charge {
    pub qk: i64,
    pub qb: i64,
}

impl Charge {
    pub const ZERO: Charge = Charge { qk: 0, qb: 0 };

    pub const fn new(qk: i64, qb: i64) -> Self {
        Self { qk, qb }
    }

    /// Charge of the Hermitian-conjugate operator.
    pub const fn swapped(self) -> Self {
        Self { qk: self.qb, qb: self.qk }
    }

    pub fn scaled(self, k: i64) -> Self {
        Self { qk: self.qk * k, qb: self.qb * k }
    }
}

impl Add for Charge {
    type Output = Charge;
    fn add(self, rhs: Charge) -> Charge {
        Charge { qk: self.qk + rhs.qk, qb: self.qb + rhs.qb }
    }
}

impl AddAssign for Charge {
    fn add_assign(&mut self, rhs: Charge) {
        self.qk += rhs.qk;
        self.qb += rhs.qb;
    }
}

impl Sub for Charge {
    type Output = Charge;
    fn sub(self, rhs: Charge) -> Charge {
        Charge { qk: self.qk - rhs.qk, qb: self.qb - rhs.qb }
    }
}

impl Neg for Charge {
    type Output = Charge;
    fn neg(self) -> Charge {
        Charge { qk: -self.qk, qb: -self.qb }
    }
}

impl fmt::Display for Charge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.qk, self.qb)
    }
}

/// Orientation of a tensor leg. Conservation reads
/// `Σ_in q − Σ_out q = 0` for every stored block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::In => 1,
            Direction::Out => -1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::In => Direction::Out,
            Direction::Out => Direction::In,
        }
    }
}

/// A tensor leg split into charge sectors.
///
/// Sectors are kept sorted by charge; the dense layout of the leg follows
/// that order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GradedIndex {
    sectors: Vec<(Charge, usize)>,
    dir: Direction,
}

impl GradedIndex {
    pub fn new(
        sectors: impl IntoIterator<Item = (Charge, usize)>,
        dir: Direction,
    ) -> Result<Self, TensorError> {
        let mut sectors: Vec<(Charge, usize)> = sectors.into_iter().collect();
        sectors.sort_by_key(|s| s.0);
        for w in sectors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(TensorError::DuplicateSector(w[0].0));
            }
        }
        if let Some((c, _)) = sectors.iter().find(|s| s.1 == 0) {
            return Err(TensorError::EmptySector(*c));
        }
        Ok(Self { sectors, dir })
    }

    /// One-dimensional leg carrying a single charge.
    pub fn trivial(charge: Charge, dir: Direction) -> Self {
        Self { sectors: vec![(charge, 1)], dir }
    }

    pub fn sectors(&self) -> &[(Charge, usize)] {
        &self.sectors
    }

    pub fn direction(&self) -> Direction {
        self.dir
    }

    pub fn dim(&self) -> usize {
        self.sectors.iter().map(|s| s.1).sum()
    }

    pub fn num_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn degeneracy(&self, charge: Charge) -> Option<usize> {
        self.position(charge).map(|i| self.sectors[i].1)
    }

    /// Offset of the sector inside the dense expansion of this leg.
    pub fn offset(&self, charge: Charge) -> Option<usize> {
        let i = self.position(charge)?;
        Some(self.sectors[..i].iter().map(|s| s.1).sum())
    }

    pub fn contains(&self, charge: Charge) -> bool {
        self.position(charge).is_some()
    }

    fn position(&self, charge: Charge) -> Option<usize> {
        self.sectors.binary_search_by_key(&charge, |s| s.0).ok()
    }

    /// Same sectors, opposite direction.
    pub fn dual(&self) -> Self {
        Self { sectors: self.sectors.clone(), dir: self.dir.flip() }
    }

    pub fn with_direction(&self, dir: Direction) -> Self {
        Self { sectors: self.sectors.clone(), dir }
    }

    /// True when `other` can be contracted against `self`.
    pub fn pairs_with(&self, other: &GradedIndex) -> bool {
        self.dir != other.dir && self.sectors == other.sectors
    }

    /// Charge carried by each dense position, in dense order.
    pub fn dense_charges(&self) -> Vec<Charge> {
        self.sectors
            .iter()
            .flat_map(|&(c, d)| std::iter::repeat_n(c, d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sectors_are_sorted_and_unique() {
        let idx = GradedIndex::new(
            [(Charge::new(2, 0), 1), (Charge::new(-2, 0), 3)],
            Direction::In,
        )
        .unwrap();
        assert_eq!(idx.sectors()[0].0, Charge::new(-2, 0));
        assert_eq!(idx.dim(), 4);
        assert_eq!(idx.offset(Charge::new(2, 0)), Some(3));

        let dup = GradedIndex::new([(Charge::ZERO, 1), (Charge::ZERO, 2)], Direction::In);
        assert!(matches!(dup, Err(TensorError::DuplicateSector(_))));
        let empty = GradedIndex::new([(Charge::ZERO, 0)], Direction::In);
        assert!(matches!(empty, Err(TensorError::EmptySector(_))));
    }

    #[test]
    fn charge_arithmetic() {
        let a = Charge::new(1, -1);
        let b = Charge::new(1, 1);
        assert_eq!(a + b, Charge::new(2, 0));
        assert_eq!(a - b, Charge::new(0, -2));
        assert_eq!(-a, Charge::new(-1, 1));
        assert_eq!(a.swapped(), Charge::new(-1, 1));
    }
}
