//! Rotated surface-code lattices.
//!
//! Data qubits sit at `(row, col)` with `row < rows`, `col < cols`. Stabilizers
//! live on the `(rows + 1) x (cols + 1)` grid of plaquette corners: plaquette
//! `(x, y)` touches the data qubits `(x - 1 ..= x, y - 1 ..= y)` that exist.
//! Z plaquettes occupy even `x + y`, X plaquettes odd `x + y`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Stabilizer / detector basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Basis {
    Z,
    X,
}

impl Basis {
    pub fn index(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn from_index(i: usize) -> Basis {
        if i == 0 {
            Basis::Z
        } else {
            Basis::X
        }
    }

    /// Parity class `(x + y) % 2` of grid positions hosting this basis.
    pub fn parity(self) -> usize {
        match self {
            Basis::Z => 0,
            Basis::X => 1,
        }
    }

    pub fn of_parity(x: usize, y: usize) -> Basis {
        if (x + y).is_multiple_of(2) {
            Basis::Z
        } else {
            Basis::X
        }
    }

    /// The basis whose detectors an error component of this Pauli type flips
    /// is the *other* basis; this returns the error component detected by
    /// stabilizers of `self` (X errors are seen by Z stabilizers).
    pub fn detected_component(self) -> Component {
        match self {
            Basis::Z => Component::X,
            Basis::X => Component::Z,
        }
    }
}

/// The X or Z part of a Pauli error on a data qubit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    X,
    Z,
}

impl Component {
    /// Basis of the stabilizers that anticommute with this component.
    pub fn detector_basis(self) -> Basis {
        match self {
            Component::X => Basis::Z,
            Component::Z => Basis::X,
        }
    }
}

/// Boundary type along one side of a rectangular patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryTypes {
    pub top: Basis,
    pub bottom: Basis,
    pub left: Basis,
    pub right: Basis,
}

impl BoundaryTypes {
    /// X boundaries on top/bottom, Z boundaries on left/right.
    pub const STANDARD: BoundaryTypes = BoundaryTypes {
        top: Basis::X,
        bottom: Basis::X,
        left: Basis::Z,
        right: Basis::Z,
    };

    /// X boundaries everywhere; Z errors never escape to a spatial boundary.
    pub const ALL_X: BoundaryTypes = BoundaryTypes {
        top: Basis::X,
        bottom: Basis::X,
        left: Basis::X,
        right: Basis::X,
    };
}

/// Grid position of a plaquette.
pub type GridPos = (usize, usize);

/// A rectangular rotated surface-code lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub rows: usize,
    pub cols: usize,
    pub boundaries: BoundaryTypes,
    stabs: BTreeMap<GridPos, Basis>,
}

impl Lattice {
    pub fn new(rows: usize, cols: usize, boundaries: BoundaryTypes) -> Result<Lattice, ModelError> {
        if rows < 2 || cols < 2 {
            return Err(ModelError::InvalidGeometry(format!(
                "lattice {rows}x{cols} is too small"
            )));
        }
        let mut stabs = BTreeMap::new();
        for x in 0..=rows {
            for y in 0..=cols {
                let basis = Basis::of_parity(x, y);
                let on_top = x == 0;
                let on_bottom = x == rows;
                let on_left = y == 0;
                let on_right = y == cols;
                let edges = on_top as u8 + on_bottom as u8 + on_left as u8 + on_right as u8;
                let keep = match edges {
                    0 => true,
                    1 => {
                        let side = if on_top {
                            boundaries.top
                        } else if on_bottom {
                            boundaries.bottom
                        } else if on_left {
                            boundaries.left
                        } else {
                            boundaries.right
                        };
                        side == basis
                    }
                    // corners never host a stabilizer
                    _ => false,
                };
                if keep {
                    stabs.insert((x, y), basis);
                }
            }
        }
        Ok(Lattice {
            rows,
            cols,
            boundaries,
            stabs,
        })
    }

    pub fn num_data(&self) -> usize {
        self.rows * self.cols
    }

    pub fn data_qubits(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |i| (0..self.cols).map(move |j| (i, j)))
    }

    pub fn stabilizer(&self, pos: GridPos) -> Option<Basis> {
        self.stabs.get(&pos).copied()
    }

    /// All stabilizers in row-major grid order.
    pub fn stabilizers(&self) -> impl Iterator<Item = (GridPos, Basis)> + '_ {
        self.stabs.iter().map(|(&p, &b)| (p, b))
    }

    pub fn stabilizers_of(&self, basis: Basis) -> Vec<GridPos> {
        self.stabilizers()
            .filter(|&(_, b)| b == basis)
            .map(|(p, _)| p)
            .collect()
    }

    /// Data qubits touched by the plaquette at `pos`.
    pub fn support(&self, pos: GridPos) -> Vec<(usize, usize)> {
        let (x, y) = pos;
        let mut out = Vec::with_capacity(4);
        for i in [x.wrapping_sub(1), x] {
            for j in [y.wrapping_sub(1), y] {
                if i < self.rows && j < self.cols {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// The two plaquette corners of `qubit` that belong to `basis`, ordered by
    /// row (the first lies in the qubit's row, the second one row below).
    pub fn corners(&self, qubit: (usize, usize), basis: Basis) -> [GridPos; 2] {
        let (i, j) = qubit;
        if (i + j) % 2 == basis.parity() {
            [(i, j), (i + 1, j + 1)]
        } else {
            [(i, j + 1), (i + 1, j)]
        }
    }

    /// Partner of a hook edge starting at stabilizer `pos`: Z hooks run along
    /// the row, X hooks along the column, both two grid steps.
    pub fn hook_partner(&self, pos: GridPos, basis: Basis) -> Option<GridPos> {
        let (x, y) = pos;
        let partner = match basis {
            Basis::Z => (x, y + 2),
            Basis::X => (x + 2, y),
        };
        (self.stabilizer(partner) == Some(basis)).then_some(partner)
    }
}

/// A single `d x d` rotated surface-code patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodePatch {
    pub distance: usize,
    pub lattice: Lattice,
    pub data_qubits: Vec<(usize, usize)>,
    pub z_stabilizers: Vec<GridPos>,
    pub x_stabilizers: Vec<GridPos>,
    /// Data qubits whose X errors flip the logical Z readout (top row).
    pub logical_z_boundary: Vec<(usize, usize)>,
    /// Data qubits whose Z errors flip the logical X readout (left column).
    pub logical_x_boundary: Vec<(usize, usize)>,
}

/// Builds the distance-`d` rotated surface code.
pub fn build_surface_code(d: usize) -> Result<CodePatch, ModelError> {
    if d < 3 || d.is_multiple_of(2) {
        return Err(ModelError::InvalidDistance(d));
    }
    let lattice = Lattice::new(d, d, BoundaryTypes::STANDARD)?;
    Ok(CodePatch {
        distance: d,
        data_qubits: lattice.data_qubits().collect(),
        z_stabilizers: lattice.stabilizers_of(Basis::Z),
        x_stabilizers: lattice.stabilizers_of(Basis::X),
        logical_z_boundary: (0..d).map(|j| (0, j)).collect(),
        logical_x_boundary: (0..d).map(|i| (i, 0)).collect(),
        lattice,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weight_histogram(patch: &CodePatch) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for (pos, _) in patch.lattice.stabilizers() {
            *hist.entry(patch.lattice.support(pos).len()).or_insert(0) += 1;
        }
        hist
    }

    #[test]
    fn d3_counts() {
        let p = build_surface_code(3).unwrap();
        assert_eq!(p.data_qubits.len(), 9);
        assert_eq!(p.z_stabilizers.len(), 4);
        assert_eq!(p.x_stabilizers.len(), 4);
    }

    #[test]
    fn d5_counts() {
        let p = build_surface_code(5).unwrap();
        assert_eq!(p.data_qubits.len(), 25);
        assert_eq!(p.z_stabilizers.len() + p.x_stabilizers.len(), 24);
    }

    #[test]
    fn d7_weights() {
        let p = build_surface_code(7).unwrap();
        let hist = weight_histogram(&p);
        assert_eq!(hist.get(&2), Some(&12));
        assert_eq!(hist.get(&4), Some(&36));
        assert_eq!(hist.len(), 2);
    }

    #[test]
    fn rejects_bad_distance() {
        for d in [0, 1, 2, 4, 6] {
            assert!(build_surface_code(d).is_err());
        }
    }

    #[test]
    fn stabilizers_commute() {
        for d in [3, 5, 7] {
            let p = build_surface_code(d).unwrap();
            for &z in &p.z_stabilizers {
                for &x in &p.x_stabilizers {
                    let a = p.lattice.support(z);
                    let overlap = p.lattice.support(x).iter().filter(|q| a.contains(q)).count();
                    assert_eq!(overlap % 2, 0, "{z:?} vs {x:?}");
                }
            }
        }
    }

    #[test]
    fn corners_are_consistent_with_support() {
        let p = build_surface_code(5).unwrap();
        for q in p.lattice.data_qubits() {
            for basis in [Basis::Z, Basis::X] {
                let touching: Vec<_> = p
                    .lattice
                    .stabilizers()
                    .filter(|&(pos, b)| b == basis && p.lattice.support(pos).contains(&q))
                    .map(|(pos, _)| pos)
                    .collect();
                let corners = p.lattice.corners(q, basis);
                for s in &touching {
                    assert!(corners.contains(s));
                }
                assert!(!touching.is_empty() && touching.len() <= 2);
            }
        }
    }

    #[test]
    fn logical_operators_commute_with_stabilizers() {
        let p = build_surface_code(5).unwrap();
        // Z_L on the top row against X stabilizers, X_L on the left column against Z.
        for &x in &p.x_stabilizers {
            let n = p.lattice.support(x).iter().filter(|q| p.logical_z_boundary.contains(q)).count();
            assert_eq!(n % 2, 0);
        }
        for &z in &p.z_stabilizers {
            let n = p.lattice.support(z).iter().filter(|q| p.logical_x_boundary.contains(q)).count();
            assert_eq!(n % 2, 0);
        }
    }
}
