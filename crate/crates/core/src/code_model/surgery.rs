//! Lattice-surgery layouts: `d x d` patches stacked vertically, joined by
//! one-row merge strips into a single rectangular lattice for the duration
//! of a multi-patch Z-type measurement.

use serde::{Deserialize, Serialize};

use super::{
    build_from_spec, Basis, BoundaryTypes, DecodingModel, Lattice, ModelError, ModelSpec, NoiseParams, Observable,
    Region, TimeBoundary,
};

/// Top-left data qubit of a patch on the global lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchPlacement {
    pub row: usize,
    pub col: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryLayout {
    pub distance: usize,
    pub patches: Vec<PatchPlacement>,
    /// Merge strips, each joining two vertically adjacent patches.
    pub merge_regions: Vec<(usize, usize)>,
    /// One Pauli letter per patch, e.g. `"ZZ"` or `"ZIZ"`.
    pub measured_operator: String,
}

impl SurgeryLayout {
    /// `k` patches in a column, every neighboring pair merged.
    pub fn stack(distance: usize, k: usize, measured_operator: &str) -> SurgeryLayout {
        SurgeryLayout {
            distance,
            patches: (0..k)
                .map(|i| PatchPlacement {
                    row: i * (distance + 1),
                    col: 0,
                })
                .collect(),
            merge_regions: (1..k).map(|i| (i - 1, i)).collect(),
            measured_operator: measured_operator.to_string(),
        }
    }

    fn validate(&self) -> Result<Vec<bool>, ModelError> {
        let d = self.distance;
        if d < 3 || d.is_multiple_of(2) {
            return Err(ModelError::InvalidDistance(d));
        }
        let k = self.patches.len();
        if k == 0 {
            return Err(ModelError::InvalidLayout("no patches".into()));
        }
        for (i, a) in self.patches.iter().enumerate() {
            for b in &self.patches[i + 1..] {
                let rows_overlap = a.row < b.row + d && b.row < a.row + d;
                let cols_overlap = a.col < b.col + d && b.col < a.col + d;
                if rows_overlap && cols_overlap {
                    return Err(ModelError::InvalidLayout(format!("patches at {a:?} and {b:?} overlap")));
                }
            }
        }
        for (i, p) in self.patches.iter().enumerate() {
            if p.col != 0 || p.row != i * (d + 1) {
                return Err(ModelError::InvalidLayout(format!(
                    "patch {i} at {p:?} does not tile the stacked layout"
                )));
            }
        }
        let mut merged = vec![false; k.saturating_sub(1)];
        for &(a, b) in &self.merge_regions {
            let (lo, hi) = (a.min(b), a.max(b));
            if hi >= k || hi != lo + 1 {
                return Err(ModelError::InvalidLayout(format!(
                    "merge region ({a}, {b}) is not between adjacent patches"
                )));
            }
            if merged[lo] {
                return Err(ModelError::InvalidLayout(format!("merge region ({a}, {b}) repeated")));
            }
            merged[lo] = true;
        }
        if merged.iter().any(|m| !m) {
            return Err(ModelError::InvalidLayout("layout does not form one connected lattice".into()));
        }
        let letters: Vec<char> = self.measured_operator.chars().collect();
        if letters.len() != k {
            return Err(ModelError::UnsupportedOperator(format!(
                "{} has {} letters for {k} patches",
                self.measured_operator,
                letters.len()
            )));
        }
        let mut support = Vec::with_capacity(k);
        for c in letters {
            match c {
                'Z' => support.push(true),
                'I' => support.push(false),
                _ => return Err(ModelError::UnsupportedOperator(self.measured_operator.clone())),
            }
        }
        if !support.iter().any(|&s| s) {
            return Err(ModelError::UnsupportedOperator(self.measured_operator.clone()));
        }
        Ok(support)
    }
}

/// Builds the merged-lattice model. Observables: `Z_i` per patch (Z on the
/// patch's top row), `X_L` along the left column, and, for more than one
/// patch, the joint measured operator (product of the supported `Z_i`).
pub fn build_surgery_model(layout: &SurgeryLayout, rounds: usize, noise: NoiseParams) -> Result<DecodingModel, ModelError> {
    let support = layout.validate()?;
    let d = layout.distance;
    let k = layout.patches.len();
    if k + 2 > 64 {
        return Err(ModelError::TooManyObservables(k + 2));
    }
    let rows = k * (d + 1) - 1;
    let lattice = Lattice::new(rows, d, BoundaryTypes::STANDARD)?;
    let top_row = |i: usize| -> Vec<(usize, usize)> { (0..d).map(|j| (layout.patches[i].row, j)).collect() };

    let mut observables: Vec<Observable> = (0..k)
        .map(|i| Observable {
            name: format!("Z_{i}"),
            basis: Basis::Z,
            qubits: top_row(i),
            first_round_measurements: false,
        })
        .collect();
    observables.push(Observable {
        name: "X_L".into(),
        basis: Basis::X,
        qubits: (0..rows).map(|i| (i, 0)).collect(),
        first_round_measurements: false,
    });
    if k > 1 {
        let mut qubits: Vec<(usize, usize)> = Vec::new();
        for i in (0..k).filter(|&i| support[i]) {
            for q in top_row(i) {
                if let Some(pos) = qubits.iter().position(|&x| x == q) {
                    qubits.remove(pos);
                } else {
                    qubits.push(q);
                }
            }
        }
        observables.push(Observable {
            name: layout.measured_operator.clone(),
            basis: Basis::Z,
            qubits,
            first_round_measurements: false,
        });
    }

    let regions = (0..k)
        .map(|i| Region {
            patch: i as u16,
            row_start: i * (d + 1),
            row_end: if i + 1 == k { rows + 1 } else { (i + 1) * (d + 1) },
        })
        .collect();
    let spec = ModelSpec {
        lattice,
        observables,
        regions,
        bases: [true, true],
        time_boundary: TimeBoundary::Closed,
    };
    build_from_spec(spec, rounds, noise)
}

/// Index of the joint-measurement observable, if the layout has one.
pub fn joint_observable_index(model: &DecodingModel) -> Option<usize> {
    (model.regions.len() > 1).then(|| model.regions.len() + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_model::{build_dem, build_surface_code, EdgeKind, Pauli};

    #[test]
    fn single_patch_matches_memory_model() {
        let noise = NoiseParams::uniform(0.002);
        let a = build_surgery_model(&SurgeryLayout::stack(3, 1, "Z"), 3, noise).unwrap();
        let b = build_dem(&build_surface_code(3).unwrap(), 3, noise).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.detectors, b.detectors);
    }

    #[test]
    fn joint_mask_on_seam_edges() {
        let m = build_surgery_model(&SurgeryLayout::stack(3, 2, "ZZ"), 2, NoiseParams::uniform(0.001)).unwrap();
        let joint = joint_observable_index(&m).unwrap();
        assert_eq!(m.observables[joint].name, "ZZ");
        // hand-constructed: X errors on rows 0..4 (patch 0 top to patch 1 top)
        // flip Z_0 xor Z_1 exactly when on row 0 or row 4
        for e in m.edges.iter().filter(|e| e.kind == EdgeKind::H && e.pauli == Pauli::X) {
            let flips = e.logical_mask >> joint & 1 == 1;
            assert_eq!(flips, e.anchor.x == 0 || e.anchor.x == 4, "{:?}", e.anchor);
        }
        // the strip row is owned by the upper patch
        assert_eq!(m.region_of_row(3), 0);
        assert_eq!(m.region_of_row(4), 1);
    }

    #[test]
    fn sixteen_patches() {
        let op = "Z".repeat(16);
        let m = build_surgery_model(&SurgeryLayout::stack(3, 16, &op), 2, NoiseParams::uniform(0.001)).unwrap();
        assert_eq!(m.regions.len(), 16);
        let patches: std::collections::BTreeSet<u16> = m.detectors.iter().map(|d| d.patch).collect();
        assert_eq!(patches.len(), 16);
    }

    #[test]
    fn rejects_invalid_layouts() {
        let noise = NoiseParams::uniform(0.001);
        let mut l = SurgeryLayout::stack(3, 2, "ZZ");
        l.patches[1].row = 2;
        assert!(matches!(build_surgery_model(&l, 2, noise), Err(ModelError::InvalidLayout(_))));
        let l = SurgeryLayout::stack(3, 2, "XZ");
        assert!(matches!(build_surgery_model(&l, 2, noise), Err(ModelError::UnsupportedOperator(_))));
        let mut l = SurgeryLayout::stack(3, 2, "ZZ");
        l.merge_regions.clear();
        assert!(build_surgery_model(&l, 2, noise).is_err());
    }
}
