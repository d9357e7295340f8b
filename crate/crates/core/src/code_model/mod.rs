//! Surface-code patches, lattice-surgery layouts and their detector error
//! models.
//!
//! A [`DecodingModel`] is built once and shared read-only by every sampler,
//! decoder and scheduler worker.

mod decompose;
mod lattice;
mod serialize;
mod surgery;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use decompose::{decompose_hyperedges, edge_weight, SubEdge, Subgraph, BOUNDARY, MAX_WEIGHT};
pub use lattice::{build_surface_code, Basis, BoundaryTypes, CodePatch, Component, GridPos, Lattice};
pub use serialize::{read_model, write_model, MODEL_MAGIC, MODEL_VERSION};
pub use surgery::{build_surgery_model, joint_observable_index, PatchPlacement, SurgeryLayout};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("code distance must be odd and at least 3, got {0}")]
    InvalidDistance(usize),
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("rounds must be positive")]
    ZeroRounds,
    #[error("probability {name} = {value} outside [0, 0.5)")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("unsupported measured operator: {0}")]
    UnsupportedOperator(String),
    #[error("too many logical observables ({0}); at most 64 fit a mask")]
    TooManyObservables(usize),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Single-qubit Pauli label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn components(self) -> &'static [Component] {
        match self {
            Pauli::I => &[],
            Pauli::X => &[Component::X],
            Pauli::Y => &[Component::X, Component::Z],
            Pauli::Z => &[Component::Z],
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Pauli::I => 0,
            Pauli::X => 1,
            Pauli::Y => 2,
            Pauli::Z => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Pauli> {
        Some(match c {
            0 => Pauli::I,
            1 => Pauli::X,
            2 => Pauli::Y,
            3 => Pauli::Z,
            _ => return None,
        })
    }
}

/// The four error mechanisms of the circuit-level model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    /// Data-qubit Pauli error within one detector layer.
    H,
    /// Measurement error joining the same stabilizer in adjacent layers.
    V,
    /// Data error between two CNOT layers: space and time displacement.
    D,
    /// Two-qubit error propagated from an ancilla.
    Hook,
}

impl EdgeKind {
    pub fn code(self) -> u8 {
        match self {
            EdgeKind::H => 0,
            EdgeKind::V => 1,
            EdgeKind::D => 2,
            EdgeKind::Hook => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<EdgeKind> {
        Some(match c {
            0 => EdgeKind::H,
            1 => EdgeKind::V,
            2 => EdgeKind::D,
            3 => EdgeKind::Hook,
            _ => return None,
        })
    }
}

/// Output channels of the local decoder, in tensor order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Channel {
    I = 0,
    X = 1,
    Y = 2,
    Z = 3,
    M = 4,
    H = 5,
}

impl Channel {
    pub const ALL: [Channel; 6] = [Channel::I, Channel::X, Channel::Y, Channel::Z, Channel::M, Channel::H];

    pub fn from_code(c: u8) -> Option<Channel> {
        Channel::ALL.get(c as usize).copied()
    }

    pub fn of_pauli(p: Pauli) -> Channel {
        match p {
            Pauli::I => Channel::I,
            Pauli::X => Channel::X,
            Pauli::Y => Channel::Y,
            Pauli::Z => Channel::Z,
        }
    }
}

/// Position + channel an edge maps to in the `(alpha+1, beta+1, gamma, 6)`
/// prediction space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Anchor {
    pub x: u16,
    pub y: u16,
    pub t: u32,
    pub channel: Channel,
}

/// What kind of graph node a [`DetectorId`] names.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Real,
    /// Spatial boundary vertex; never sampled.
    SpaceBoundary,
    /// Open time boundary before the first layer.
    TimeLow,
    /// Open time boundary after the last layer.
    TimeHigh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DetectorId {
    pub patch: u16,
    pub x: u16,
    pub y: u16,
    pub t: u32,
    pub basis: Basis,
    pub kind: NodeKind,
}

impl DetectorId {
    pub fn is_virtual(&self) -> bool {
        self.kind != NodeKind::Real
    }
}

/// Marks a node reference as a virtual vertex index.
pub const VIRTUAL_FLAG: u32 = 1 << 31;
/// Unused slot in [`DemEdge::nodes`].
pub const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemEdge {
    pub id: u32,
    pub kind: EdgeKind,
    /// Pauli label of H edges; `I` for the other kinds.
    pub pauli: Pauli,
    pub probability: f64,
    /// Real detector ids or `VIRTUAL_FLAG | virtual index`, padded with `NO_NODE`.
    pub nodes: [u32; 4],
    pub logical_mask: u64,
    /// For D edges this is the Pauli half of the (Pauli + M) decomposition.
    pub anchor: Anchor,
}

impl DemEdge {
    pub fn node_refs(&self) -> impl Iterator<Item = u32> + '_ {
        self.nodes.iter().copied().take_while(|&n| n != NO_NODE)
    }

    /// Real detector ids flipped by this edge.
    pub fn real_detectors(&self) -> impl Iterator<Item = u32> + '_ {
        self.node_refs().filter(|&n| n & VIRTUAL_FLAG == 0)
    }
}

/// Per-mechanism probabilities. `p_pauli` is the total data-qubit error
/// probability, split evenly over X, Y and Z.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub p_pauli: f64,
    pub p_meas: f64,
    pub p_diag: f64,
    pub p_hook: f64,
}

impl NoiseParams {
    /// Headline rate `p`: `(p, p, p/2, p/2)`.
    pub fn uniform(p: f64) -> NoiseParams {
        NoiseParams {
            p_pauli: p,
            p_meas: p,
            p_diag: p / 2.0,
            p_hook: p / 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, value) in [
            ("p_pauli", self.p_pauli),
            ("p_meas", self.p_meas),
            ("p_diag", self.p_diag),
            ("p_hook", self.p_hook),
        ] {
            if !(0.0..0.5).contains(&value) {
                return Err(ModelError::InvalidProbability { name, value });
            }
        }
        Ok(())
    }
}

/// A logical observable, tracked as one bit of every logical mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    pub name: String,
    /// Basis of the detectors whose subgraph decodes this observable.
    pub basis: Basis,
    /// Data qubits whose error component (the one `basis` detects) flips it.
    pub qubits: Vec<(usize, usize)>,
    /// Also flipped by measurement errors in the first round (open time
    /// boundary models).
    pub first_round_measurements: bool,
}

/// How the time axis ends.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeBoundary {
    /// Deterministic initialization and a final perfect readout layer.
    Closed,
    /// Random first/last rounds; boundary vertices above and below.
    Open,
}

/// A contiguous band of grid rows owned by one patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub patch: u16,
    /// Grid rows `[row_start, row_end)` whose stabilizers belong to the region.
    pub row_start: usize,
    pub row_end: usize,
}

/// Detector error model plus its per-basis decoding graphs.
#[derive(Clone, Debug)]
pub struct DecodingModel {
    pub lattice: Lattice,
    /// Data rows (alpha) and columns (beta).
    pub alpha: usize,
    pub beta: usize,
    /// Number of detector layers (gamma).
    pub rounds: usize,
    pub time_boundary: TimeBoundary,
    /// Stabilizers measured in every layer, in layer-local index order.
    pub layer_stabs: Vec<(GridPos, Basis)>,
    pub detectors: Vec<DetectorId>,
    pub virtuals: Vec<DetectorId>,
    pub edges: Vec<DemEdge>,
    pub observables: Vec<Observable>,
    pub regions: Vec<Region>,
    pub noise: NoiseParams,
    pub z_subgraph: Subgraph,
    pub x_subgraph: Subgraph,
    /// For every DEM edge, its Z- and X-subgraph edge ids (`u32::MAX` if none).
    pub edge_to_sub: Vec<[u32; 2]>,
    local_index: HashMap<GridPos, u32>,
}

impl DecodingModel {
    pub fn layer_size(&self) -> usize {
        self.layer_stabs.len()
    }

    pub fn num_detectors(&self) -> usize {
        self.detectors.len()
    }

    pub fn detector_id(&self, t: usize, local: usize) -> u32 {
        (t * self.layer_size() + local) as u32
    }

    pub fn layer_of(&self, det: u32) -> usize {
        det as usize / self.layer_size()
    }

    pub fn local_of(&self, det: u32) -> usize {
        det as usize % self.layer_size()
    }

    /// Layer-local index of the stabilizer at `pos`, if measured.
    pub fn local_index(&self, pos: GridPos) -> Option<u32> {
        self.local_index.get(&pos).copied()
    }

    pub fn node(&self, node_ref: u32) -> &DetectorId {
        if node_ref & VIRTUAL_FLAG != 0 {
            &self.virtuals[(node_ref & !VIRTUAL_FLAG) as usize]
        } else {
            &self.detectors[node_ref as usize]
        }
    }

    pub fn subgraph(&self, basis: Basis) -> &Subgraph {
        match basis {
            Basis::Z => &self.z_subgraph,
            Basis::X => &self.x_subgraph,
        }
    }

    pub fn region_of_row(&self, row: usize) -> usize {
        self.regions
            .iter()
            .position(|r| row >= r.row_start && row < r.row_end)
            .unwrap_or(self.regions.len() - 1)
    }

    /// Edge counts keyed by kind.
    pub fn kind_counts(&self) -> HashMap<EdgeKind, usize> {
        let mut out = HashMap::new();
        for e in &self.edges {
            *out.entry(e.kind).or_insert(0) += 1;
        }
        out
    }

    /// XOR of incidence vectors of `edges` over real detectors, as a sorted
    /// defect list, together with the XOR of their logical masks.
    pub fn syndrome_of(&self, edges: impl IntoIterator<Item = u32>) -> (Vec<u32>, u64) {
        let mut flips: HashMap<u32, bool> = HashMap::new();
        let mut mask = 0u64;
        for id in edges {
            let e = &self.edges[id as usize];
            mask ^= e.logical_mask;
            for d in e.real_detectors() {
                let v = flips.entry(d).or_insert(false);
                *v = !*v;
            }
        }
        let mut dets: Vec<u32> = flips.into_iter().filter(|&(_, v)| v).map(|(d, _)| d).collect();
        dets.sort_unstable();
        (dets, mask)
    }
}

/// Everything the builder needs besides noise and rounds.
pub(crate) struct ModelSpec {
    pub lattice: Lattice,
    pub observables: Vec<Observable>,
    pub regions: Vec<Region>,
    /// Which detector bases are measured.
    pub bases: [bool; 2],
    pub time_boundary: TimeBoundary,
}

/// Builds the detector error model of a single patch memory experiment:
/// `rounds` detector layers, the last being the perfect readout layer.
pub fn build_dem(patch: &CodePatch, rounds: usize, noise: NoiseParams) -> Result<DecodingModel, ModelError> {
    let spec = ModelSpec {
        lattice: patch.lattice.clone(),
        observables: vec![
            Observable {
                name: "Z_L".into(),
                basis: Basis::Z,
                qubits: patch.logical_z_boundary.clone(),
                first_round_measurements: false,
            },
            Observable {
                name: "X_L".into(),
                basis: Basis::X,
                qubits: patch.logical_x_boundary.clone(),
                first_round_measurements: false,
            },
        ],
        regions: vec![Region {
            patch: 0,
            row_start: 0,
            row_end: patch.lattice.rows + 1,
        }],
        bases: [true, true],
        time_boundary: TimeBoundary::Closed,
    };
    build_from_spec(spec, rounds, noise)
}

/// Stability experiment: a `d x d` patch with X boundaries on every side,
/// only X stabilizers tracked, open time boundaries and `rounds` measurement
/// rounds (`rounds - 1` detector layers). The observable is the product of
/// all X stabilizers in the first round.
pub fn build_stability_model(d: usize, rounds: usize, noise: NoiseParams) -> Result<DecodingModel, ModelError> {
    if d < 2 {
        return Err(ModelError::InvalidDistance(d));
    }
    if rounds < 2 {
        return Err(ModelError::InvalidGeometry("stability needs at least 2 rounds".into()));
    }
    let lattice = Lattice::new(d, d, BoundaryTypes::ALL_X)?;
    let spec = ModelSpec {
        regions: vec![Region {
            patch: 0,
            row_start: 0,
            row_end: lattice.rows + 1,
        }],
        lattice,
        observables: vec![Observable {
            name: "X_stab_product".into(),
            basis: Basis::X,
            qubits: vec![],
            first_round_measurements: true,
        }],
        bases: [false, true],
        time_boundary: TimeBoundary::Open,
    };
    build_from_spec(spec, rounds - 1, noise)
}

struct Builder<'a> {
    spec: &'a ModelSpec,
    layers: usize,
    layer_stabs: Vec<(GridPos, Basis)>,
    local_index: HashMap<GridPos, u32>,
    virtuals: Vec<DetectorId>,
    virtual_index: HashMap<(GridPos, u32, Basis, NodeKind), u32>,
    edges: Vec<DemEdge>,
    /// Observable mask per (qubit, component).
    comp_mask: HashMap<((usize, usize), Component), u64>,
}

impl<'a> Builder<'a> {
    fn patch_of_row(&self, row: usize) -> u16 {
        self.spec
            .regions
            .iter()
            .find(|r| row >= r.row_start && row < r.row_end)
            .map(|r| r.patch)
            .unwrap_or(0)
    }

    fn real(&self, pos: GridPos, t: usize) -> Option<u32> {
        self.local_index
            .get(&pos)
            .map(|&l| (t * self.layer_stabs.len()) as u32 + l)
    }

    fn virtual_node(&mut self, pos: GridPos, t: usize, basis: Basis, kind: NodeKind) -> u32 {
        let key = (pos, t as u32, basis, kind);
        if let Some(&i) = self.virtual_index.get(&key) {
            return VIRTUAL_FLAG | i;
        }
        let i = self.virtuals.len() as u32;
        self.virtuals.push(DetectorId {
            patch: self.patch_of_row(pos.0.min(self.spec.lattice.rows)),
            x: pos.0 as u16,
            y: pos.1 as u16,
            t: t as u32,
            basis,
            kind,
        });
        self.virtual_index.insert(key, i);
        VIRTUAL_FLAG | i
    }

    /// Node for corner `pos` of basis `basis` at layer `t`: the real
    /// detector if measured, otherwise a spatial boundary vertex.
    fn corner_node(&mut self, pos: GridPos, t: usize, basis: Basis) -> Option<u32> {
        if !self.spec.bases[basis.index()] {
            return None;
        }
        match self.spec.lattice.stabilizer(pos) {
            Some(b) if b == basis => self.real(pos, t),
            _ => Some(self.virtual_node(pos, t, basis, NodeKind::SpaceBoundary)),
        }
    }

    fn mask(&self, q: (usize, usize), c: Component) -> u64 {
        self.comp_mask.get(&(q, c)).copied().unwrap_or(0)
    }

    fn push(&mut self, kind: EdgeKind, pauli: Pauli, probability: f64, nodes: &[u32], mask: u64, anchor: Anchor) {
        if nodes.is_empty() {
            return;
        }
        let mut arr = [NO_NODE; 4];
        arr[..nodes.len()].copy_from_slice(nodes);
        self.edges.push(DemEdge {
            id: self.edges.len() as u32,
            kind,
            pauli,
            probability,
            nodes: arr,
            logical_mask: mask,
            anchor,
        });
    }

    fn build_layer(&mut self, t: usize, noise: &NoiseParams) {
        let lattice = &self.spec.lattice;
        let qubits: Vec<_> = lattice.data_qubits().collect();
        let has_next = t + 1 < self.layers;

        // H: data errors, one edge per Pauli label
        for &q in &qubits {
            for pauli in [Pauli::X, Pauli::Y, Pauli::Z] {
                let mut nodes = Vec::with_capacity(4);
                let mut mask = 0;
                for &c in pauli.components() {
                    mask ^= self.mask(q, c);
                    let basis = c.detector_basis();
                    for corner in self.spec.lattice.corners(q, basis) {
                        if let Some(n) = self.corner_node(corner, t, basis) {
                            nodes.push(n);
                        }
                    }
                }
                let anchor = Anchor {
                    x: q.0 as u16,
                    y: q.1 as u16,
                    t: t as u32,
                    channel: Channel::of_pauli(pauli),
                };
                self.push(EdgeKind::H, pauli, noise.p_pauli / 3.0, &nodes, mask, anchor);
            }
        }

        // V: measurement errors
        let stabs = self.layer_stabs.clone();
        match self.spec.time_boundary {
            TimeBoundary::Closed => {
                if has_next {
                    for &(pos, _) in &stabs {
                        let a = self.real(pos, t).unwrap();
                        let b = self.real(pos, t + 1).unwrap();
                        self.push(EdgeKind::V, Pauli::I, noise.p_meas, &[a, b], 0, m_anchor(pos, t));
                    }
                }
            }
            TimeBoundary::Open => {
                // measurement round r = t joins layers t-1 and t
                let first_mask = self.first_round_mask();
                for &(pos, basis) in &stabs {
                    let cur = self.real(pos, t).unwrap();
                    let (below, mask) = if t == 0 {
                        (self.virtual_node(pos, 0, basis, NodeKind::TimeLow), first_mask)
                    } else {
                        (self.real(pos, t - 1).unwrap(), 0)
                    };
                    self.push(EdgeKind::V, Pauli::I, noise.p_meas, &[below, cur], mask, m_anchor(pos, t));
                    if !has_next {
                        let above = self.virtual_node(pos, t, basis, NodeKind::TimeHigh);
                        self.push(EdgeKind::V, Pauli::I, noise.p_meas, &[cur, above], 0, m_anchor(pos, t + 1));
                    }
                }
            }
        }
        if !has_next {
            return;
        }

        // D: data error between CNOT layers, first corner now, second next layer
        for &q in &qubits {
            for c in [Component::X, Component::Z] {
                let basis = c.detector_basis();
                if !self.spec.bases[basis.index()] {
                    continue;
                }
                let [c1, c2] = self.spec.lattice.corners(q, basis);
                let is_real = |p| self.spec.lattice.stabilizer(p) == Some(basis);
                if !(is_real(c1) && is_real(c2)) {
                    continue;
                }
                let a = self.real(c1, t).unwrap();
                let b = self.real(c2, t + 1).unwrap();
                let anchor = Anchor {
                    x: q.0 as u16,
                    y: q.1 as u16,
                    t: t as u32,
                    channel: if c == Component::X { Channel::X } else { Channel::Z },
                };
                let mask = self.mask(q, c);
                self.push(EdgeKind::D, Pauli::I, noise.p_diag, &[a, b], mask, anchor);
            }
        }

        // Hook: ancilla fault spreading to a qubit pair, one layer later
        for &(pos, basis) in &stabs {
            let Some(partner) = self.spec.lattice.hook_partner(pos, basis) else {
                continue;
            };
            let a = self.real(pos, t).unwrap();
            let b = self.real(partner, t + 1).unwrap();
            let mask = self.hook_mask(pos, basis);
            let anchor = Anchor {
                x: pos.0 as u16,
                y: pos.1 as u16,
                t: t as u32,
                channel: Channel::H,
            };
            self.push(EdgeKind::Hook, Pauli::I, noise.p_hook, &[a, b], mask, anchor);
        }
    }

    fn first_round_mask(&self) -> u64 {
        self.spec
            .observables
            .iter()
            .enumerate()
            .filter(|(_, o)| o.first_round_measurements)
            .fold(0, |m, (i, _)| m | 1 << i)
    }

    fn hook_mask(&self, pos: GridPos, basis: Basis) -> u64 {
        let lat = &self.spec.lattice;
        let (x, y) = pos;
        let pair = match basis {
            Basis::Z => {
                let r = if x < lat.rows { x } else { x - 1 };
                [(r, y), (r, y + 1)]
            }
            Basis::X => {
                let c = if y < lat.cols { y } else { y - 1 };
                [(x, c), (x + 1, c)]
            }
        };
        let comp = basis.detected_component();
        self.mask(pair[0], comp) ^ self.mask(pair[1], comp)
    }
}

fn m_anchor(pos: GridPos, t: usize) -> Anchor {
    Anchor {
        x: pos.0 as u16,
        y: pos.1 as u16,
        t: t as u32,
        channel: Channel::M,
    }
}

pub(crate) fn build_from_spec(spec: ModelSpec, layers: usize, noise: NoiseParams) -> Result<DecodingModel, ModelError> {
    if layers == 0 {
        return Err(ModelError::ZeroRounds);
    }
    noise.validate()?;
    if spec.observables.len() > 64 {
        return Err(ModelError::TooManyObservables(spec.observables.len()));
    }
    let layer_stabs: Vec<(GridPos, Basis)> = spec
        .lattice
        .stabilizers()
        .filter(|&(_, b)| spec.bases[b.index()])
        .collect();
    let local_index: HashMap<GridPos, u32> = layer_stabs
        .iter()
        .enumerate()
        .map(|(i, &(p, _))| (p, i as u32))
        .collect();
    let mut comp_mask = HashMap::new();
    for (i, obs) in spec.observables.iter().enumerate() {
        let comp = obs.basis.detected_component();
        for &q in &obs.qubits {
            *comp_mask.entry((q, comp)).or_insert(0u64) ^= 1 << i;
        }
    }

    let mut b = Builder {
        spec: &spec,
        layers,
        layer_stabs: layer_stabs.clone(),
        local_index: local_index.clone(),
        virtuals: Vec::new(),
        virtual_index: HashMap::new(),
        edges: Vec::new(),
        comp_mask,
    };
    for t in 0..layers {
        b.build_layer(t, &noise);
    }
    let Builder { edges, virtuals, .. } = b;
    Ok(assemble(spec, layers, virtuals, edges, noise))
}

/// Fills in detectors and decoding graphs around a finished edge list.
pub(crate) fn assemble(
    spec: ModelSpec,
    layers: usize,
    virtuals: Vec<DetectorId>,
    edges: Vec<DemEdge>,
    noise: NoiseParams,
) -> DecodingModel {
    let layer_stabs: Vec<(GridPos, Basis)> = spec
        .lattice
        .stabilizers()
        .filter(|&(_, b)| spec.bases[b.index()])
        .collect();
    let local_index: HashMap<GridPos, u32> = layer_stabs
        .iter()
        .enumerate()
        .map(|(i, &(p, _))| (p, i as u32))
        .collect();
    let mut detectors = Vec::with_capacity(layers * layer_stabs.len());
    for t in 0..layers {
        for &((x, y), basis) in &layer_stabs {
            let patch = spec
                .regions
                .iter()
                .find(|r| x >= r.row_start && x < r.row_end)
                .map(|r| r.patch)
                .unwrap_or(0);
            detectors.push(DetectorId {
                patch,
                x: x as u16,
                y: y as u16,
                t: t as u32,
                basis,
                kind: NodeKind::Real,
            });
        }
    }

    let mut model = DecodingModel {
        alpha: spec.lattice.rows,
        beta: spec.lattice.cols,
        lattice: spec.lattice,
        rounds: layers,
        time_boundary: spec.time_boundary,
        layer_stabs,
        detectors,
        virtuals,
        edges,
        observables: spec.observables,
        regions: spec.regions,
        noise,
        z_subgraph: Subgraph::empty(Basis::Z),
        x_subgraph: Subgraph::empty(Basis::X),
        edge_to_sub: Vec::new(),
        local_index,
    };
    decompose_hyperedges(&mut model);
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn model(d: usize, rounds: usize, p: f64) -> DecodingModel {
        build_dem(&build_surface_code(d).unwrap(), rounds, NoiseParams::uniform(p)).unwrap()
    }

    /// Independent enumeration of the expected per-kind edge counts.
    fn hand_counts(d: usize, rounds: usize) -> HashMap<EdgeKind, usize> {
        let stabs = d * d - 1;
        // both interior diagonals real: count per qubit & component by brute force
        let patch = build_surface_code(d).unwrap();
        let lat = &patch.lattice;
        let mut diag = 0;
        for i in 0..d {
            for j in 0..d {
                for basis in [Basis::Z, Basis::X] {
                    let ok = if (i + j) % 2 == basis.parity() {
                        lat.stabilizer((i, j)) == Some(basis) && lat.stabilizer((i + 1, j + 1)) == Some(basis)
                    } else {
                        lat.stabilizer((i, j + 1)) == Some(basis) && lat.stabilizer((i + 1, j)) == Some(basis)
                    };
                    diag += ok as usize;
                }
            }
        }
        let mut hooks = 0;
        for x in 0..=d {
            for y in 0..=d {
                match lat.stabilizer((x, y)) {
                    Some(Basis::Z) if lat.stabilizer((x, y + 2)) == Some(Basis::Z) => hooks += 1,
                    Some(Basis::X) if lat.stabilizer((x + 2, y)) == Some(Basis::X) => hooks += 1,
                    _ => {}
                }
            }
        }
        HashMap::from([
            (EdgeKind::H, 3 * d * d * rounds),
            (EdgeKind::V, stabs * (rounds - 1)),
            (EdgeKind::D, diag * (rounds - 1)),
            (EdgeKind::Hook, hooks * (rounds - 1)),
        ])
    }

    #[test]
    fn d3_edge_counts_match_enumeration() {
        let m = model(3, 3, 0.001);
        let counts = m.kind_counts();
        let expected = hand_counts(3, 3);
        assert_eq!(counts, expected);
        // d=3 numbers spelled out: 81 H, 16 V
        assert_eq!(counts[&EdgeKind::H], 81);
        assert_eq!(counts[&EdgeKind::V], 16);
    }

    #[test]
    fn all_kinds_present() {
        for d in [3, 5] {
            let m = model(d, 2, 0.001);
            let c = m.kind_counts();
            for k in [EdgeKind::H, EdgeKind::V, EdgeKind::D, EdgeKind::Hook] {
                assert!(c.get(&k).copied().unwrap_or(0) > 0, "missing {k:?} at d={d}");
            }
        }
    }

    #[test]
    fn zero_noise_keeps_edges() {
        let m = model(3, 3, 0.0);
        assert!(!m.edges.is_empty());
        assert!(m.edges.iter().all(|e| e.probability == 0.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        let patch = build_surface_code(3).unwrap();
        assert!(matches!(
            build_dem(&patch, 0, NoiseParams::uniform(0.01)),
            Err(ModelError::ZeroRounds)
        ));
        let mut n = NoiseParams::uniform(0.01);
        n.p_meas = 0.5;
        assert!(build_dem(&patch, 3, n).is_err());
        n.p_meas = -0.1;
        assert!(build_dem(&patch, 3, n).is_err());
    }

    #[test]
    fn edge_shapes() {
        let m = model(5, 4, 0.001);
        for e in &m.edges {
            let n = e.node_refs().count();
            match e.kind {
                EdgeKind::H => {
                    let expect = if e.pauli == Pauli::Y { 4 } else { 2 };
                    assert_eq!(n, expect);
                }
                EdgeKind::V | EdgeKind::D | EdgeKind::Hook => {
                    assert_eq!(n, 2);
                    let (a, b) = (e.nodes[0], e.nodes[1]);
                    assert_eq!(m.layer_of(a) + 1, m.layer_of(b));
                    if e.kind == EdgeKind::V {
                        assert_eq!(m.local_of(a), m.local_of(b));
                    } else {
                        assert_ne!(m.local_of(a), m.local_of(b));
                    }
                }
            }
        }
    }

    #[test]
    fn anchors_unique_per_channel() {
        let m = model(5, 5, 0.001);
        let mut seen = HashSet::new();
        for e in m.edges.iter().filter(|e| e.kind != EdgeKind::D) {
            assert!(seen.insert(e.anchor), "duplicate anchor {:?}", e.anchor);
        }
        // D edges decompose into a Pauli anchor plus the M anchor below their
        // second endpoint; both must name existing H / V edges.
        let by_anchor: HashMap<Anchor, &DemEdge> =
            m.edges.iter().filter(|e| e.kind != EdgeKind::D).map(|e| (e.anchor, e)).collect();
        for e in m.edges.iter().filter(|e| e.kind == EdgeKind::D) {
            let pauli_part = by_anchor[&e.anchor];
            let second = m.node(e.nodes[1]);
            let meas = by_anchor[&Anchor {
                x: second.x,
                y: second.y,
                t: e.anchor.t,
                channel: Channel::M,
            }];
            let (dets, mask) = m.syndrome_of([pauli_part.id, meas.id]);
            let mut own: Vec<u32> = e.real_detectors().collect();
            own.sort_unstable();
            assert_eq!(dets, own);
            assert_eq!(mask, e.logical_mask);
        }
    }

    #[test]
    fn y_mask_is_xor_of_components() {
        let m = model(5, 2, 0.001);
        let by_anchor: HashMap<(u16, u16, u32, Channel), &DemEdge> = m
            .edges
            .iter()
            .filter(|e| e.kind == EdgeKind::H)
            .map(|e| ((e.anchor.x, e.anchor.y, e.anchor.t, e.anchor.channel), e))
            .collect();
        for (&(x, y, t, c), e) in &by_anchor {
            if c == Channel::Y {
                let ex = by_anchor[&(x, y, t, Channel::X)];
                let ez = by_anchor[&(x, y, t, Channel::Z)];
                assert_eq!(e.logical_mask, ex.logical_mask ^ ez.logical_mask);
            }
        }
    }

    #[test]
    fn top_row_x_errors_flip_z_logical() {
        let m = model(3, 1, 0.001);
        for e in m.edges.iter().filter(|e| e.kind == EdgeKind::H && e.pauli == Pauli::X) {
            assert_eq!(e.logical_mask & 1 == 1, e.anchor.x == 0);
        }
    }

    #[test]
    fn translation_invariance_of_interior() {
        // neighborhood signature (relative displacements of incident edges)
        let m = model(11, 5, 0.001);
        let mut signatures = HashSet::new();
        for (local, &((x, y), basis)) in m.layer_stabs.iter().enumerate() {
            let interior = x > 3 && y > 3 && x + 3 < m.alpha && y + 3 < m.beta;
            if !interior || basis != Basis::Z {
                continue;
            }
            let det = m.detector_id(2, local);
            let mut sig = Vec::new();
            for e in &m.edges {
                if e.real_detectors().any(|d| d == det) {
                    let mut rel: Vec<(i64, i64, i64)> = e
                        .node_refs()
                        .map(|n| {
                            let o = m.node(n);
                            (o.x as i64 - x as i64, o.y as i64 - y as i64, o.t as i64 - 2)
                        })
                        .collect();
                    rel.sort();
                    sig.push((e.kind.code(), e.pauli.code(), rel));
                }
            }
            sig.sort();
            signatures.insert(sig);
        }
        assert_eq!(signatures.len(), 1);
    }

    #[test]
    fn stability_model_structure() {
        let m = build_stability_model(4, 5, NoiseParams::uniform(0.001)).unwrap();
        assert_eq!(m.rounds, 4);
        assert!(m.layer_stabs.iter().all(|&(_, b)| b == Basis::X));
        // X subgraph has no spatial boundary vertices
        assert!(m.virtuals.iter().all(|v| v.kind != NodeKind::SpaceBoundary));
        // product of all X stabilizers is fixed: every Z error flips 2 detectors
        for e in m.edges.iter().filter(|e| e.kind == EdgeKind::H && e.pauli == Pauli::Z) {
            assert_eq!(e.real_detectors().count(), 2);
        }
        let flagged = m.edges.iter().filter(|e| e.logical_mask != 0).count();
        assert_eq!(flagged, m.layer_size());
    }
}
