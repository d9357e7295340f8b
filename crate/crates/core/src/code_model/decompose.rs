//! Splitting the DEM into one graphlike matching graph per basis.

use std::collections::HashMap;

use super::{Basis, DecodingModel, VIRTUAL_FLAG};

/// Boundary endpoint of a [`SubEdge`].
pub const BOUNDARY: u32 = u32::MAX;

/// Weight assigned to zero-probability edges.
pub const MAX_WEIGHT: i64 = 1 << 14;

/// Integer log-likelihood weight, `round(256 ln((1-p)/p))`.
pub fn edge_weight(p: f64) -> i64 {
    if p <= 0.0 {
        return MAX_WEIGHT;
    }
    let w = (256.0 * ((1.0 - p) / p).ln()).round() as i64;
    w.clamp(1, MAX_WEIGHT)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubEdge {
    pub a: u32,
    /// Second real detector or [`BOUNDARY`].
    pub b: u32,
    pub probability: f64,
    pub weight: i64,
    pub mask: u64,
}

impl SubEdge {
    pub fn is_boundary(&self) -> bool {
        self.b == BOUNDARY
    }

    pub fn other(&self, v: u32) -> u32 {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }
}

/// Matching graph of one basis over global detector ids.
#[derive(Clone, Debug, Default)]
pub struct Subgraph {
    pub basis: Option<Basis>,
    pub edges: Vec<SubEdge>,
    offsets: Vec<u32>,
    adj: Vec<u32>,
}

impl Subgraph {
    pub fn empty(basis: Basis) -> Subgraph {
        Subgraph {
            basis: Some(basis),
            ..Default::default()
        }
    }

    /// Builds CSR adjacency for `num_nodes` detector ids.
    pub fn from_edges(basis: Basis, num_nodes: usize, edges: Vec<SubEdge>) -> Subgraph {
        let mut deg = vec![0u32; num_nodes + 1];
        for e in &edges {
            deg[e.a as usize] += 1;
            if e.b != BOUNDARY {
                deg[e.b as usize] += 1;
            }
        }
        let mut offsets = vec![0u32; num_nodes + 1];
        for i in 0..num_nodes {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut adj = vec![0u32; offsets[num_nodes] as usize];
        for (i, e) in edges.iter().enumerate() {
            adj[fill[e.a as usize] as usize] = i as u32;
            fill[e.a as usize] += 1;
            if e.b != BOUNDARY {
                adj[fill[e.b as usize] as usize] = i as u32;
                fill[e.b as usize] += 1;
            }
        }
        Subgraph {
            basis: Some(basis),
            edges,
            offsets,
            adj,
        }
    }

    /// Edge ids incident to detector `v`.
    pub fn incident(&self, v: u32) -> &[u32] {
        let v = v as usize;
        if v + 1 >= self.offsets.len() {
            return &[];
        }
        &self.adj[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }
}

/// Splits every DEM edge into its Z and X parts and merges parallel edges
/// with identical endpoints and mask. Fills the model's subgraphs and
/// `edge_to_sub`.
pub fn decompose_hyperedges(model: &mut DecodingModel) {
    let basis_masks = {
        let mut m = [0u64; 2];
        for (i, o) in model.observables.iter().enumerate() {
            m[o.basis.index()] |= 1 << i;
        }
        m
    };
    let num = model.detectors.len();
    let mut edge_to_sub = vec![[u32::MAX; 2]; model.edges.len()];
    for basis in [Basis::Z, Basis::X] {
        let mut edges: Vec<SubEdge> = Vec::new();
        let mut index: HashMap<(u32, u32, u64), u32> = HashMap::new();
        for (eid, e) in model.edges.iter().enumerate() {
            let mut real = [0u32; 4];
            let mut n_real = 0;
            let mut touches = false;
            for n in e.node_refs() {
                let node = model.node(n);
                if node.basis != basis {
                    continue;
                }
                touches = true;
                if n & VIRTUAL_FLAG == 0 {
                    real[n_real] = n;
                    n_real += 1;
                }
            }
            if !touches || n_real == 0 {
                continue;
            }
            debug_assert!(n_real <= 2, "edge {eid} is not graphlike in basis {basis:?}");
            let (a, b) = if n_real == 1 {
                (real[0], BOUNDARY)
            } else {
                (real[0].min(real[1]), real[0].max(real[1]))
            };
            let mask = e.logical_mask & basis_masks[basis.index()];
            let key = (a, b, mask);
            let sid = match index.get(&key) {
                Some(&sid) => {
                    let s = &mut edges[sid as usize];
                    let (p1, p2) = (s.probability, e.probability);
                    s.probability = p1 * (1.0 - p2) + p2 * (1.0 - p1);
                    sid
                }
                None => {
                    let sid = edges.len() as u32;
                    edges.push(SubEdge {
                        a,
                        b,
                        probability: e.probability,
                        weight: 0,
                        mask,
                    });
                    index.insert(key, sid);
                    sid
                }
            };
            edge_to_sub[eid][basis.index()] = sid;
        }
        for s in &mut edges {
            s.weight = edge_weight(s.probability);
        }
        let g = Subgraph::from_edges(basis, num, edges);
        match basis {
            Basis::Z => model.z_subgraph = g,
            Basis::X => model.x_subgraph = g,
        }
    }
    model.edge_to_sub = edge_to_sub;
}
