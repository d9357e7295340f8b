//! Matching decoders over a single-basis graph with one boundary node.

mod exact;
mod uf;

use std::collections::HashMap;

use thiserror::Error;

use crate::code_model::{Basis, DecodingModel, Subgraph, BOUNDARY};

pub use exact::ExactDecoder;
pub use uf::UnionFindDecoder;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("defect {0} is not a node of the graph")]
    DefectOutOfRange(u32),
    #[error("defect {0} listed twice")]
    DuplicateDefect(u32),
    #[error("odd cluster around node {0} cannot reach a boundary")]
    Unmatchable(u32),
    #[error("instance too large for the exact decoder: component of {0} defects")]
    TooLarge(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MEdge {
    pub a: u32,
    /// Local node or [`BOUNDARY`].
    pub b: u32,
    pub weight: i64,
    pub mask: u64,
    /// Id of the subgraph edge this came from.
    pub source: u32,
}

impl MEdge {
    pub fn other(&self, v: u32) -> u32 {
        if self.a == v {
            self.b
        } else {
            self.a
        }
    }
}

/// Decoding graph with local node ids `0..num_nodes` and a single implicit
/// boundary node.
#[derive(Clone, Debug, Default)]
pub struct MatchingGraph {
    pub num_nodes: usize,
    pub edges: Vec<MEdge>,
    offsets: Vec<u32>,
    adj: Vec<u32>,
}

impl MatchingGraph {
    pub fn new(num_nodes: usize, edges: Vec<MEdge>) -> MatchingGraph {
        let mut offsets = vec![0u32; num_nodes + 1];
        for e in &edges {
            offsets[e.a as usize + 1] += 1;
            if e.b != BOUNDARY {
                offsets[e.b as usize + 1] += 1;
            }
        }
        for i in 0..num_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut adj = vec![0u32; offsets[num_nodes] as usize];
        for (i, e) in edges.iter().enumerate() {
            for v in [e.a, e.b] {
                if v != BOUNDARY {
                    adj[fill[v as usize] as usize] = i as u32;
                    fill[v as usize] += 1;
                }
            }
        }
        MatchingGraph {
            num_nodes,
            edges,
            offsets,
            adj,
        }
    }

    /// Whole subgraph; local ids equal global detector ids.
    pub fn from_subgraph(sub: &Subgraph, num_nodes: usize) -> MatchingGraph {
        let edges = sub
            .edges
            .iter()
            .enumerate()
            .map(|(i, s)| MEdge {
                a: s.a,
                b: s.b,
                weight: s.weight,
                mask: s.mask,
                source: i as u32,
            })
            .collect();
        MatchingGraph::new(num_nodes, edges)
    }

    /// Restriction of `sub` to the sorted global ids in `nodes`. Edges with
    /// exactly one endpoint inside become boundary edges; `is_cut` in the
    /// returned list marks them.
    pub fn restricted(sub: &Subgraph, nodes: &[u32]) -> (MatchingGraph, Vec<bool>) {
        let index: HashMap<u32, u32> = nodes.iter().enumerate().map(|(i, &g)| (g, i as u32)).collect();
        let mut seen = HashMap::new();
        let mut edges = Vec::new();
        let mut cut = Vec::new();
        for &g in nodes {
            for &eid in sub.incident(g) {
                if seen.insert(eid, ()).is_some() {
                    continue;
                }
                let s = &sub.edges[eid as usize];
                let la = index.get(&s.a).copied();
                let lb = if s.b == BOUNDARY { Some(BOUNDARY) } else { index.get(&s.b).copied() };
                let (a, b, is_cut) = match (la, lb) {
                    (Some(a), Some(b)) => (a, b, false),
                    (Some(a), None) => (a, BOUNDARY, true),
                    (None, Some(b)) => (b, BOUNDARY, true),
                    (None, None) => continue,
                };
                let (a, b) = if b != BOUNDARY && b < a { (b, a) } else { (a, b) };
                edges.push(MEdge {
                    a,
                    b,
                    weight: s.weight,
                    mask: s.mask,
                    source: eid,
                });
                cut.push(is_cut);
            }
        }
        // canonical order so decoding does not depend on discovery order
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by_key(|&i| edges[i].source);
        let edges2 = order.iter().map(|&i| edges[i].clone()).collect();
        let cut2 = order.iter().map(|&i| cut[i]).collect();
        (MatchingGraph::new(nodes.len(), edges2), cut2)
    }

    pub fn incident(&self, v: u32) -> &[u32] {
        let v = v as usize;
        &self.adj[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    fn check_defects(&self, defects: &[u32]) -> Result<(), DecodeError> {
        let mut seen = vec![false; self.num_nodes];
        for &d in defects {
            if d as usize >= self.num_nodes {
                return Err(DecodeError::DefectOutOfRange(d));
            }
            if std::mem::replace(&mut seen[d as usize], true) {
                return Err(DecodeError::DuplicateDefect(d));
            }
        }
        Ok(())
    }

    /// Nodes flipped an odd number of times by `edges`, sorted.
    pub fn syndrome_of(&self, edges: &[u32]) -> Vec<u32> {
        let mut flips = vec![false; self.num_nodes];
        for &e in edges {
            let e = &self.edges[e as usize];
            for v in [e.a, e.b] {
                if v != BOUNDARY {
                    flips[v as usize] ^= true;
                }
            }
        }
        (0..self.num_nodes as u32).filter(|&v| flips[v as usize]).collect()
    }
}

/// A set of edges whose boundary is the input syndrome.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Correction {
    /// Sorted graph-local edge ids.
    pub edges: Vec<u32>,
    pub logical_flip: u64,
    /// Sum of fixed-point edge weights.
    pub weight: i64,
}

impl Correction {
    pub fn from_edges(graph: &MatchingGraph, mut edges: Vec<u32>) -> Correction {
        edges.sort_unstable();
        // an edge used twice cancels
        let mut out: Vec<u32> = Vec::with_capacity(edges.len());
        for e in edges {
            if out.last() == Some(&e) {
                out.pop();
            } else {
                out.push(e);
            }
        }
        let mut flip = 0;
        let mut weight = 0;
        for &e in &out {
            flip ^= graph.edges[e as usize].mask;
            weight += graph.edges[e as usize].weight;
        }
        Correction {
            edges: out,
            logical_flip: flip,
            weight,
        }
    }
}

pub trait Decoder: Send + Sync {
    fn name(&self) -> &'static str;

    fn decode(&self, graph: &MatchingGraph, defects: &[u32]) -> Result<Correction, DecodeError>;
}

/// Which inner decoder to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DecoderKind {
    UnionFind,
    Exact,
}

impl DecoderKind {
    pub fn build(self) -> Box<dyn Decoder> {
        match self {
            DecoderKind::UnionFind => Box::new(UnionFindDecoder),
            DecoderKind::Exact => Box::new(ExactDecoder::default()),
        }
    }
}

/// Decodes a seam graph: exact while small enough, union-find beyond.
pub fn decode_seam_2d(graph: &MatchingGraph, defects: &[u32]) -> Result<Correction, DecodeError> {
    match ExactDecoder::default().decode(graph, defects) {
        Err(DecodeError::TooLarge(_)) => UnionFindDecoder.decode(graph, defects),
        r => r,
    }
}

/// Whole-model decoder: one matching graph per basis over all rounds.
pub struct GlobalDecoder {
    graphs: [MatchingGraph; 2],
    /// Global detector id -> local node id in its basis graph.
    local: Vec<u32>,
    basis_of: Vec<u8>,
}

impl GlobalDecoder {
    pub fn new(model: &DecodingModel) -> GlobalDecoder {
        let mut local = vec![0u32; model.num_detectors()];
        let mut basis_of = vec![0u8; model.num_detectors()];
        let graphs = [Basis::Z, Basis::X].map(|basis| {
            let nodes: Vec<u32> = (0..model.num_detectors() as u32)
                .filter(|&d| model.detectors[d as usize].basis == basis)
                .collect();
            for (i, &g) in nodes.iter().enumerate() {
                local[g as usize] = i as u32;
                basis_of[g as usize] = basis.index() as u8;
            }
            MatchingGraph::restricted(model.subgraph(basis), &nodes).0
        });
        GlobalDecoder {
            graphs,
            local,
            basis_of,
        }
    }

    pub fn graph(&self, basis: Basis) -> &MatchingGraph {
        &self.graphs[basis.index()]
    }

    /// Splits global defects into per-basis local defect lists.
    pub fn split(&self, defects: &[u32]) -> [Vec<u32>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        for &d in defects {
            out[self.basis_of[d as usize] as usize].push(self.local[d as usize]);
        }
        out
    }

    /// Predicted logical mask for a set of fired global detectors.
    pub fn decode(&self, decoder: &dyn Decoder, defects: &[u32]) -> Result<u64, DecodeError> {
        let parts = self.split(defects);
        let mut mask = 0;
        for b in 0..2 {
            mask ^= decoder.decode(&self.graphs[b], &parts[b])?.logical_flip;
        }
        Ok(mask)
    }

    /// Per-basis corrections, Z then X.
    pub fn corrections(&self, decoder: &dyn Decoder, defects: &[u32]) -> Result<[Correction; 2], DecodeError> {
        let parts = self.split(defects);
        Ok([
            decoder.decode(&self.graphs[0], &parts[0])?,
            decoder.decode(&self.graphs[1], &parts[1])?,
        ])
    }
}
