//! Exact minimum-weight decoder for small instances.
//!
//! Shortest paths from every defect (never passing through the boundary),
//! then an exact minimum-weight matching with boundary per connected
//! component of the "worth pairing" relation, by dynamic programming over
//! defect subsets.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{Correction, DecodeError, Decoder, MatchingGraph};
use crate::code_model::BOUNDARY;

const INF: i64 = i64::MAX / 4;

#[derive(Clone, Copy, Debug)]
pub struct ExactDecoder {
    /// Largest component solved by subset DP.
    pub max_component: usize,
}

impl Default for ExactDecoder {
    fn default() -> Self {
        ExactDecoder { max_component: 20 }
    }
}

struct PathTree {
    dist: Vec<i64>,
    pred: Vec<u32>,
    /// Best boundary edge reached from this source and its total weight.
    boundary: (i64, u32),
}

fn dijkstra(graph: &MatchingGraph, src: u32) -> PathTree {
    let n = graph.num_nodes;
    let mut dist = vec![INF; n];
    let mut pred = vec![u32::MAX; n];
    let mut boundary = (INF, u32::MAX);
    dist[src as usize] = 0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse((0i64, src)));
    while let Some(Reverse((d, v))) = heap.pop() {
        if d > dist[v as usize] {
            continue;
        }
        for &e in graph.incident(v) {
            let edge = &graph.edges[e as usize];
            let nd = d + edge.weight;
            if edge.b == BOUNDARY {
                if nd < boundary.0 || (nd == boundary.0 && e < boundary.1) {
                    boundary = (nd, e);
                }
                continue;
            }
            let w = edge.other(v);
            let slot = &mut dist[w as usize];
            if nd < *slot || (nd == *slot && e < pred[w as usize]) {
                let improved = nd < *slot;
                *slot = nd;
                pred[w as usize] = e;
                if improved {
                    heap.push(Reverse((nd, w)));
                }
            }
        }
    }
    PathTree { dist, pred, boundary }
}

fn path_edges(graph: &MatchingGraph, tree: &PathTree, src: u32, mut v: u32, out: &mut Vec<u32>) {
    while v != src {
        let e = tree.pred[v as usize];
        out.push(e);
        v = graph.edges[e as usize].other(v);
    }
}

/// Boundary path of `v` inside its own tree: the best boundary edge's
/// endpoint walked back to the source.
fn boundary_edges(graph: &MatchingGraph, tree: &PathTree, src: u32, out: &mut Vec<u32>) {
    let e = tree.boundary.1;
    out.push(e);
    path_edges(graph, tree, src, graph.edges[e as usize].a, out);
}

/// Minimum-weight perfect matching with optional boundary matches for a
/// component; returns partner per position (`usize::MAX` = boundary).
fn solve_component(dist: &dyn Fn(usize, usize) -> i64, bnd: &[i64]) -> Option<Vec<usize>> {
    let k = bnd.len();
    let full = (1usize << k) - 1;
    let mut best = vec![INF; 1 << k];
    let mut choice = vec![(0u8, 0u8); 1 << k];
    best[0] = 0;
    for mask in 1..=full {
        let i = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << i);
        if bnd[i] < INF && best[rest] < INF {
            let c = bnd[i] + best[rest];
            if c < best[mask] {
                best[mask] = c;
                choice[mask] = (i as u8, u8::MAX);
            }
        }
        let mut r = rest;
        while r != 0 {
            let j = r.trailing_zeros() as usize;
            r &= r - 1;
            let dij = dist(i, j);
            let rem = rest & !(1 << j);
            if dij < INF && best[rem] < INF {
                let c = dij + best[rem];
                if c < best[mask] {
                    best[mask] = c;
                    choice[mask] = (i as u8, j as u8);
                }
            }
        }
    }
    if best[full] >= INF {
        return None;
    }
    let mut partner = vec![usize::MAX; k];
    let mut mask = full;
    while mask != 0 {
        let (i, j) = choice[mask];
        let i = i as usize;
        mask &= !(1 << i);
        if j != u8::MAX {
            partner[i] = j as usize;
            partner[j as usize] = i;
            mask &= !(1 << j);
        }
    }
    Some(partner)
}

impl Decoder for ExactDecoder {
    fn name(&self) -> &'static str {
        "exact"
    }

    fn decode(&self, graph: &MatchingGraph, defects: &[u32]) -> Result<Correction, DecodeError> {
        graph.check_defects(defects)?;
        if defects.is_empty() {
            return Ok(Correction::default());
        }
        let mut defects = defects.to_vec();
        defects.sort_unstable();
        let trees: Vec<PathTree> = defects.iter().map(|&d| dijkstra(graph, d)).collect();
        let k = defects.len();
        let dist = |i: usize, j: usize| trees[i].dist[defects[j] as usize];
        let bnd: Vec<i64> = trees.iter().map(|t| t.boundary.0).collect();

        // components of the relation "pairing can beat both boundary matches"
        let mut comp: Vec<usize> = (0..k).collect();
        fn root(c: &mut [usize], mut i: usize) -> usize {
            while c[i] != i {
                c[i] = c[c[i]];
                i = c[i];
            }
            i
        }
        for i in 0..k {
            for j in i + 1..k {
                let d = dist(i, j);
                if d < INF && (bnd[i] >= INF || bnd[j] >= INF || d < bnd[i] + bnd[j]) {
                    let (a, b) = (root(&mut comp, i), root(&mut comp, j));
                    comp[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
        for i in 0..k {
            let r = root(&mut comp, i);
            groups[r].push(i);
        }

        let mut edges = Vec::new();
        for group in groups.into_iter().filter(|g| !g.is_empty()) {
            if group.len() > self.max_component {
                return Err(DecodeError::TooLarge(group.len()));
            }
            let gb: Vec<i64> = group.iter().map(|&i| bnd[i]).collect();
            let gd = |a: usize, b: usize| dist(group[a], group[b]);
            let partner = solve_component(&gd, &gb).ok_or(DecodeError::Unmatchable(defects[group[0]]))?;
            for (a, &p) in partner.iter().enumerate() {
                let i = group[a];
                if p == usize::MAX {
                    boundary_edges(graph, &trees[i], defects[i], &mut edges);
                } else if a < p {
                    path_edges(graph, &trees[i], defects[i], defects[group[p]], &mut edges);
                }
            }
        }
        Ok(Correction::from_edges(graph, edges))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_decoder::MEdge;

    #[test]
    fn prefers_direct_edge() {
        let e = |a, b, w, source| MEdge {
            a,
            b,
            weight: w,
            mask: 0,
            source,
        };
        // direct 0-2 weight 20 vs 0-1-2 weight 15+15
        let g = MatchingGraph::new(3, vec![e(0, 2, 20, 0), e(0, 1, 15, 1), e(1, 2, 15, 2)]);
        let c = ExactDecoder::default().decode(&g, &[0, 2]).unwrap();
        assert_eq!(c.edges, vec![0]);
        assert_eq!(c.weight, 20);
    }

    #[test]
    fn too_large_component() {
        let e = |a, b| MEdge {
            a,
            b,
            weight: 1,
            mask: 0,
            source: 0,
        };
        let n = 30u32;
        let edges = (0..n - 1).map(|i| e(i, i + 1)).collect();
        let g = MatchingGraph::new(n as usize, edges);
        let defects: Vec<u32> = (0..n).collect();
        let dec = ExactDecoder { max_component: 10 };
        assert_eq!(dec.decode(&g, &defects), Err(DecodeError::TooLarge(30)));
    }
}
