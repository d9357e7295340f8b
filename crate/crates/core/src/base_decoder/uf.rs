//! Weighted union-find decoder: event-driven cluster growth in half-edge
//! units followed by peeling on a spanning forest of the grown edges.

use std::collections::VecDeque;

use super::{Correction, DecodeError, Decoder, MatchingGraph};
use crate::code_model::BOUNDARY;

#[derive(Clone, Copy, Debug, Default)]
pub struct UnionFindDecoder;

struct Clusters {
    parent: Vec<u32>,
    odd: Vec<bool>,
    boundary: Vec<bool>,
    frontier: Vec<Vec<u32>>,
    touched: Vec<bool>,
}

impl Clusters {
    fn find(&mut self, mut v: u32) -> u32 {
        while self.parent[v as usize] != v {
            let p = self.parent[v as usize];
            self.parent[v as usize] = self.parent[p as usize];
            v = p;
        }
        v
    }

    fn touch(&mut self, graph: &MatchingGraph, v: u32) {
        if !self.touched[v as usize] {
            self.touched[v as usize] = true;
            if (v as usize) < graph.num_nodes {
                self.frontier[v as usize].extend_from_slice(graph.incident(v));
            }
        }
    }

    fn union(&mut self, graph: &MatchingGraph, a: u32, b: u32) {
        self.touch(graph, a);
        self.touch(graph, b);
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.frontier[ra as usize].len() >= self.frontier[rb as usize].len() {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.odd[big as usize] ^= self.odd[small as usize];
        self.boundary[big as usize] |= self.boundary[small as usize];
        let moved = std::mem::take(&mut self.frontier[small as usize]);
        self.frontier[big as usize].extend(moved);
    }

    fn active(&self, r: u32) -> bool {
        self.odd[r as usize] && !self.boundary[r as usize]
    }
}

impl Decoder for UnionFindDecoder {
    fn name(&self) -> &'static str {
        "union-find"
    }

    fn decode(&self, graph: &MatchingGraph, defects: &[u32]) -> Result<Correction, DecodeError> {
        graph.check_defects(defects)?;
        if defects.is_empty() {
            return Ok(Correction::default());
        }
        let n = graph.num_nodes;
        let bnode = n as u32;
        let node_of = |v: u32| if v == BOUNDARY { bnode } else { v };
        let mut cl = Clusters {
            parent: (0..=n as u32).collect(),
            odd: vec![false; n + 1],
            boundary: vec![false; n + 1],
            frontier: vec![Vec::new(); n + 1],
            touched: vec![false; n + 1],
        };
        cl.boundary[n] = true;
        cl.touched[n] = true;
        for &d in defects {
            cl.odd[d as usize] = true;
            cl.touch(graph, d);
        }
        let mut grown = vec![0i64; graph.edges.len()];
        let mut full = vec![false; graph.edges.len()];
        let mut full_edges: Vec<u32> = Vec::new();

        loop {
            let mut roots: Vec<u32> = defects.iter().map(|&d| cl.find(d)).collect();
            roots.sort_unstable();
            roots.dedup();
            roots.retain(|&r| cl.active(r));
            if roots.is_empty() {
                break;
            }
            let mut delta = i64::MAX;
            for &r in &roots {
                let list = std::mem::take(&mut cl.frontier[r as usize]);
                let mut kept = Vec::with_capacity(list.len());
                for e in list {
                    if full[e as usize] {
                        continue;
                    }
                    let edge = &graph.edges[e as usize];
                    let (ra, rb) = (cl.find(edge.a), cl.find(node_of(edge.b)));
                    if ra == rb {
                        continue;
                    }
                    let other = if ra == r { rb } else { ra };
                    let rate = if cl.active(other) { 2 } else { 1 };
                    let remaining = 2 * edge.weight - grown[e as usize];
                    delta = delta.min((remaining + rate - 1) / rate);
                    kept.push(e);
                }
                if kept.is_empty() {
                    return Err(DecodeError::Unmatchable(r));
                }
                cl.frontier[r as usize] = kept;
            }
            let delta = delta.max(0);
            let mut newly = Vec::new();
            for &r in &roots {
                for &e in &cl.frontier[r as usize] {
                    let g = &mut grown[e as usize];
                    *g += delta;
                    if *g >= 2 * graph.edges[e as usize].weight && !full[e as usize] {
                        full[e as usize] = true;
                        newly.push(e);
                    }
                }
            }
            newly.sort_unstable();
            for e in newly {
                let edge = &graph.edges[e as usize];
                cl.union(graph, edge.a, node_of(edge.b));
                full_edges.push(e);
            }
        }

        peel(graph, defects, &full_edges).map(|edges| Correction::from_edges(graph, edges))
    }
}

/// Peels a spanning forest of `grown` edges, returning the correction edges.
fn peel(graph: &MatchingGraph, defects: &[u32], grown: &[u32]) -> Result<Vec<u32>, DecodeError> {
    let n = graph.num_nodes;
    let bnode = n as u32;
    let node_of = |v: u32| if v == BOUNDARY { bnode } else { v };
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n + 1];
    let mut sorted = grown.to_vec();
    sorted.sort_unstable();
    for &e in &sorted {
        let edge = &graph.edges[e as usize];
        adj[edge.a as usize].push(e);
        adj[node_of(edge.b) as usize].push(e);
    }
    let mut parent_edge = vec![u32::MAX; n + 1];
    let mut seen = vec![false; n + 1];
    let mut order = Vec::new();
    let mut roots = vec![bnode];
    let mut sorted_defects = defects.to_vec();
    sorted_defects.sort_unstable();
    roots.extend(sorted_defects.iter().copied());
    for root in roots {
        if seen[root as usize] {
            continue;
        }
        seen[root as usize] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            for &e in &adj[v as usize] {
                let edge = &graph.edges[e as usize];
                let w = if edge.a == v { node_of(edge.b) } else { edge.a };
                if !seen[w as usize] {
                    seen[w as usize] = true;
                    parent_edge[w as usize] = e;
                    queue.push_back(w);
                }
            }
        }
    }
    let mut mark = vec![false; n + 1];
    for &d in defects {
        mark[d as usize] = true;
    }
    let mut out = Vec::new();
    for &v in order.iter().rev() {
        if !mark[v as usize] {
            continue;
        }
        let e = parent_edge[v as usize];
        if e == u32::MAX {
            if v == bnode {
                continue;
            }
            return Err(DecodeError::Unmatchable(v));
        }
        out.push(e);
        mark[v as usize] = false;
        let edge = &graph.edges[e as usize];
        let p = if edge.a == v { node_of(edge.b) } else { edge.a };
        mark[p as usize] ^= true;
    }
    Ok(out)
}
