//! Core + buffer block decoding with pairwise seam merging.
//!
//! The detector volume is cut into cores: `d` layers in time times one
//! region (patch) in space. A block decodes its core plus `b` buffer layers
//! on each open side, commits the matched edges owned by its core, and
//! projects matched edges that cross into a neighboring core onto seam bits.
//! Merging two neighbors decodes the union of their facing seam bits on the
//! interface graph.

mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_decoder::{decode_seam_2d, DecodeError, Decoder, GlobalDecoder, MatchingGraph};
use crate::code_model::{Basis, DecodingModel, BOUNDARY};

pub use store::{BlockStore, StoreError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("invalid block configuration: {0}")]
    Config(String),
    #[error("block {0} is not ready")]
    NotReady(usize),
    #[error("blocks {0} and {1} are not neighbors")]
    NotNeighbors(usize, usize),
    #[error("seam bit {0} is not an interface detector")]
    SeamMismatch(u32),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockConfig {
    /// Core extent in detector layers.
    pub core_layers: usize,
    /// Buffer layers (time) and grid rows (space) on each open side.
    pub buffer: usize,
    /// Split the volume by patch region as well as by time.
    pub spatial: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub region: u16,
    pub window: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Temporal,
    Spatial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockState {
    Pending,
    Decoding,
    Finished,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    pub kind: BlockKind,
    /// Core layers `[start, end)`.
    pub core_layers: (usize, usize),
    /// Core + buffer layers.
    pub window_layers: (usize, usize),
    /// Core grid rows.
    pub core_rows: (usize, usize),
    pub window_rows: (usize, usize),
    /// Neighboring block indices, ascending.
    pub neighbors: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum EdgeClass {
    Commit,
    /// Crossing edge into neighbor block, with the endpoint in this core.
    Cross { neighbor: u32, endpoint: u32 },
    Discard,
}

struct BasisGraph {
    graph: MatchingGraph,
    /// Local node -> global detector.
    nodes: Vec<u32>,
    class: Vec<EdgeClass>,
}

struct BlockGraphs {
    basis: [BasisGraph; 2],
    /// `(global - first_layer * L)` -> local node in its basis graph.
    local: Vec<u32>,
    offset: u32,
}

struct SeamGraphs {
    basis: [BasisGraph; 2],
    local: BTreeMap<u32, u32>,
}

/// Output of one block decode.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BlockOutput {
    pub block: usize,
    /// XOR of masks of committed core edges.
    pub logical: u64,
    /// Seam bits per neighbor block (all neighbors listed), sorted global
    /// detector ids inside this block's core.
    pub seams: Vec<(usize, Vec<u32>)>,
    /// Defects decoded plus correction edges produced.
    pub work: u64,
}

impl BlockOutput {
    pub fn seam_for(&self, neighbor: usize) -> Option<&[u32]> {
        self.seams
            .iter()
            .find(|(n, _)| *n == neighbor)
            .map(|(_, s)| s.as_slice())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MergeOutput {
    pub logical: u64,
    /// The seam graph could not absorb the XOR; it was decoded on the full
    /// model graph instead.
    pub escalated: bool,
    pub work: u64,
}

/// Who contributed a mask to the logical frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Contributor {
    Block(usize),
    Seam(usize, usize),
    /// Local predecoder corrections anchored at a round.
    Predecoder(u32),
}

/// Global logical state with an audit log of every contribution.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct LogicalFrame {
    pub bits: u64,
    pub log: Vec<(Contributor, u64)>,
}

impl LogicalFrame {
    pub fn apply(&mut self, who: Contributor, mask: u64) {
        self.bits ^= mask;
        self.log.push((who, mask));
    }

    /// Recomputes the bits from the log.
    pub fn audit(&self) -> u64 {
        self.log.iter().fold(0, |acc, (_, m)| acc ^ m)
    }

    /// XOR of contributions accepted by `keep`.
    pub fn restricted(&self, mut keep: impl FnMut(&Contributor) -> bool) -> u64 {
        self.log.iter().filter(|(c, _)| keep(c)).fold(0, |acc, (_, m)| acc ^ m)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ShotDecode {
    pub logical: u64,
    pub frame: LogicalFrame,
    pub escalations: usize,
    pub work: u64,
}

/// Static partition of a model into blocks, with lazily built graphs.
pub struct BlockPlan<'m> {
    model: &'m DecodingModel,
    pub config: BlockConfig,
    pub blocks: Vec<Block>,
    pub regions: usize,
    pub windows: usize,
    /// Neighbor pairs `(a, b)` with `a < b`.
    pub pairs: Vec<(usize, usize)>,
    region_of_local: Vec<u16>,
    graphs: Vec<OnceLock<BlockGraphs>>,
    seams: BTreeMap<(usize, usize), OnceLock<SeamGraphs>>,
    global: OnceLock<GlobalDecoder>,
}

impl<'m> BlockPlan<'m> {
    pub fn new(model: &'m DecodingModel, config: BlockConfig) -> Result<BlockPlan<'m>, EngineError> {
        let d = config.core_layers;
        let b = config.buffer;
        if d == 0 {
            return Err(EngineError::Config("core extent must be positive".into()));
        }
        if b == 0 {
            return Err(EngineError::Config("buffer must be at least 1".into()));
        }
        if b >= d {
            return Err(EngineError::Config(format!("buffer {b} must be smaller than the core extent {d}")));
        }
        let region_rows: Vec<(usize, usize)> = if config.spatial {
            model.regions.iter().map(|r| (r.row_start, r.row_end)).collect()
        } else {
            vec![(0, model.alpha + 1)]
        };
        if config.spatial {
            for &(s, e) in &region_rows {
                if b >= e - s {
                    return Err(EngineError::Config(format!(
                        "buffer {b} must be smaller than the region extent {}",
                        e - s
                    )));
                }
            }
        }
        let regions = region_rows.len();
        let windows = model.rounds.div_ceil(d);
        let region_of_local: Vec<u16> = model
            .layer_stabs
            .iter()
            .map(|&((x, _), _)| {
                region_rows
                    .iter()
                    .position(|&(s, e)| x >= s && x < e)
                    .unwrap_or(regions - 1) as u16
            })
            .collect();
        let mut blocks = Vec::with_capacity(regions * windows);
        for w in 0..windows {
            for (r, &(r0, r1)) in region_rows.iter().enumerate() {
                let c0 = w * d;
                let c1 = ((w + 1) * d).min(model.rounds);
                blocks.push(Block {
                    id: BlockId {
                        region: r as u16,
                        window: w as u32,
                    },
                    kind: if regions > 1 { BlockKind::Spatial } else { BlockKind::Temporal },
                    core_layers: (c0, c1),
                    window_layers: (c0.saturating_sub(b), (c1 + b).min(model.rounds)),
                    core_rows: (r0, r1),
                    window_rows: if regions > 1 {
                        (r0.saturating_sub(b), (r1 + b).min(model.alpha + 1))
                    } else {
                        (r0, r1)
                    },
                    neighbors: Vec::new(),
                });
            }
        }
        let mut plan = BlockPlan {
            model,
            config,
            graphs: (0..blocks.len()).map(|_| OnceLock::new()).collect(),
            blocks,
            regions,
            windows,
            pairs: Vec::new(),
            region_of_local,
            seams: BTreeMap::new(),
            global: OnceLock::new(),
        };
        let mut pairs = BTreeSet::new();
        for basis in [Basis::Z, Basis::X] {
            for s in &model.subgraph(basis).edges {
                if s.b == BOUNDARY {
                    continue;
                }
                let (ba, bb) = (plan.block_of(s.a), plan.block_of(s.b));
                if ba != bb {
                    pairs.insert((ba.min(bb), ba.max(bb)));
                }
            }
        }
        for &(a, b) in &pairs {
            plan.blocks[a].neighbors.push(b);
            plan.blocks[b].neighbors.push(a);
            plan.seams.insert((a, b), OnceLock::new());
        }
        for blk in &mut plan.blocks {
            blk.neighbors.sort_unstable();
        }
        plan.pairs = pairs.into_iter().collect();
        Ok(plan)
    }

    pub fn model(&self) -> &'m DecodingModel {
        self.model
    }

    pub fn index(&self, id: BlockId) -> usize {
        id.window as usize * self.regions + id.region as usize
    }

    /// Block whose core holds global detector `det`.
    pub fn block_of(&self, det: u32) -> usize {
        let l = self.model.layer_size();
        let t = det as usize / l;
        let region = self.region_of_local[det as usize % l] as usize;
        (t / self.config.core_layers) * self.regions + region
    }

    /// Storage slot for a block in a table of `table` slots.
    pub fn slot(id: BlockId, table: usize) -> usize {
        const PRIME: u64 = 1_000_000_007;
        ((id.region as u64 * PRIME + id.window as u64) % table as u64) as usize
    }

    fn in_window(&self, blk: &Block, det: u32) -> bool {
        let l = self.model.layer_size();
        let t = det as usize / l;
        let row = self.model.layer_stabs[det as usize % l].0 .0;
        t >= blk.window_layers.0 && t < blk.window_layers.1 && row >= blk.window_rows.0 && row < blk.window_rows.1
    }

    fn classify(&self, block: usize, a: u32, b: u32) -> EdgeClass {
        let ba = self.block_of(a);
        let bb = if b == BOUNDARY { ba } else { self.block_of(b) };
        if ba == bb {
            return if ba == block { EdgeClass::Commit } else { EdgeClass::Discard };
        }
        if ba == block {
            EdgeClass::Cross {
                neighbor: bb as u32,
                endpoint: a,
            }
        } else if bb == block {
            EdgeClass::Cross {
                neighbor: ba as u32,
                endpoint: b,
            }
        } else {
            EdgeClass::Discard
        }
    }

    /// Builds every block and interface graph up front.
    pub fn prepare(&self) {
        for b in 0..self.blocks.len() {
            self.block_graphs(b);
        }
        for &(a, b) in &self.pairs {
            self.seam_graphs(a, b).expect("pairs are neighbors");
        }
    }

    fn block_graphs(&self, block: usize) -> &BlockGraphs {
        self.graphs[block].get_or_init(|| {
            let blk = &self.blocks[block];
            let l = self.model.layer_size();
            let (t0, t1) = blk.window_layers;
            let mut local = vec![u32::MAX; (t1 - t0) * l];
            let offset = (t0 * l) as u32;
            let basis = [Basis::Z, Basis::X].map(|basis| {
                let nodes: Vec<u32> = (t0 * l..t1 * l)
                    .map(|g| g as u32)
                    .filter(|&g| self.model.detectors[g as usize].basis == basis && self.in_window(blk, g))
                    .collect();
                for (i, &g) in nodes.iter().enumerate() {
                    local[(g - offset) as usize] = i as u32;
                }
                let sub = self.model.subgraph(basis);
                let (graph, _) = MatchingGraph::restricted(sub, &nodes);
                let class = graph
                    .edges
                    .iter()
                    .map(|e| {
                        let s = &sub.edges[e.source as usize];
                        self.classify(block, s.a, s.b)
                    })
                    .collect();
                BasisGraph { graph, nodes, class }
            });
            BlockGraphs { basis, local, offset }
        })
    }

    fn seam_graphs(&self, a: usize, b: usize) -> Result<&SeamGraphs, EngineError> {
        let cell = self.seams.get(&(a, b)).ok_or(EngineError::NotNeighbors(a, b))?;
        Ok(cell.get_or_init(|| {
            let mut local = BTreeMap::new();
            let basis = [Basis::Z, Basis::X].map(|basis| {
                let sub = self.model.subgraph(basis);
                let mut node_set = BTreeSet::new();
                for s in &sub.edges {
                    if s.b == BOUNDARY {
                        continue;
                    }
                    let (ba, bb) = (self.block_of(s.a), self.block_of(s.b));
                    if (ba, bb) == (a, b) || (ba, bb) == (b, a) {
                        node_set.insert(s.a);
                        node_set.insert(s.b);
                    }
                }
                let nodes: Vec<u32> = node_set.into_iter().collect();
                for (i, &g) in nodes.iter().enumerate() {
                    local.insert(g, i as u32);
                }
                // keep only edges fully inside the interface set (plus true boundary)
                let (full, cut) = MatchingGraph::restricted(sub, &nodes);
                let edges: Vec<_> = full
                    .edges
                    .into_iter()
                    .zip(cut)
                    .filter(|(_, is_cut)| !is_cut)
                    .map(|(e, _)| e)
                    .collect();
                let graph = MatchingGraph::new(nodes.len(), edges);
                let class = vec![EdgeClass::Commit; graph.edges.len()];
                BasisGraph { graph, nodes, class }
            });
            SeamGraphs { basis, local }
        }))
    }

    fn global(&self) -> &GlobalDecoder {
        self.global.get_or_init(|| GlobalDecoder::new(self.model))
    }

    /// Defects of `defects` (sorted global ids) that fall in the block's window.
    pub fn window_defects(&self, block: usize, defects: &[u32]) -> Vec<u32> {
        let blk = &self.blocks[block];
        let l = self.model.layer_size();
        let lo = (blk.window_layers.0 * l) as u32;
        let hi = (blk.window_layers.1 * l) as u32;
        let start = defects.partition_point(|&d| d < lo);
        let end = defects.partition_point(|&d| d < hi);
        defects[start..end]
            .iter()
            .copied()
            .filter(|&d| self.in_window(blk, d))
            .collect()
    }

    /// Decodes one block. `defects` are sorted global ids; those outside the
    /// window are ignored.
    pub fn decode_block(&self, block: usize, defects: &[u32], decoder: &dyn Decoder) -> Result<BlockOutput, EngineError> {
        let graphs = self.block_graphs(block);
        let mut parts = [Vec::new(), Vec::new()];
        for d in self.window_defects(block, defects) {
            let loc = graphs.local[(d - graphs.offset) as usize];
            let basis = self.model.detectors[d as usize].basis;
            parts[basis.index()].push(loc);
        }
        let blk = &self.blocks[block];
        let mut seam_bits: BTreeMap<usize, BTreeSet<u32>> = blk.neighbors.iter().map(|&n| (n, BTreeSet::new())).collect();
        let mut logical = 0;
        let mut work = 0;
        for (bg, defs) in graphs.basis.iter().zip(&parts) {
            if defs.is_empty() {
                continue;
            }
            let c = decoder.decode(&bg.graph, defs)?;
            work += (defs.len() + c.edges.len()) as u64;
            for &e in &c.edges {
                match bg.class[e as usize] {
                    EdgeClass::Commit => logical ^= bg.graph.edges[e as usize].mask,
                    EdgeClass::Cross { neighbor, endpoint } => {
                        let set = seam_bits.get_mut(&(neighbor as usize)).expect("neighbor");
                        if !set.insert(endpoint) {
                            set.remove(&endpoint);
                        }
                    }
                    EdgeClass::Discard => {}
                }
            }
        }
        Ok(BlockOutput {
            block,
            logical,
            seams: seam_bits.into_iter().map(|(n, s)| (n, s.into_iter().collect())).collect(),
            work,
        })
    }

    /// Merges the facing seams of neighbors `a` and `b`.
    pub fn merge(
        &self,
        a: usize,
        b: usize,
        seam_a: &[u32],
        seam_b: &[u32],
        fallback: &dyn Decoder,
    ) -> Result<MergeOutput, EngineError> {
        let (lo, hi) = (a.min(b), a.max(b));
        let seams = self.seam_graphs(lo, hi)?;
        let mut target: Vec<u32> = seam_a.iter().chain(seam_b).copied().collect();
        target.sort_unstable();
        if target.windows(2).any(|w| w[0] == w[1]) {
            return Err(EngineError::SeamMismatch(target[0]));
        }
        if target.is_empty() {
            return Ok(MergeOutput::default());
        }
        let mut parts = [Vec::new(), Vec::new()];
        for &d in &target {
            let loc = *seams.local.get(&d).ok_or(EngineError::SeamMismatch(d))?;
            parts[self.model.detectors[d as usize].basis.index()].push(loc);
        }
        let mut out = MergeOutput::default();
        for (bi, (bg, defs)) in seams.basis.iter().zip(&parts).enumerate() {
            if defs.is_empty() {
                continue;
            }
            match decode_seam_2d(&bg.graph, defs) {
                Ok(c) => {
                    out.logical ^= c.logical_flip;
                    out.work += (defs.len() + c.edges.len()) as u64;
                }
                Err(DecodeError::Unmatchable(_)) => {
                    let global = self.global();
                    let basis = Basis::from_index(bi);
                    let globals: Vec<u32> = defs.iter().map(|&l| bg.nodes[l as usize]).collect();
                    let split = global.split(&globals);
                    let c = fallback.decode(global.graph(basis), &split[bi])?;
                    out.logical ^= c.logical_flip;
                    out.work += (defs.len() + c.edges.len()) as u64;
                    out.escalated = true;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(out)
    }

    /// Decodes a whole shot block by block, then merges every neighbor pair.
    pub fn decode_shot(&self, defects: &[u32], decoder: &dyn Decoder) -> Result<ShotDecode, EngineError> {
        let outputs: Vec<BlockOutput> = (0..self.blocks.len())
            .map(|i| self.decode_block(i, defects, decoder))
            .collect::<Result<_, _>>()?;
        let mut frame = LogicalFrame::default();
        let mut escalations = 0;
        let mut work = 0;
        for o in &outputs {
            frame.apply(Contributor::Block(o.block), o.logical);
            work += o.work;
        }
        for &(a, b) in &self.pairs {
            let m = self.merge(
                a,
                b,
                outputs[a].seam_for(b).unwrap_or(&[]),
                outputs[b].seam_for(a).unwrap_or(&[]),
                decoder,
            )?;
            frame.apply(Contributor::Seam(a, b), m.logical);
            escalations += m.escalated as usize;
            work += m.work;
        }
        Ok(ShotDecode {
            logical: frame.bits,
            frame,
            escalations,
            work,
        })
    }

    /// Global detectors of the interface between neighbors `a` and `b`, per basis.
    pub fn seam_nodes(&self, a: usize, b: usize) -> Result<[Vec<u32>; 2], EngineError> {
        let s = self.seam_graphs(a.min(b), a.max(b))?;
        Ok([s.basis[0].nodes.clone(), s.basis[1].nodes.clone()])
    }

    /// Number of nodes and edges in a block's window graph, per basis.
    pub fn window_size(&self, block: usize) -> [(usize, usize); 2] {
        let g = self.block_graphs(block);
        [0, 1].map(|i| (g.basis[i].graph.num_nodes, g.basis[i].graph.edges.len()))
    }
}
