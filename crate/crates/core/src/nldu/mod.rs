//! Emulated neural local decoding unit: syndrome embedding, INT8 streaming
//! inference, integer-domain classification, per-detector syndrome update,
//! multi-board halo exchange and the hardware cost model.

mod board;
mod dataset;
mod hw;
mod infer;
mod post;
mod quant;
mod stream;

use thiserror::Error;

use crate::code_model::{Basis, Channel, DecodingModel, EdgeKind, NodeKind, TimeBoundary};

pub use board::{gather_inputs, gather_predictions, halo_cells, run_boards, BoardReport, BoardTiling, INPUT_HALO, OUTPUT_HALO};
pub use dataset::{export_dataset, read_dataset, shot_labels, DatasetHeader, Labels, Sample, DATASET_MAGIC};
pub use hw::{estimate_resources, search_config, stage_latency_s, NlduConfig, ResourceEstimate, PIPELINE_DELAY_S};
pub use infer::{infer_batch, StreamInference};
pub use post::{
    classify, classify_at, detector_flip, post_process, region_logical, residual_round, round_logical, Compressed, PostResult,
};
pub use quant::{QuantLayer, QuantizedModel, Requant, WEIGHTS_MAGIC};
pub use stream::{predecode, NlduPredecoder, PredecodeStats};

#[derive(Debug, Error)]
pub enum NlduError {
    #[error("coordinate {0:?} outside the tensor")]
    Coordinate((usize, usize, usize)),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("weights format: {0}")]
    Format(String),
    #[error("dataset format: {0}")]
    Dataset(String),
    #[error("invalid hardware configuration: {0}")]
    Config(String),
    #[error("no configuration meets a stage budget of {0} s")]
    Infeasible(f64),
    #[error("missing halo data from board {0}")]
    MissingHalo(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense `(t, x, y, c)` volume of small unsigned integers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Volume {
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    pub nc: usize,
    pub data: Vec<u8>,
}

impl Volume {
    pub fn new(nt: usize, nx: usize, ny: usize, nc: usize) -> Volume {
        Volume {
            nt,
            nx,
            ny,
            nc,
            data: vec![0; nt * nx * ny * nc],
        }
    }

    pub fn filled(nt: usize, nx: usize, ny: usize, nc: usize, value: u8) -> Volume {
        Volume {
            data: vec![value; nt * nx * ny * nc],
            ..Volume::new(nt, nx, ny, nc)
        }
    }

    #[inline]
    pub fn index(&self, t: usize, x: usize, y: usize, c: usize) -> usize {
        ((t * self.nx + x) * self.ny + y) * self.nc + c
    }

    #[inline]
    pub fn get(&self, t: usize, x: usize, y: usize, c: usize) -> u8 {
        self.data[self.index(t, x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, t: usize, x: usize, y: usize, c: usize, v: u8) {
        let i = self.index(t, x, y, c);
        self.data[i] = v;
    }

    pub fn slice_len(&self) -> usize {
        self.nx * self.ny * self.nc
    }

    /// Time slice `t` as a flat `(x, y, c)` array.
    pub fn slice(&self, t: usize) -> &[u8] {
        let n = self.slice_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Sub-volume `[x0, x1) x [y0, y1)` over all times.
    pub fn crop(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> Volume {
        let mut out = Volume::new(self.nt, x1 - x0, y1 - y0, self.nc);
        for t in 0..self.nt {
            for x in x0..x1 {
                let src = self.index(t, x, y0, 0);
                let dst = out.index(t, x - x0, 0, 0);
                let n = (y1 - y0) * self.nc;
                out.data[dst..dst + n].copy_from_slice(&self.data[src..src + n]);
            }
        }
        out
    }
}

/// `(alpha+1, beta+1, gamma, 2)` input: 1 = defect, 2 = boundary vertex.
pub type SyndromeTensor = Volume;
/// `(alpha+1, beta+1, gamma, 6)` output logits in the quantized domain.
pub type PredictionTensor = Volume;

pub const NO_EDGE: u32 = u32::MAX;
const NO_LOCAL: u32 = u32::MAX;

/// Fixed mapping between a model and the NLDU tensor spaces.
#[derive(Clone, Debug)]
pub struct Geometry {
    pub nx: usize,
    pub ny: usize,
    pub rounds: usize,
    pub time_boundary: TimeBoundary,
    /// Layer-local detector -> `(x, y, channel)`.
    pub det_cell: Vec<(u16, u16, u8)>,
    /// `(x * ny + y) * 2 + channel` -> layer-local detector.
    cell_det: Vec<u32>,
    /// Spatial boundary vertices `(x, y, channel)`.
    pub boundary: Vec<(u16, u16, u8)>,
    /// `((t * nx + x) * ny + y) * 6 + channel` -> DEM edge, `NO_EDGE` if the
    /// anchor is not mapped.
    anchor_edge: Vec<u32>,
    /// Hook displacement per basis channel.
    pub hook_step: [(usize, usize); 2],
    /// Logical mask of every DEM edge.
    pub edge_masks: Vec<u64>,
    layer_size: usize,
}

impl Geometry {
    pub fn new(model: &DecodingModel) -> Geometry {
        let nx = model.lattice.rows + 1;
        let ny = model.lattice.cols + 1;
        let mut cell_det = vec![NO_LOCAL; nx * ny * 2];
        let det_cell: Vec<(u16, u16, u8)> = model
            .layer_stabs
            .iter()
            .enumerate()
            .map(|(l, &((x, y), b))| {
                cell_det[(x * ny + y) * 2 + b.index()] = l as u32;
                (x as u16, y as u16, b.index() as u8)
            })
            .collect();
        let mut boundary: Vec<(u16, u16, u8)> = model
            .virtuals
            .iter()
            .filter(|v| v.kind == NodeKind::SpaceBoundary)
            .map(|v| (v.x, v.y, v.basis.index() as u8))
            .collect();
        boundary.sort_unstable();
        boundary.dedup();
        let mut anchor_edge = vec![NO_EDGE; model.rounds * nx * ny * 6];
        for e in &model.edges {
            if e.kind == EdgeKind::D {
                continue;
            }
            let a = e.anchor;
            if (a.t as usize) < model.rounds {
                anchor_edge[((a.t as usize * nx + a.x as usize) * ny + a.y as usize) * 6 + a.channel as usize] = e.id;
            }
        }
        Geometry {
            nx,
            ny,
            rounds: model.rounds,
            time_boundary: model.time_boundary,
            det_cell,
            cell_det,
            boundary,
            anchor_edge,
            hook_step: [(0, 2), (2, 0)],
            edge_masks: model.edges.iter().map(|e| e.logical_mask).collect(),
            layer_size: model.layer_size(),
        }
    }

    pub fn layer_size(&self) -> usize {
        self.layer_size
    }

    /// Layer-local detector at a cell of a basis channel.
    pub fn detector_at(&self, x: usize, y: usize, channel: usize) -> Option<u32> {
        if x >= self.nx || y >= self.ny {
            return None;
        }
        let l = self.cell_det[(x * self.ny + y) * 2 + channel];
        (l != NO_LOCAL).then_some(l)
    }

    /// DEM edge mapped to an anchor.
    pub fn edge_at(&self, t: usize, x: usize, y: usize, channel: Channel) -> Option<u32> {
        if t >= self.rounds || x >= self.nx || y >= self.ny {
            return None;
        }
        let e = self.anchor_edge[((t * self.nx + x) * self.ny + y) * 6 + channel as usize];
        (e != NO_EDGE).then_some(e)
    }

    /// Slice of one round with boundary vertices only.
    pub fn empty_slice(&self) -> Vec<u8> {
        let mut s = vec![0u8; self.nx * self.ny * 2];
        for &(x, y, c) in &self.boundary {
            s[(x as usize * self.ny + y as usize) * 2 + c as usize] = 2;
        }
        s
    }

    /// One round's slice from sorted layer-local defects.
    pub fn embed_round(&self, locals: &[u32]) -> Result<Vec<u8>, NlduError> {
        let mut s = self.empty_slice();
        for &l in locals {
            let &(x, y, c) = self
                .det_cell
                .get(l as usize)
                .ok_or(NlduError::Coordinate((l as usize, 0, 0)))?;
            s[(x as usize * self.ny + y as usize) * 2 + c as usize] = 1;
        }
        Ok(s)
    }

    /// Embeds rounds `[t0, t1)` of sorted global defects.
    pub fn embed(&self, defects: &[u32], t0: usize, t1: usize) -> Result<SyndromeTensor, NlduError> {
        let mut v = Volume::new(t1 - t0, self.nx, self.ny, 2);
        let empty = self.empty_slice();
        let n = empty.len();
        for t in 0..t1 - t0 {
            v.data[t * n..(t + 1) * n].copy_from_slice(&empty);
        }
        let l = self.layer_size;
        for &d in defects {
            let (t, loc) = (d as usize / l, d as usize % l);
            if t < t0 || t >= t1 {
                continue;
            }
            let (x, y, c) = self.det_cell[loc];
            v.set(t - t0, x as usize, y as usize, c as usize, 1);
        }
        Ok(v)
    }

    /// Places defect cells given by coordinates; errors outside the grid or
    /// at cells without a detector of that basis.
    pub fn embed_cells(&self, nt: usize, cells: &[(usize, usize, usize, Basis)]) -> Result<SyndromeTensor, NlduError> {
        let mut v = self.embed(&[], 0, nt)?;
        for &(t, x, y, b) in cells {
            if t >= nt || self.detector_at(x, y, b.index()).is_none() {
                return Err(NlduError::Coordinate((x, y, t)));
            }
            v.set(t, x, y, b.index(), 1);
        }
        Ok(v)
    }

    /// Inverse of [`Geometry::embed`]: sorted global defects of the volume,
    /// whose slice 0 is round `t0`.
    pub fn extract(&self, v: &SyndromeTensor, t0: usize) -> Vec<u32> {
        let mut out = Vec::new();
        for t in 0..v.nt {
            for loc in self.extract_round(v.slice(t)) {
                out.push(((t0 + t) * self.layer_size) as u32 + loc);
            }
        }
        out.sort_unstable();
        out
    }

    /// Sorted layer-local defects of one slice.
    pub fn extract_round(&self, slice: &[u8]) -> Vec<u32> {
        let mut out: Vec<u32> = self
            .det_cell
            .iter()
            .enumerate()
            .filter(|(_, &(x, y, c))| slice[(x as usize * self.ny + y as usize) * 2 + c as usize] == 1)
            .map(|(l, _)| l as u32)
            .collect();
        out.sort_unstable();
        out
    }
}
