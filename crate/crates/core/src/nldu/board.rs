//! Emulated multi-board NLDU: each board owns an N x N tile of cells,
//! receives a 3-cell border of raw syndrome from its neighbours before
//! inference and a 2-cell border of accepted predictions after it.

use rayon::prelude::*;

use super::infer::infer_batch;
use super::post::{classify_at, detector_flip, region_logical, Compressed};
use super::quant::QuantizedModel;
use super::{Geometry, NlduError, SyndromeTensor, Volume};

/// Input halo: the spatial radius of the network.
pub const INPUT_HALO: usize = 3;
/// Prediction halo read by the syndrome update (hook diagonal of 2).
pub const OUTPUT_HALO: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoardTiling {
    pub n: usize,
    pub nx: usize,
    pub ny: usize,
}

impl BoardTiling {
    pub fn new(n: usize, nx: usize, ny: usize) -> Result<BoardTiling, NlduError> {
        if n == 0 {
            return Err(NlduError::Config("board extent 0".into()));
        }
        Ok(BoardTiling { n, nx, ny })
    }

    /// Boards along x and y.
    pub fn grid(&self) -> (usize, usize) {
        (self.nx.div_ceil(self.n), self.ny.div_ceil(self.n))
    }

    pub fn len(&self) -> usize {
        let (a, b) = self.grid();
        a * b
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Owned cells `([x0, x1), [y0, y1))` of board `b`.
    pub fn region(&self, b: usize) -> ((usize, usize), (usize, usize)) {
        let (_, gy) = self.grid();
        let (i, j) = (b / gy, b % gy);
        (
            (i * self.n, ((i + 1) * self.n).min(self.nx)),
            (j * self.n, ((j + 1) * self.n).min(self.ny)),
        )
    }

    /// Region of board `b` grown by `w` cells, clipped to the patch.
    pub fn extended(&self, b: usize, w: usize) -> ((usize, usize), (usize, usize)) {
        let ((x0, x1), (y0, y1)) = self.region(b);
        (
            (x0.saturating_sub(w), (x1 + w).min(self.nx)),
            (y0.saturating_sub(w), (y1 + w).min(self.ny)),
        )
    }
}

/// Cells an interior board receives from one side neighbour.
pub fn halo_cells(n: usize) -> usize {
    INPUT_HALO * n
}

fn overlap(a: (usize, usize), b: (usize, usize)) -> Option<(usize, usize)> {
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    (lo < hi).then_some((lo, hi))
}

/// Assembles the input crop of board `b` from every board's own tile.
/// Returns the crop and the number of cells per slice taken from others.
pub fn gather_inputs(
    tiling: &BoardTiling,
    tiles: &[Option<Volume>],
    b: usize,
) -> Result<(Volume, usize), NlduError> {
    let (xs, ys) = tiling.extended(b, INPUT_HALO);
    let own = tiles[b].as_ref().ok_or(NlduError::MissingHalo(b))?;
    let mut crop = Volume::new(own.nt, xs.1 - xs.0, ys.1 - ys.0, own.nc);
    let mut received = 0;
    for (o, tile) in tiles.iter().enumerate() {
        let (oxs, oys) = tiling.region(o);
        let (Some(ix), Some(iy)) = (overlap(xs, oxs), overlap(ys, oys)) else {
            continue;
        };
        let tile = tile.as_ref().ok_or(NlduError::MissingHalo(o))?;
        if o != b {
            received += (ix.1 - ix.0) * (iy.1 - iy.0);
        }
        for t in 0..crop.nt {
            for x in ix.0..ix.1 {
                let src = tile.index(t, x - oxs.0, iy.0 - oys.0, 0);
                let dst = crop.index(t, x - xs.0, iy.0 - ys.0, 0);
                let len = (iy.1 - iy.0) * crop.nc;
                crop.data[dst..dst + len].copy_from_slice(&tile.data[src..src + len]);
            }
        }
    }
    Ok((crop, received))
}

/// Patch-sized view of the predictions board `b` can see after the
/// exchange: its own tile plus the output halo of its neighbours.
pub fn gather_predictions(
    tiling: &BoardTiling,
    own: &[Option<Compressed>],
    b: usize,
) -> Result<(Compressed, usize), NlduError> {
    let (xs, ys) = tiling.extended(b, OUTPUT_HALO);
    let first = own[b].as_ref().ok_or(NlduError::MissingHalo(b))?;
    let mut view = Compressed::new(first.t0, first.nt, tiling.nx, tiling.ny);
    let mut received = 0;
    for (o, tile) in own.iter().enumerate() {
        let (oxs, oys) = tiling.region(o);
        let (Some(ix), Some(iy)) = (overlap(xs, oxs), overlap(ys, oys)) else {
            continue;
        };
        let tile = tile.as_ref().ok_or(NlduError::MissingHalo(o))?;
        if o != b {
            received += (ix.1 - ix.0) * (iy.1 - iy.0);
        }
        for t in 0..tile.nt {
            for x in ix.0..ix.1 {
                for y in iy.0..iy.1 {
                    let v = tile.cells[(t * tile.nx + x - oxs.0) * tile.ny + y - oys.0];
                    view.set(tile.t0 + t, x, y, v);
                }
            }
        }
    }
    Ok((view, received))
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BoardReport {
    /// Sorted global residual defects over the union of the boards.
    pub residual: Vec<u32>,
    pub logical: u64,
    /// Raw-syndrome cells per round received across all boards.
    pub input_halo_cells: usize,
    /// Prediction cells per round received across all boards.
    pub output_halo_cells: usize,
}

/// Runs the boards of `tiling` over the window `input` (slice 0 = round
/// `t0`), with one barrier per exchange phase.
pub fn run_boards(
    model: &QuantizedModel,
    geom: &Geometry,
    tiling: &BoardTiling,
    input: &SyndromeTensor,
    t0: usize,
) -> Result<BoardReport, NlduError> {
    if (tiling.nx, tiling.ny) != (geom.nx, geom.ny) || (input.nx, input.ny) != (geom.nx, geom.ny) {
        return Err(NlduError::Shape("tiling does not cover the patch".into()));
    }
    let threshold = model.threshold();
    let n = tiling.len();
    let tiles: Vec<Option<Volume>> = (0..n)
        .map(|b| {
            let ((x0, x1), (y0, y1)) = tiling.region(b);
            Some(input.crop(x0, x1, y0, y1))
        })
        .collect();

    let own: Vec<(Compressed, usize)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let (crop, received) = gather_inputs(tiling, &tiles, b)?;
            let pred = infer_batch(model, &crop)?;
            let (xs, ys) = tiling.extended(b, INPUT_HALO);
            let full = classify_at(&pred, geom, threshold, t0, (xs.0, ys.0));
            let ((x0, x1), (y0, y1)) = tiling.region(b);
            let mut mine = Compressed::new(t0, input.nt, x1 - x0, y1 - y0);
            for t in 0..input.nt {
                for x in x0..x1 {
                    for y in y0..y1 {
                        let v = full.cells[(t * full.nx + x - xs.0) * full.ny + y - ys.0];
                        mine.cells[(t * mine.nx + x - x0) * mine.ny + y - y0] = v;
                    }
                }
            }
            Ok((mine, received))
        })
        .collect::<Result<_, NlduError>>()?;
    let input_halo_cells = own.iter().map(|(_, r)| r).sum();
    let own: Vec<Option<Compressed>> = own.into_iter().map(|(c, _)| Some(c)).collect();

    let l = geom.layer_size();
    let parts: Vec<(Vec<u32>, u64, usize)> = (0..n)
        .into_par_iter()
        .map(|b| {
            let (view, received) = gather_predictions(tiling, &own, b)?;
            let (xs, ys) = tiling.region(b);
            let mut residual = Vec::new();
            let mut logical = 0;
            for t in t0..t0 + input.nt {
                let slice = input.slice(t - t0);
                for (loc, &(x, y, c)) in geom.det_cell.iter().enumerate() {
                    let (x, y, c) = (x as usize, y as usize, c as usize);
                    if !(xs.0..xs.1).contains(&x) || !(ys.0..ys.1).contains(&y) {
                        continue;
                    }
                    let raw = slice[(x * geom.ny + y) * 2 + c] == 1;
                    if raw ^ detector_flip(geom, &view, t, x, y, c) {
                        residual.push((t * l + loc) as u32);
                    }
                }
                logical ^= region_logical(geom, &view, t, xs, ys);
            }
            Ok((residual, logical, received))
        })
        .collect::<Result<_, NlduError>>()?;

    let mut report = BoardReport {
        input_halo_cells,
        ..BoardReport::default()
    };
    for (r, lg, received) in parts {
        report.residual.extend(r);
        report.logical ^= lg;
        report.output_halo_cells += received;
    }
    report.residual.sort_unstable();
    Ok(report)
}
