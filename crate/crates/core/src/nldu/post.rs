//! Integer-domain classification of the prediction tensor and the
//! per-detector syndrome update.

use super::{Geometry, Volume};
use crate::code_model::{Channel, TimeBoundary};

const M_BIT: u8 = 1 << 2;
const H_BIT: u8 = 1 << 3;

/// Accepted predictions per anchor cell: Pauli class (0..4 = I, X, Y, Z) in
/// the low two bits, then M and H flags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Compressed {
    /// Absolute round of slice 0.
    pub t0: usize,
    pub nt: usize,
    pub nx: usize,
    pub ny: usize,
    pub cells: Vec<u8>,
}

impl Compressed {
    pub fn new(t0: usize, nt: usize, nx: usize, ny: usize) -> Compressed {
        Compressed {
            t0,
            nt,
            nx,
            ny,
            cells: vec![0; nt * nx * ny],
        }
    }

    #[inline]
    fn at(&self, t: isize, x: isize, y: isize) -> u8 {
        let t = t - self.t0 as isize;
        if t < 0 || x < 0 || y < 0 || t >= self.nt as isize || x >= self.nx as isize || y >= self.ny as isize {
            return 0;
        }
        self.cells[((t as usize) * self.nx + x as usize) * self.ny + y as usize]
    }

    pub fn set(&mut self, t: usize, x: usize, y: usize, v: u8) {
        let i = ((t - self.t0) * self.nx + x) * self.ny + y;
        self.cells[i] = v;
    }

    pub fn pauli(&self, t: usize, x: usize, y: usize) -> u8 {
        self.at(t as isize, x as isize, y as isize) & 3
    }

    /// `[X, Z, M, H]` bits of one cell.
    pub fn bits(&self, t: isize, x: isize, y: isize) -> [bool; 4] {
        let v = self.at(t, x, y);
        let p = v & 3;
        [p == 1 || p == 2, p == 2 || p == 3, v & M_BIT != 0, v & H_BIT != 0]
    }

    pub fn accepted(&self) -> usize {
        self.cells
            .iter()
            .map(|&v| (v & 3 != 0) as usize + (v & M_BIT != 0) as usize + (v & H_BIT != 0) as usize)
            .sum()
    }

    /// Appends the slices of `other`, which must start where `self` ends.
    pub fn extend(&mut self, other: &Compressed) {
        assert_eq!(self.t0 + self.nt, other.t0);
        self.cells.extend_from_slice(&other.cells);
        self.nt += other.nt;
    }

    /// Drops slices before round `t`.
    pub fn drop_before(&mut self, t: usize) {
        if t <= self.t0 {
            return;
        }
        let k = (t - self.t0).min(self.nt);
        self.cells.drain(..k * self.nx * self.ny);
        self.t0 += k;
        self.nt -= k;
    }
}

/// Argmax over the Pauli logits (lowest index wins ties) and strict
/// thresholding of the M and H logits, kept only at mapped anchors.
/// Slice 0 of `pred` is round `t0`.
pub fn classify(pred: &Volume, geom: &Geometry, threshold: i32, t0: usize) -> Compressed {
    classify_at(pred, geom, threshold, t0, (0, 0))
}

/// [`classify`] for a crop whose cell `(0, 0)` sits at `origin`; the result
/// keeps the crop's coordinates.
pub fn classify_at(pred: &Volume, geom: &Geometry, threshold: i32, t0: usize, origin: (usize, usize)) -> Compressed {
    let mut out = Compressed::new(t0, pred.nt, pred.nx, pred.ny);
    const PAULI: [Channel; 4] = [Channel::I, Channel::X, Channel::Y, Channel::Z];
    for t in 0..pred.nt {
        let ta = t0 + t;
        for x in 0..pred.nx {
            for y in 0..pred.ny {
                let (gx, gy) = (x + origin.0, y + origin.1);
                let base = pred.index(t, x, y, 0);
                let logits = &pred.data[base..base + 6];
                let mut best = 0;
                for c in 1..4 {
                    if logits[c] > logits[best] {
                        best = c;
                    }
                }
                let mut v = 0u8;
                if best != 0 && geom.edge_at(ta, gx, gy, PAULI[best]).is_some() {
                    v |= best as u8;
                }
                if logits[4] as i32 > threshold && geom.edge_at(ta, gx, gy, Channel::M).is_some() {
                    v |= M_BIT;
                }
                if logits[5] as i32 > threshold && geom.edge_at(ta, gx, gy, Channel::H).is_some() {
                    v |= H_BIT;
                }
                out.cells[(t * pred.nx + x) * pred.ny + y] = v;
            }
        }
    }
    out
}

/// Whether accepted predictions flip detector `(x, y)` of basis `channel`
/// at round `t`. Each term is one incident prediction: M errors on the two
/// time-adjacent anchors, the two hook anchors that end here, and the Pauli
/// component of the up to four adjacent data qubits.
pub fn detector_flip(geom: &Geometry, comp: &Compressed, t: usize, x: usize, y: usize, channel: usize) -> bool {
    let (t, x, y) = (t as isize, x as isize, y as isize);
    let m_other = match geom.time_boundary {
        TimeBoundary::Closed => t - 1,
        TimeBoundary::Open => t + 1,
    };
    let (sx, sy) = geom.hook_step[channel];
    let mut f = comp.bits(t, x, y)[2] ^ comp.bits(m_other, x, y)[2];
    f ^= comp.bits(t, x, y)[3] ^ comp.bits(t - 1, x - sx as isize, y - sy as isize)[3];
    // Z detectors see the X component and vice versa
    let component = if channel == 0 { 0 } else { 1 };
    for (qx, qy) in [(x - 1, y - 1), (x - 1, y), (x, y - 1), (x, y)] {
        f ^= comp.bits(t, qx, qy)[component];
    }
    f
}

/// Residual layer-local defects of round `t`.
pub fn residual_round(geom: &Geometry, comp: &Compressed, raw: &[u32], t: usize) -> Vec<u32> {
    let mut bits = vec![false; geom.layer_size()];
    for &l in raw {
        bits[l as usize] = true;
    }
    for (l, &(x, y, c)) in geom.det_cell.iter().enumerate() {
        if detector_flip(geom, comp, t, x as usize, y as usize, c as usize) {
            bits[l] = !bits[l];
        }
    }
    bits.iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(l, _)| l as u32)
        .collect()
}

/// Logical effect of the predictions accepted at round `t`.
pub fn round_logical(geom: &Geometry, comp: &Compressed, t: usize) -> u64 {
    region_logical(geom, comp, t, (0, comp.nx), (0, comp.ny))
}

/// Logical effect of the predictions accepted at round `t` on anchors in
/// `xs` x `ys`.
pub fn region_logical(geom: &Geometry, comp: &Compressed, t: usize, xs: (usize, usize), ys: (usize, usize)) -> u64 {
    const PAULI: [Channel; 4] = [Channel::I, Channel::X, Channel::Y, Channel::Z];
    let mut mask = 0;
    for x in xs.0..xs.1 {
        for y in ys.0..ys.1 {
            let v = comp.at(t as isize, x as isize, y as isize);
            let mut add = |c: Channel| {
                if let Some(e) = geom.edge_at(t, x, y, c) {
                    mask ^= geom.edge_masks[e as usize];
                }
            };
            if v & 3 != 0 {
                add(PAULI[(v & 3) as usize]);
            }
            if v & M_BIT != 0 {
                add(Channel::M);
            }
            if v & H_BIT != 0 {
                add(Channel::H);
            }
        }
    }
    mask
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PostResult {
    /// Sorted global residual defects.
    pub residual: Vec<u32>,
    pub logical: u64,
    /// Anchors carrying a prediction.
    pub accepted: usize,
}

/// Applies accepted predictions to the raw defects (sorted global ids) of
/// the rounds covered by `comp`.
pub fn post_process(geom: &Geometry, comp: &Compressed, raw: &[u32]) -> PostResult {
    let l = geom.layer_size();
    let mut out = PostResult {
        accepted: comp.accepted(),
        ..PostResult::default()
    };
    let mut start = 0;
    for t in comp.t0..comp.t0 + comp.nt {
        let hi = ((t + 1) * l) as u32;
        let end = start + raw[start..].partition_point(|&d| d < hi);
        let locals: Vec<u32> = raw[start..end]
            .iter()
            .filter(|&&d| d >= (t * l) as u32)
            .map(|&d| d - (t * l) as u32)
            .collect();
        start = end;
        out.residual
            .extend(residual_round(geom, comp, &locals, t).into_iter().map(|d| (t * l) as u32 + d));
        out.logical ^= round_logical(geom, comp, t);
    }
    out
}
