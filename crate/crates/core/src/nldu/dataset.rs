//! Training labels derived from sampled shots and the LNDS dataset file
//! read by the trainer.
//!
//! Layout, little-endian:
//! `"LNDS"`, version u8, nx u16, ny u16, window u16, time boundary u8
//! (0 closed, 1 open), count u32, boundary count u32 then `(x u16, y u16,
//! channel u8)` each, the anchor mask `u8[window][nx][ny]` (bit c set when
//! channel c has a mapped edge), then per sample: defect count u32 and
//! `(x u16, y u16, t u16, channel u8)` each, label count u32 and
//! `(x u16, y u16, t u16, class u8)` each with class 1..=5 for X, Y, Z, M, H.

use std::io::{Read, Write};

use rayon::prelude::*;

use super::post::Compressed;
use super::{Geometry, NlduError};
use crate::code_model::{Channel, DecodingModel, EdgeKind, TimeBoundary};
use crate::sampler::{shot_seed, Shot, ShotSampler};

pub const DATASET_MAGIC: &[u8; 4] = b"LNDS";
const VERSION: u8 = 1;

/// Per-anchor targets: the same packing as accepted predictions.
pub type Labels = Compressed;

/// Decomposes the sampled edges of a shot onto prediction anchors. Each
/// diagonal edge becomes its data-qubit component plus a measurement error
/// on its later stabilizer, which reproduces its syndrome and logical mask.
pub fn shot_labels(model: &DecodingModel, geom: &Geometry, shot: &Shot) -> Labels {
    // [X, Z, M, H] per cell
    let mut bits = vec![[false; 4]; geom.rounds * geom.nx * geom.ny];
    let cell = |t: usize, x: usize, y: usize| (t * geom.nx + x) * geom.ny + y;
    let open = model.time_boundary == TimeBoundary::Open;
    for &id in &shot.flipped_edges {
        let e = &model.edges[id as usize];
        let a = e.anchor;
        let (t, x, y) = (a.t as usize, a.x as usize, a.y as usize);
        if t >= geom.rounds {
            // top time boundary of an open model: no anchor inside the volume
            continue;
        }
        match e.kind {
            EdgeKind::H | EdgeKind::D => {
                let c = cell(t, x, y);
                match a.channel {
                    Channel::X => bits[c][0] ^= true,
                    Channel::Z => bits[c][1] ^= true,
                    Channel::Y => {
                        bits[c][0] ^= true;
                        bits[c][1] ^= true;
                    }
                    _ => unreachable!("data anchor on {:?}", a.channel),
                }
                if e.kind == EdgeKind::D {
                    let later = model.node(e.nodes[1]);
                    let tm = if open { t + 1 } else { t };
                    bits[cell(tm, later.x as usize, later.y as usize)][2] ^= true;
                }
            }
            EdgeKind::V => bits[cell(t, x, y)][2] ^= true,
            EdgeKind::Hook => bits[cell(t, x, y)][3] ^= true,
        }
    }
    let mut out = Compressed::new(0, geom.rounds, geom.nx, geom.ny);
    for (v, b) in out.cells.iter_mut().zip(&bits) {
        *v = match (b[0], b[1]) {
            (false, false) => 0,
            (true, false) => 1,
            (true, true) => 2,
            (false, true) => 3,
        } | (b[2] as u8) << 2
            | (b[3] as u8) << 3;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetHeader {
    pub nx: usize,
    pub ny: usize,
    pub window: usize,
    pub time_boundary: TimeBoundary,
    pub count: usize,
    pub boundary: Vec<(u16, u16, u8)>,
    /// `[t][x][y]` bitmask of channels with a mapped edge.
    pub anchors: Vec<u8>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sample {
    /// `(x, y, t, channel)`.
    pub defects: Vec<(u16, u16, u16, u8)>,
    /// `(x, y, t, class)`, class 1..=5 for X, Y, Z, M, H.
    pub labels: Vec<(u16, u16, u16, u8)>,
}

impl Sample {
    pub fn from_shot(model: &DecodingModel, geom: &Geometry, shot: &Shot) -> Sample {
        let l = geom.layer_size();
        let defects = shot
            .defects()
            .into_iter()
            .map(|d| {
                let (t, loc) = (d as usize / l, d as usize % l);
                let (x, y, c) = geom.det_cell[loc];
                (x, y, t as u16, c)
            })
            .collect();
        let lab = shot_labels(model, geom, shot);
        let mut labels = Vec::new();
        for t in 0..lab.nt {
            for x in 0..lab.nx {
                for y in 0..lab.ny {
                    let v = lab.cells[(t * lab.nx + x) * lab.ny + y];
                    let key = (x as u16, y as u16, t as u16);
                    if v & 3 != 0 {
                        labels.push((key.0, key.1, key.2, v & 3));
                    }
                    if v & 4 != 0 {
                        labels.push((key.0, key.1, key.2, 4));
                    }
                    if v & 8 != 0 {
                        labels.push((key.0, key.1, key.2, 5));
                    }
                }
            }
        }
        Sample { defects, labels }
    }
}

fn header_of(model: &DecodingModel, geom: &Geometry, count: usize) -> DatasetHeader {
    let mut anchors = vec![0u8; geom.rounds * geom.nx * geom.ny];
    for t in 0..geom.rounds {
        for x in 0..geom.nx {
            for y in 0..geom.ny {
                for c in Channel::ALL {
                    if geom.edge_at(t, x, y, c).is_some() {
                        anchors[(t * geom.nx + x) * geom.ny + y] |= 1 << c as u8;
                    }
                }
            }
        }
    }
    DatasetHeader {
        nx: geom.nx,
        ny: geom.ny,
        window: geom.rounds,
        time_boundary: model.time_boundary,
        count,
        boundary: geom.boundary.clone(),
        anchors,
    }
}

fn put16(buf: &mut Vec<u8>, v: usize) -> Result<(), NlduError> {
    let v = u16::try_from(v).map_err(|_| NlduError::Dataset(format!("{v} exceeds u16")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put32(buf: &mut Vec<u8>, v: usize) -> Result<(), NlduError> {
    let v = u32::try_from(v).map_err(|_| NlduError::Dataset(format!("{v} exceeds u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn write_records(buf: &mut Vec<u8>, recs: &[(u16, u16, u16, u8)]) -> Result<(), NlduError> {
    put32(buf, recs.len())?;
    for &(x, y, t, c) in recs {
        buf.extend_from_slice(&x.to_le_bytes());
        buf.extend_from_slice(&y.to_le_bytes());
        buf.extend_from_slice(&t.to_le_bytes());
        buf.push(c);
    }
    Ok(())
}

/// Samples `count` shots of `model` (shot `i` uses `shot_seed(seed, i)`)
/// and writes them as an LNDS file.
pub fn export_dataset<W: Write>(
    model: &DecodingModel,
    count: usize,
    seed: u64,
    mut w: W,
) -> Result<DatasetHeader, NlduError> {
    let geom = Geometry::new(model);
    let header = header_of(model, &geom, count);
    let mut buf = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.push(VERSION);
    put16(&mut buf, header.nx)?;
    put16(&mut buf, header.ny)?;
    put16(&mut buf, header.window)?;
    buf.push((header.time_boundary == TimeBoundary::Open) as u8);
    put32(&mut buf, count)?;
    put32(&mut buf, header.boundary.len())?;
    for &(x, y, c) in &header.boundary {
        buf.extend_from_slice(&x.to_le_bytes());
        buf.extend_from_slice(&y.to_le_bytes());
        buf.push(c);
    }
    buf.extend_from_slice(&header.anchors);
    w.write_all(&buf)?;

    let sampler = ShotSampler::new(model);
    const CHUNK: usize = 4096;
    for start in (0..count).step_by(CHUNK) {
        let samples: Vec<Sample> = (start..(start + CHUNK).min(count))
            .into_par_iter()
            .map(|i| Sample::from_shot(model, &geom, &sampler.sample(shot_seed(seed, i as u64))))
            .collect();
        buf.clear();
        for s in &samples {
            write_records(&mut buf, &s.defects)?;
            write_records(&mut buf, &s.labels)?;
        }
        w.write_all(&buf)?;
    }
    Ok(header)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NlduError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| NlduError::Dataset(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, NlduError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, NlduError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn records(&mut self) -> Result<Vec<(u16, u16, u16, u8)>, NlduError> {
        let n = self.u32()? as usize;
        (0..n)
            .map(|_| Ok((self.u16()?, self.u16()?, self.u16()?, self.take(1)?[0])))
            .collect()
    }
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<(DatasetHeader, Vec<Sample>), NlduError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != DATASET_MAGIC {
        return Err(NlduError::Dataset("bad magic".into()));
    }
    let version = c.take(1)?[0];
    if version != VERSION {
        return Err(NlduError::Dataset(format!("version {version}")));
    }
    let nx = c.u16()? as usize;
    let ny = c.u16()? as usize;
    let window = c.u16()? as usize;
    let time_boundary = match c.take(1)?[0] {
        0 => TimeBoundary::Closed,
        1 => TimeBoundary::Open,
        v => return Err(NlduError::Dataset(format!("time boundary {v}"))),
    };
    let count = c.u32()? as usize;
    let nb = c.u32()? as usize;
    let boundary = (0..nb)
        .map(|_| Ok((c.u16()?, c.u16()?, c.take(1)?[0])))
        .collect::<Result<Vec<_>, NlduError>>()?;
    let anchors = c.take(window * nx * ny)?.to_vec();
    let samples = (0..count)
        .map(|_| {
            Ok(Sample {
                defects: c.records()?,
                labels: c.records()?,
            })
        })
        .collect::<Result<Vec<_>, NlduError>>()?;
    if c.pos != bytes.len() {
        return Err(NlduError::Dataset(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok((
        DatasetHeader {
            nx,
            ny,
            window,
            time_boundary,
            count,
            boundary,
            anchors,
        },
        samples,
    ))
}
