//! Versioned little-endian "LDEM" model files.
//!
//! Header: magic, version u16, alpha/beta/gamma u32, then detector, edge,
//! virtual and observable counts (u32). Each edge record is
//! `kind u8, pauli u8, prob f64, nodes u32[4], mask u64, anchor u32, channel u8`
//! with the anchor linearized as `t (alpha+1)(beta+1) + x (beta+1) + y`.
//! A trailer carries what is needed to rebuild the model: boundaries, time
//! boundary, measured bases, noise, virtual vertices, observables, regions.

use std::io::{Read, Write};

use super::{
    assemble, Anchor, Basis, BoundaryTypes, Channel, DecodingModel, DemEdge, DetectorId, EdgeKind, Lattice,
    ModelError, ModelSpec, NodeKind, NoiseParams, Observable, Pauli, Region, TimeBoundary,
};

pub const MODEL_MAGIC: &[u8; 4] = b"LDEM";
pub const MODEL_VERSION: u16 = 1;

struct Out<W: Write>(W);

impl<W: Write> Out<W> {
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.0.write_all(b)
    }
    fn u8(&mut self, v: u8) -> std::io::Result<()> {
        self.bytes(&[v])
    }
    fn u16(&mut self, v: u16) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u32(&mut self, v: u32) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }
}

struct In<R: Read>(R);

impl<R: Read> In<R> {
    fn array<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let mut b = [0u8; N];
        self.0
            .read_exact(&mut b)
            .map_err(|e| ModelError::Format(format!("truncated: {e}")))?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.array()?))
    }
}

fn basis_code(b: Basis) -> u8 {
    b.index() as u8
}

fn basis_from(c: u8) -> Result<Basis, ModelError> {
    match c {
        0 => Ok(Basis::Z),
        1 => Ok(Basis::X),
        _ => Err(ModelError::Format(format!("bad basis {c}"))),
    }
}

fn kind_code(k: NodeKind) -> u8 {
    match k {
        NodeKind::Real => 0,
        NodeKind::SpaceBoundary => 1,
        NodeKind::TimeLow => 2,
        NodeKind::TimeHigh => 3,
    }
}

fn kind_from(c: u8) -> Result<NodeKind, ModelError> {
    Ok(match c {
        0 => NodeKind::Real,
        1 => NodeKind::SpaceBoundary,
        2 => NodeKind::TimeLow,
        3 => NodeKind::TimeHigh,
        _ => return Err(ModelError::Format(format!("bad node kind {c}"))),
    })
}

pub fn write_model<W: Write>(model: &DecodingModel, w: W) -> Result<(), ModelError> {
    let mut o = Out(w);
    let (a1, b1) = (model.alpha as u32 + 1, model.beta as u32 + 1);
    o.bytes(MODEL_MAGIC)?;
    o.u16(MODEL_VERSION)?;
    o.u32(model.alpha as u32)?;
    o.u32(model.beta as u32)?;
    o.u32(model.rounds as u32)?;
    o.u32(model.detectors.len() as u32)?;
    o.u32(model.edges.len() as u32)?;
    o.u32(model.virtuals.len() as u32)?;
    o.u32(model.observables.len() as u32)?;
    for e in &model.edges {
        o.u8(e.kind.code())?;
        o.u8(e.pauli.code())?;
        o.f64(e.probability)?;
        for n in e.nodes {
            o.u32(n)?;
        }
        o.u64(e.logical_mask)?;
        let a = &e.anchor;
        o.u32(a.t * a1 * b1 + a.x as u32 * b1 + a.y as u32)?;
        o.u8(a.channel as u8)?;
    }

    let bd = model.lattice.boundaries;
    for side in [bd.top, bd.bottom, bd.left, bd.right] {
        o.u8(basis_code(side))?;
    }
    o.u8(match model.time_boundary {
        TimeBoundary::Closed => 0,
        TimeBoundary::Open => 1,
    })?;
    let mut bases = 0u8;
    for &(_, b) in &model.layer_stabs {
        bases |= 1 << b.index();
    }
    o.u8(bases)?;
    let n = model.noise;
    for p in [n.p_pauli, n.p_meas, n.p_diag, n.p_hook] {
        o.f64(p)?;
    }
    for v in &model.virtuals {
        o.u16(v.patch)?;
        o.u16(v.x)?;
        o.u16(v.y)?;
        o.u32(v.t)?;
        o.u8(basis_code(v.basis))?;
        o.u8(kind_code(v.kind))?;
    }
    for obs in &model.observables {
        o.u32(obs.name.len() as u32)?;
        o.bytes(obs.name.as_bytes())?;
        o.u8(basis_code(obs.basis))?;
        o.u8(obs.first_round_measurements as u8)?;
        o.u32(obs.qubits.len() as u32)?;
        for &(i, j) in &obs.qubits {
            o.u32(i as u32)?;
            o.u32(j as u32)?;
        }
    }
    o.u32(model.regions.len() as u32)?;
    for r in &model.regions {
        o.u16(r.patch)?;
        o.u32(r.row_start as u32)?;
        o.u32(r.row_end as u32)?;
    }
    o.0.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(r: R) -> Result<DecodingModel, ModelError> {
    let mut i = In(r);
    if &i.array::<4>()? != MODEL_MAGIC {
        return Err(ModelError::Format("bad magic".into()));
    }
    let version = i.u16()?;
    if version != MODEL_VERSION {
        return Err(ModelError::Format(format!("unsupported version {version}")));
    }
    let alpha = i.u32()? as usize;
    let beta = i.u32()? as usize;
    let rounds = i.u32()? as usize;
    let n_det = i.u32()? as usize;
    let n_edges = i.u32()? as usize;
    let n_virt = i.u32()? as usize;
    let n_obs = i.u32()? as usize;
    let (a1, b1) = (alpha as u32 + 1, beta as u32 + 1);

    let mut edges = Vec::with_capacity(n_edges.min(1 << 24));
    for id in 0..n_edges {
        let kind = i.u8()?;
        let kind = EdgeKind::from_code(kind).ok_or_else(|| ModelError::Format(format!("bad edge kind {kind}")))?;
        let pauli = i.u8()?;
        let pauli = Pauli::from_code(pauli).ok_or_else(|| ModelError::Format(format!("bad pauli {pauli}")))?;
        let probability = i.f64()?;
        let mut nodes = [0u32; 4];
        for n in &mut nodes {
            *n = i.u32()?;
        }
        let logical_mask = i.u64()?;
        let lin = i.u32()?;
        let ch = i.u8()?;
        let channel = Channel::from_code(ch).ok_or_else(|| ModelError::Format(format!("bad channel {ch}")))?;
        edges.push(DemEdge {
            id: id as u32,
            kind,
            pauli,
            probability,
            nodes,
            logical_mask,
            anchor: Anchor {
                x: (lin % (a1 * b1) / b1) as u16,
                y: (lin % b1) as u16,
                t: lin / (a1 * b1),
                channel,
            },
        });
    }

    let sides: Vec<Basis> = (0..4).map(|_| basis_from(i.u8()?)).collect::<Result<_, _>>()?;
    let boundaries = BoundaryTypes {
        top: sides[0],
        bottom: sides[1],
        left: sides[2],
        right: sides[3],
    };
    let time_boundary = match i.u8()? {
        0 => TimeBoundary::Closed,
        1 => TimeBoundary::Open,
        c => return Err(ModelError::Format(format!("bad time boundary {c}"))),
    };
    let bases_bits = i.u8()?;
    let noise = NoiseParams {
        p_pauli: i.f64()?,
        p_meas: i.f64()?,
        p_diag: i.f64()?,
        p_hook: i.f64()?,
    };
    let mut virtuals = Vec::with_capacity(n_virt.min(1 << 24));
    for _ in 0..n_virt {
        virtuals.push(DetectorId {
            patch: i.u16()?,
            x: i.u16()?,
            y: i.u16()?,
            t: i.u32()?,
            basis: basis_from(i.u8()?)?,
            kind: kind_from(i.u8()?)?,
        });
    }
    let mut observables = Vec::with_capacity(n_obs.min(64));
    for _ in 0..n_obs {
        let len = i.u32()? as usize;
        let mut name = vec![0u8; len.min(1 << 16)];
        i.0.read_exact(&mut name)
            .map_err(|e| ModelError::Format(format!("truncated: {e}")))?;
        let basis = basis_from(i.u8()?)?;
        let first_round_measurements = i.u8()? != 0;
        let nq = i.u32()? as usize;
        let mut qubits = Vec::with_capacity(nq.min(1 << 20));
        for _ in 0..nq {
            qubits.push((i.u32()? as usize, i.u32()? as usize));
        }
        observables.push(Observable {
            name: String::from_utf8(name).map_err(|_| ModelError::Format("observable name".into()))?,
            basis,
            qubits,
            first_round_measurements,
        });
    }
    let n_regions = i.u32()? as usize;
    let mut regions = Vec::with_capacity(n_regions.min(1 << 16));
    for _ in 0..n_regions {
        regions.push(Region {
            patch: i.u16()?,
            row_start: i.u32()? as usize,
            row_end: i.u32()? as usize,
        });
    }

    let spec = ModelSpec {
        lattice: Lattice::new(alpha, beta, boundaries)?,
        observables,
        regions,
        bases: [bases_bits & 1 != 0, bases_bits & 2 != 0],
        time_boundary,
    };
    let model = assemble(spec, rounds, virtuals, edges, noise);
    if model.detectors.len() != n_det {
        return Err(ModelError::Format(format!(
            "detector count {} does not match header {n_det}",
            model.detectors.len()
        )));
    }
    for e in &model.edges {
        for n in e.node_refs() {
            let ok = if n & super::VIRTUAL_FLAG != 0 {
                ((n & !super::VIRTUAL_FLAG) as usize) < model.virtuals.len()
            } else {
                (n as usize) < model.detectors.len()
            };
            if !ok {
                return Err(ModelError::Format(format!("edge {} references unknown node {n}", e.id)));
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code_model::{build_dem, build_stability_model, build_surface_code};

    #[test]
    fn round_trip() {
        let m = build_dem(&build_surface_code(5).unwrap(), 4, NoiseParams::uniform(0.003)).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        assert_eq!(&buf[..4], MODEL_MAGIC);
        let r = read_model(&buf[..]).unwrap();
        assert_eq!(r.edges, m.edges);
        assert_eq!(r.detectors, m.detectors);
        assert_eq!(r.virtuals, m.virtuals);
        assert_eq!(r.observables, m.observables);
        assert_eq!(r.z_subgraph.edges, m.z_subgraph.edges);
    }

    #[test]
    fn round_trip_stability() {
        let m = build_stability_model(4, 5, NoiseParams::uniform(0.003)).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        let r = read_model(&buf[..]).unwrap();
        assert_eq!(r.edges, m.edges);
        assert_eq!(r.layer_stabs, m.layer_stabs);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_model(&b"LDEX\x01\x00"[..]).is_err());
        let m = build_dem(&build_surface_code(3).unwrap(), 2, NoiseParams::uniform(0.003)).unwrap();
        let mut buf = Vec::new();
        write_model(&m, &mut buf).unwrap();
        buf.truncate(buf.len() / 2);
        assert!(read_model(&buf[..]).is_err());
    }
}
