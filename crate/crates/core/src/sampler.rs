//! Shot sampling and real-time-paced syndrome streaming.

use std::io::{Read, Write};
use std::time::{Duration, Instant};

use crossbeam_channel::Sender;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::code_model::DecodingModel;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("backlog fault at round {round}: {buffered} rounds buffered (high-water mark {high_water})")]
    Backlog { round: u32, buffered: usize, high_water: usize },
    #[error("consumer disconnected")]
    Disconnected,
    #[error("malformed round packet: {0}")]
    Format(String),
    #[error("invalid stream config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// SplitMix64 finalizer, used to derive independent per-shot seeds.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of shot `index` in a run seeded with `seed`.
pub fn shot_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shot {
    /// Sorted edge ids.
    pub flipped_edges: Vec<u32>,
    /// One bit per real detector.
    pub detector_bits: Vec<u64>,
    pub true_logical: u64,
}

impl Shot {
    pub fn from_edges(model: &DecodingModel, mut edges: Vec<u32>) -> Shot {
        edges.sort_unstable();
        edges.dedup();
        let mut bits = vec![0u64; model.num_detectors().div_ceil(64)];
        let mut logical = 0;
        for &id in &edges {
            let e = &model.edges[id as usize];
            logical ^= e.logical_mask;
            for d in e.real_detectors() {
                bits[d as usize / 64] ^= 1 << (d % 64);
            }
        }
        Shot {
            flipped_edges: edges,
            detector_bits: bits,
            true_logical: logical,
        }
    }

    pub fn bit(&self, det: u32) -> bool {
        self.detector_bits[det as usize / 64] >> (det % 64) & 1 == 1
    }

    /// Sorted global ids of fired detectors.
    pub fn defects(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for (w, &word) in self.detector_bits.iter().enumerate() {
            let mut v = word;
            while v != 0 {
                out.push(w as u32 * 64 + v.trailing_zeros());
                v &= v - 1;
            }
        }
        out
    }

    /// Sorted layer-local indices of fired detectors in layer `t`.
    pub fn layer_defects(&self, model: &DecodingModel, t: usize) -> Vec<u32> {
        let n = model.layer_size();
        (0..n as u32).filter(|&l| self.bit((t * n) as u32 + l)).collect()
    }
}

/// Edges grouped by probability for geometric skip sampling.
pub struct ShotSampler<'a> {
    model: &'a DecodingModel,
    groups: Vec<(f64, Vec<u32>)>,
}

impl<'a> ShotSampler<'a> {
    pub fn new(model: &'a DecodingModel) -> ShotSampler<'a> {
        let mut groups: Vec<(f64, Vec<u32>)> = Vec::new();
        for e in &model.edges {
            if e.probability <= 0.0 {
                continue;
            }
            match groups.iter_mut().find(|(p, _)| *p == e.probability) {
                Some((_, ids)) => ids.push(e.id),
                None => groups.push((e.probability, vec![e.id])),
            }
        }
        ShotSampler { model, groups }
    }

    pub fn model(&self) -> &'a DecodingModel {
        self.model
    }

    pub fn sample(&self, seed: u64) -> Shot {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut flipped = Vec::new();
        for (p, ids) in &self.groups {
            let log_q = (1.0 - p).ln();
            let mut i = 0usize;
            loop {
                // gap to next success of a Bernoulli(p) sequence
                let u: f64 = rng.gen::<f64>();
                let skip = ((1.0 - u).ln() / log_q).floor();
                if !skip.is_finite() || skip >= (ids.len() - i) as f64 {
                    break;
                }
                i += skip as usize;
                flipped.push(ids[i]);
                i += 1;
                if i >= ids.len() {
                    break;
                }
            }
        }
        Shot::from_edges(self.model, flipped)
    }
}

/// Samples one shot: every edge flips independently with its probability.
pub fn sample_shot(model: &DecodingModel, seed: u64) -> Shot {
    ShotSampler::new(model).sample(seed)
}

#[derive(Clone, Debug)]
pub struct StreamConfig {
    pub round_period_ns: u64,
    pub hybrid_mode: bool,
    /// Wall-clock seconds per virtual second; 0 streams as fast as possible.
    pub time_scale: f64,
    pub seed: u64,
    pub high_water: usize,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            round_period_ns: 1000,
            hybrid_mode: false,
            time_scale: 0.0,
            seed: 0,
            high_water: 1024,
        }
    }
}

impl StreamConfig {
    fn validate(&self) -> Result<(), StreamError> {
        if self.round_period_ns == 0 {
            return Err(StreamError::Config("round period must be positive".into()));
        }
        if !(self.time_scale >= 0.0 && self.time_scale.is_finite()) {
            return Err(StreamError::Config(format!("time scale {}", self.time_scale)));
        }
        Ok(())
    }
}

/// One round of one patch as it travels from the generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundPacket {
    pub patch: u16,
    pub round: u32,
    /// Virtual time of the round, in ns.
    pub timestamp_ns: u64,
    /// Sorted layer-local detector indices.
    pub defects: Vec<u32>,
}

impl RoundPacket {
    /// Wire encoding: `patch u16, round u32, count u16, indices u32[count]`, LE.
    pub fn encode(&self, out: &mut Vec<u8>) -> Result<(), StreamError> {
        let count = u16::try_from(self.defects.len())
            .map_err(|_| StreamError::Format(format!("{} defects exceed u16", self.defects.len())))?;
        out.extend_from_slice(&self.patch.to_le_bytes());
        out.extend_from_slice(&self.round.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for d in &self.defects {
            out.extend_from_slice(&d.to_le_bytes());
        }
        Ok(())
    }

    /// Reads one packet; `Ok(None)` at a clean end of stream.
    pub fn read_from<R: Read>(r: &mut R, round_period_ns: u64) -> Result<Option<RoundPacket>, StreamError> {
        let mut header = [0u8; 8];
        match r.read_exact(&mut header[..1]) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        r.read_exact(&mut header[1..])
            .map_err(|e| StreamError::Format(format!("truncated header: {e}")))?;
        let patch = u16::from_le_bytes([header[0], header[1]]);
        let round = u32::from_le_bytes([header[2], header[3], header[4], header[5]]);
        let count = u16::from_le_bytes([header[6], header[7]]) as usize;
        let mut body = vec![0u8; 4 * count];
        r.read_exact(&mut body)
            .map_err(|e| StreamError::Format(format!("truncated body: {e}")))?;
        let defects: Vec<u32> = body
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if defects.windows(2).any(|w| w[0] >= w[1]) {
            return Err(StreamError::Format(format!("round {round}: indices not strictly increasing")));
        }
        Ok(Some(RoundPacket {
            patch,
            round,
            timestamp_ns: round as u64 * round_period_ns,
            defects,
        }))
    }
}

/// Round packets of `patch` for every layer of a shot.
pub fn shot_packets(model: &DecodingModel, shot: &Shot, patch: u16, round_period_ns: u64) -> Vec<RoundPacket> {
    let n = model.layer_size();
    let locals: Vec<u32> = model
        .layer_stabs
        .iter()
        .enumerate()
        .filter(|(l, _)| model.detectors[*l].patch == patch)
        .map(|(l, _)| l as u32)
        .collect();
    (0..model.rounds)
        .map(|t| RoundPacket {
            patch,
            round: t as u32,
            timestamp_ns: t as u64 * round_period_ns,
            defects: locals
                .iter()
                .copied()
                .filter(|&l| shot.bit((t * n) as u32 + l))
                .collect(),
        })
        .collect()
}

/// Writes a shot in the wire format, rounds in order, patches interleaved.
pub fn write_stream<W: Write>(model: &DecodingModel, shot: &Shot, mut w: W) -> Result<(), StreamError> {
    let patches: Vec<Vec<RoundPacket>> = model
        .regions
        .iter()
        .map(|r| shot_packets(model, shot, r.patch, 1))
        .collect();
    let mut buf = Vec::new();
    for t in 0..model.rounds {
        for p in &patches {
            p[t].encode(&mut buf)?;
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StreamStats {
    pub rounds: u32,
    pub max_buffered: usize,
    /// Virtual time of the last emission.
    pub end_ns: u64,
}

struct Pacer {
    start: Instant,
    scale: f64,
}

impl Pacer {
    fn wait_until(&self, virtual_ns: u64) {
        if self.scale == 0.0 {
            return;
        }
        let target = Duration::from_nanos((virtual_ns as f64 * self.scale) as u64);
        loop {
            let now = self.start.elapsed();
            if now >= target {
                return;
            }
            let left = target - now;
            if left > Duration::from_micros(200) {
                std::thread::sleep(left - Duration::from_micros(100));
            } else {
                std::thread::yield_now();
            }
        }
    }
}

fn emit(tx: &Sender<RoundPacket>, packet: RoundPacket, cfg: &StreamConfig, stats: &mut StreamStats) -> Result<(), StreamError> {
    let round = packet.round;
    stats.end_ns = packet.timestamp_ns;
    tx.send(packet).map_err(|_| StreamError::Disconnected)?;
    stats.rounds += 1;
    let buffered = tx.len();
    stats.max_buffered = stats.max_buffered.max(buffered);
    if buffered > cfg.high_water {
        return Err(StreamError::Backlog {
            round,
            buffered,
            high_water: cfg.high_water,
        });
    }
    Ok(())
}

/// Emits the rounds of `patch` from `shot`, one per round period of virtual
/// time, into `tx`. Aborts with a backlog fault once more than
/// `cfg.high_water` rounds sit unconsumed in the channel.
pub fn stream_rounds(
    model: &DecodingModel,
    shot: &Shot,
    patch: u16,
    cfg: &StreamConfig,
    tx: &Sender<RoundPacket>,
) -> Result<StreamStats, StreamError> {
    cfg.validate()?;
    let pacer = Pacer {
        start: Instant::now(),
        scale: cfg.time_scale,
    };
    let mut stats = StreamStats::default();
    for packet in shot_packets(model, shot, patch, cfg.round_period_ns) {
        pacer.wait_until(packet.timestamp_ns);
        emit(tx, packet, cfg, &mut stats)?;
    }
    Ok(stats)
}

/// Hybrid mode: replays rounds from an external byte stream in the wire
/// format, paced like [`stream_rounds`].
pub fn stream_from_reader<R: Read>(
    mut reader: R,
    cfg: &StreamConfig,
    tx: &Sender<RoundPacket>,
) -> Result<StreamStats, StreamError> {
    cfg.validate()?;
    let pacer = Pacer {
        start: Instant::now(),
        scale: cfg.time_scale,
    };
    let mut stats = StreamStats::default();
    let mut last: Option<(u16, u32)> = None;
    while let Some(packet) = RoundPacket::read_from(&mut reader, cfg.round_period_ns)? {
        if let Some((p, r)) = last {
            if packet.round < r || (packet.round == r && packet.patch <= p) {
                return Err(StreamError::Format(format!(
                    "packet ({}, {}) out of order",
                    packet.patch, packet.round
                )));
            }
        }
        last = Some((packet.patch, packet.round));
        pacer.wait_until(packet.timestamp_ns);
        emit(tx, packet, cfg, &mut stats)?;
    }
    Ok(stats)
}
