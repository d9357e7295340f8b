//! Streaming pipeline: per-patch round generators, a central dispatcher, a
//! decode worker pool and a merge worker pool. The dispatcher assembles
//! complete rounds, hands blocks to decoders once their window has arrived,
//! pairs finished neighbors for merging and emits a feedback TICK every
//! `tick_every` rounds.

mod feedback;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::sync::Arc;
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, Receiver, Select, Sender};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_decoder::{Decoder, DecoderKind};
use crate::block_engine::{BlockConfig, BlockOutput, BlockPlan, BlockStore, Contributor, EngineError, LogicalFrame, MergeOutput, StoreError};
use crate::code_model::DecodingModel;
use crate::sampler::{stream_from_reader, stream_rounds, RoundPacket, Shot, StreamConfig, StreamError, StreamStats};

pub use feedback::{fidelity_penalty, fidelity_penalty_linear, update_measurement_basis, Gate, PauliBasisState};

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("invalid scheduler configuration: {0}")]
    Config(String),
    #[error("unknown gate tag {0:?}")]
    UnknownGate(String),
    #[error("invalid rate {0}")]
    InvalidRate(f64),
    #[error("stream ended after {complete} of {expected} rounds")]
    Truncated { complete: u32, expected: u32 },
    #[error("bad packet: {0}")]
    Packet(String),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Residual syndrome of one round after local predecoding.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PredecodedRound {
    pub round: u32,
    /// Sorted global detector ids left for the block decoders.
    pub defects: Vec<u32>,
    /// Logical effect of the corrections applied locally.
    pub logical: u64,
}

/// Local decoder sitting between the generators and the block decoders.
/// Rounds are pushed in order; outputs come back in order, possibly delayed.
pub trait RoundPredecoder {
    fn push_round(&mut self, round: u32, defects: &[u32]) -> Vec<PredecodedRound>;

    /// Flushes rounds still held back.
    fn finish(&mut self) -> Vec<PredecodedRound>;
}

/// Conditional basis update applied when a TICK is delivered.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackRule {
    pub tick: usize,
    /// Observables whose decoded parity is the outcome.
    pub observables: u64,
    pub gate: Gate,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisProgram {
    pub initial: PauliBasisState,
    pub rules: Vec<FeedbackRule>,
}

#[derive(Clone, Debug)]
pub struct SchedulerConfig {
    pub block: BlockConfig,
    pub decoder: DecoderKind,
    pub decode_workers: usize,
    pub merge_workers: usize,
    /// Decode tasks that may wait for a worker before the dispatcher blocks.
    pub queue_capacity: usize,
    /// Rounds per TICK; 0 uses the core extent.
    pub tick_every: usize,
    pub stream: StreamConfig,
    pub program: Option<BasisProgram>,
    pub trace: bool,
}

impl SchedulerConfig {
    pub fn new(block: BlockConfig) -> SchedulerConfig {
        SchedulerConfig {
            block,
            decoder: DecoderKind::UnionFind,
            decode_workers: 1,
            merge_workers: 2,
            queue_capacity: 64,
            tick_every: 0,
            stream: StreamConfig::default(),
            program: None,
            trace: false,
        }
    }
}

/// Where rounds come from.
pub enum RoundSource<'a> {
    /// One generator thread per patch replays a sampled shot.
    Shot(&'a Shot),
    /// Hybrid mode: a single wire-format stream carrying every patch.
    Wire(Box<dyn Read + Send + 'a>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Decode,
    Merge,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    #[serde(rename = "type")]
    pub kind: TaskKind,
    /// Block index, or both block indices for a merge.
    pub block: Vec<usize>,
    pub t_start: u64,
    pub t_end: u64,
    pub worker: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub tick: usize,
    /// Last round covered.
    pub round: u32,
    pub bits: u64,
    /// From the arrival of `round` at the dispatcher to delivery.
    pub latency_ns: u64,
    pub delivered_ns: u64,
}

#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub logical: u64,
    pub frame: LogicalFrame,
    pub ticks: Vec<FeedbackEvent>,
    pub trace: Vec<TraceEvent>,
    pub decode_tasks: usize,
    pub merge_tasks: usize,
    pub escalations: usize,
    pub work: u64,
    /// Largest span of rounds between the newest arrival and the oldest
    /// core that was not yet decoded.
    pub max_buffered_rounds: usize,
    pub peak_stored_blocks: usize,
    pub rounds: u32,
    pub wall_ns: u64,
    pub basis: Option<PauliBasisState>,
    pub basis_history: Vec<PauliBasisState>,
    pub streams: Vec<StreamStats>,
}

pub fn write_trace<W: Write>(events: &[TraceEvent], mut w: W) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_feedback_csv<W: Write>(ticks: &[FeedbackEvent], mut w: W) -> std::io::Result<()> {
    writeln!(w, "tick,round,bits,latency_ns")?;
    for t in ticks {
        writeln!(w, "{},{},{},{}", t.tick, t.round, t.bits, t.latency_ns)?;
    }
    Ok(())
}

enum WorkerMsg {
    Decoded {
        output: BlockOutput,
        worker: usize,
        t: (u64, u64),
    },
    Merged {
        pair: (usize, usize),
        tick: usize,
        output: MergeOutput,
        worker: usize,
        t: (u64, u64),
    },
    Failed(EngineError),
}

struct DecodeTask {
    block: usize,
    defects: Arc<Vec<u32>>,
}

struct MergeTask {
    pair: (usize, usize),
    tick: usize,
    seams: (Vec<u32>, Vec<u32>),
}

pub struct Scheduler<'m> {
    model: &'m DecodingModel,
    plan: BlockPlan<'m>,
    decoder: Box<dyn Decoder>,
    config: SchedulerConfig,
    tick_every: usize,
}

impl<'m> Scheduler<'m> {
    pub fn new(model: &'m DecodingModel, config: SchedulerConfig) -> Result<Scheduler<'m>, SchedulerError> {
        if config.decode_workers == 0 || config.merge_workers == 0 {
            return Err(SchedulerError::Config("worker pools must be non-empty".into()));
        }
        if config.queue_capacity == 0 {
            return Err(SchedulerError::Config("queue capacity must be positive".into()));
        }
        if let Some(p) = &config.program {
            for r in &p.rules {
                p.initial.conjugate(r.gate)?;
            }
        }
        let plan = BlockPlan::new(model, config.block)?;
        let tick_every = if config.tick_every == 0 { config.block.core_layers } else { config.tick_every };
        Ok(Scheduler {
            model,
            plan,
            decoder: config.decoder.build(),
            config,
            tick_every,
        })
    }

    /// Builds all decoding graphs so the first run is not slowed by lazy
    /// construction.
    pub fn warm_up(&self) {
        self.plan.prepare();
    }

    pub fn plan(&self) -> &BlockPlan<'m> {
        &self.plan
    }

    pub fn ticks(&self) -> usize {
        self.model.rounds.div_ceil(self.tick_every)
    }

    fn tick_round(&self, k: usize) -> usize {
        ((k + 1) * self.tick_every).min(self.model.rounds) - 1
    }

    /// Streams one shot through the pipeline.
    pub fn run(
        &self,
        source: RoundSource<'_>,
        predecoder: Option<&mut dyn RoundPredecoder>,
    ) -> Result<RunReport, SchedulerError> {
        let cfg = &self.config;
        let start = Instant::now();
        let fast = cfg.stream.time_scale == 0.0;
        let channel = || {
            if fast {
                bounded::<RoundPacket>(cfg.stream.high_water.max(1))
            } else {
                unbounded::<RoundPacket>()
            }
        };
        let (task_tx, task_rx) = bounded::<DecodeTask>(cfg.queue_capacity);
        let (merge_tx, merge_rx) = bounded::<MergeTask>(cfg.queue_capacity);
        let (res_tx, res_rx) = unbounded::<WorkerMsg>();

        std::thread::scope(|s| {
            let mut gens = Vec::new();
            let mut rxs = Vec::new();
            match source {
                RoundSource::Shot(shot) => {
                    for region in &self.model.regions {
                        let (tx, rx) = channel();
                        rxs.push(rx);
                        let patch = region.patch;
                        gens.push(s.spawn(move || stream_rounds(self.model, shot, patch, &cfg.stream, &tx)));
                    }
                }
                RoundSource::Wire(reader) => {
                    let (tx, rx) = channel();
                    rxs.push(rx);
                    gens.push(s.spawn(move || stream_from_reader(reader, &cfg.stream, &tx)));
                }
            }
            for w in 0..cfg.decode_workers {
                let rx = task_rx.clone();
                let tx = res_tx.clone();
                s.spawn(move || {
                    for task in rx {
                        let t0 = start.elapsed().as_nanos() as u64;
                        let msg = match self.plan.decode_block(task.block, &task.defects, self.decoder.as_ref()) {
                            Ok(output) => WorkerMsg::Decoded {
                                output,
                                worker: w,
                                t: (t0, start.elapsed().as_nanos() as u64),
                            },
                            Err(e) => WorkerMsg::Failed(e),
                        };
                        if tx.send(msg).is_err() {
                            return;
                        }
                    }
                });
            }
            for w in 0..cfg.merge_workers {
                let rx = merge_rx.clone();
                let tx = res_tx.clone();
                s.spawn(move || {
                    for task in rx {
                        let t0 = start.elapsed().as_nanos() as u64;
                        let (a, b) = task.pair;
                        let msg = match self.plan.merge(a, b, &task.seams.0, &task.seams.1, self.decoder.as_ref()) {
                            Ok(output) => WorkerMsg::Merged {
                                pair: task.pair,
                                tick: task.tick,
                                output,
                                worker: w,
                                t: (t0, start.elapsed().as_nanos() as u64),
                            },
                            Err(e) => WorkerMsg::Failed(e),
                        };
                        if tx.send(msg).is_err() {
                            return;
                        }
                    }
                });
            }
            drop((task_rx, merge_rx, res_tx));

            let central = Central::new(self, start, predecoder, task_tx, merge_tx);
            let result = central.run(rxs, res_rx);
            let mut streams = Vec::new();
            let mut stream_err = None;
            for g in gens {
                match g.join().expect("generator thread panicked") {
                    Ok(st) => streams.push(st),
                    Err(StreamError::Disconnected) => {}
                    Err(e) => stream_err = stream_err.or(Some(e)),
                }
            }
            match (result, stream_err) {
                (Ok(mut report), None) => {
                    report.streams = streams;
                    report.wall_ns = start.elapsed().as_nanos() as u64;
                    Ok(report)
                }
                (_, Some(e)) => Err(e.into()),
                (Err(e), None) => Err(e),
            }
        })
    }
}

struct Central<'s, 'm, 'p> {
    sched: &'s Scheduler<'m>,
    start: Instant,
    predecoder: Option<&'p mut dyn RoundPredecoder>,
    task_tx: Sender<DecodeTask>,
    merge_tx: Sender<MergeTask>,
    patches: usize,
    /// round -> (patches arrived, global defects)
    pending: BTreeMap<u32, (usize, Vec<u32>)>,
    complete: u32,
    arrival: Vec<Option<Instant>>,
    ready: BTreeMap<u32, Vec<u32>>,
    ready_through: u32,
    next_window: usize,
    first_open_window: usize,
    finished: Vec<bool>,
    store: BlockStore,
    tick_of_block: Vec<usize>,
    remaining_blocks: Vec<usize>,
    remaining_pairs: Vec<usize>,
    acc: Vec<u64>,
    next_tick: usize,
    running: u64,
    basis: Option<PauliBasisState>,
    report: RunReport,
}

impl<'s, 'm, 'p> Central<'s, 'm, 'p> {
    fn new(
        sched: &'s Scheduler<'m>,
        start: Instant,
        predecoder: Option<&'p mut dyn RoundPredecoder>,
        task_tx: Sender<DecodeTask>,
        merge_tx: Sender<MergeTask>,
    ) -> Self {
        let plan = &sched.plan;
        let nticks = sched.ticks();
        let tick_of_block: Vec<usize> = plan
            .blocks
            .iter()
            .map(|b| (b.core_layers.1.div_ceil(sched.tick_every) - 1).min(nticks - 1))
            .collect();
        let mut remaining_blocks = vec![0; nticks];
        for &t in &tick_of_block {
            remaining_blocks[t] += 1;
        }
        let mut remaining_pairs = vec![0; nticks];
        for &(a, b) in &plan.pairs {
            remaining_pairs[tick_of_block[a].max(tick_of_block[b])] += 1;
        }
        let cfg = &sched.config;
        let in_flight = cfg.queue_capacity + cfg.decode_workers + 3 * plan.regions;
        Central {
            sched,
            start,
            predecoder,
            task_tx,
            merge_tx,
            patches: sched.model.regions.len(),
            pending: BTreeMap::new(),
            complete: 0,
            arrival: vec![None; sched.model.rounds],
            ready: BTreeMap::new(),
            ready_through: 0,
            next_window: 0,
            first_open_window: 0,
            finished: vec![false; plan.blocks.len()],
            store: BlockStore::for_in_flight(in_flight),
            tick_of_block,
            remaining_blocks,
            remaining_pairs,
            acc: vec![0; nticks],
            next_tick: 0,
            running: 0,
            basis: cfg.program.as_ref().map(|p| p.initial.clone()),
            report: RunReport::default(),
        }
    }

    fn now_ns(&self) -> u64 {
        self.start.elapsed().as_nanos() as u64
    }

    fn run(mut self, rxs: Vec<Receiver<RoundPacket>>, res_rx: Receiver<WorkerMsg>) -> Result<RunReport, SchedulerError> {
        let mut alive = vec![true; rxs.len()];
        self.try_ticks()?;
        while self.next_tick < self.acc.len() {
            let live: Vec<usize> = (0..rxs.len()).filter(|&i| alive[i]).collect();
            let mut sel = Select::new();
            for &i in &live {
                sel.recv(&rxs[i]);
            }
            let res_index = sel.recv(&res_rx);
            let op = sel.select();
            let k = op.index();
            if k == res_index {
                let msg = op.recv(&res_rx).expect("workers outlive the dispatcher");
                self.on_result(msg)?;
            } else {
                let i = live[k];
                match op.recv(&rxs[i]) {
                    Ok(p) => self.on_packet(p)?,
                    Err(_) => {
                        alive[i] = false;
                        if !alive.iter().any(|&a| a) && (self.complete as usize) < self.sched.model.rounds {
                            return Err(SchedulerError::Truncated {
                                complete: self.complete,
                                expected: self.sched.model.rounds as u32,
                            });
                        }
                    }
                }
            }
        }
        self.report.logical = self.running;
        debug_assert_eq!(self.report.frame.audit(), self.running);
        self.report.rounds = self.complete;
        self.report.peak_stored_blocks = self.store.peak();
        self.report.basis = self.basis;
        Ok(self.report)
    }

    fn on_packet(&mut self, p: RoundPacket) -> Result<(), SchedulerError> {
        let model = self.sched.model;
        let l = model.layer_size();
        if p.round as usize >= model.rounds {
            return Err(SchedulerError::Packet(format!("round {} beyond {}", p.round, model.rounds)));
        }
        if p.round < self.complete {
            return Err(SchedulerError::Packet(format!("round {} of patch {} repeated", p.round, p.patch)));
        }
        let entry = self.pending.entry(p.round).or_default();
        for &loc in &p.defects {
            if loc as usize >= l || model.detectors[loc as usize].patch != p.patch {
                return Err(SchedulerError::Packet(format!("detector {loc} not in patch {}", p.patch)));
            }
            entry.1.push((p.round as usize * l) as u32 + loc);
        }
        entry.0 += 1;
        if entry.0 > self.patches {
            return Err(SchedulerError::Packet(format!("round {} delivered twice", p.round)));
        }
        while let Some((n, _)) = self.pending.get(&self.complete) {
            if *n < self.patches {
                break;
            }
            let (_, mut defects) = self.pending.remove(&self.complete).expect("present");
            defects.sort_unstable();
            let r = self.complete;
            self.arrival[r as usize] = Some(Instant::now());
            self.complete += 1;
            let open_start = self
                .sched
                .plan
                .blocks
                .get(self.first_open_window * self.sched.plan.regions)
                .map_or(self.complete as usize, |b| b.core_layers.0);
            self.report.max_buffered_rounds = self
                .report
                .max_buffered_rounds
                .max((self.complete as usize).saturating_sub(open_start));
            let mut out = match self.predecoder.as_deref_mut() {
                Some(pd) => pd.push_round(r, &defects),
                None => vec![PredecodedRound {
                    round: r,
                    defects,
                    logical: 0,
                }],
            };
            if self.complete as usize == self.sched.model.rounds {
                if let Some(pd) = self.predecoder.as_deref_mut() {
                    out.extend(pd.finish());
                }
            }
            for pr in out {
                self.on_ready(pr)?;
            }
        }
        self.dispatch()?;
        self.try_ticks()
    }

    fn on_ready(&mut self, pr: PredecodedRound) -> Result<(), SchedulerError> {
        if pr.round != self.ready_through {
            return Err(SchedulerError::Packet(format!(
                "predecoder emitted round {} while expecting {}",
                pr.round, self.ready_through
            )));
        }
        if pr.logical != 0 {
            let t = (pr.round as usize / self.sched.tick_every).min(self.acc.len() - 1);
            self.acc[t] ^= pr.logical;
            self.report.frame.apply(Contributor::Predecoder(pr.round), pr.logical);
        }
        self.ready.insert(pr.round, pr.defects);
        self.ready_through += 1;
        Ok(())
    }

    fn dispatch(&mut self) -> Result<(), SchedulerError> {
        let plan = &self.sched.plan;
        while self.next_window < plan.windows {
            let first = self.next_window * plan.regions;
            let (lo, hi) = plan.blocks[first].window_layers;
            if (self.ready_through as usize) < hi {
                break;
            }
            let mut defects = Vec::new();
            for (_, d) in self.ready.range(lo as u32..hi as u32) {
                defects.extend_from_slice(d);
            }
            let defects = Arc::new(defects);
            for block in first..first + plan.regions {
                self.report.decode_tasks += 1;
                self.task_tx
                    .send(DecodeTask {
                        block,
                        defects: Arc::clone(&defects),
                    })
                    .map_err(|_| SchedulerError::Config("decode pool stopped".into()))?;
            }
            self.next_window += 1;
            let keep_from = plan
                .blocks
                .get(self.next_window * plan.regions)
                .map_or(u32::MAX, |b| b.window_layers.0 as u32);
            self.ready = self.ready.split_off(&keep_from);
        }
        Ok(())
    }

    fn on_result(&mut self, msg: WorkerMsg) -> Result<(), SchedulerError> {
        match msg {
            WorkerMsg::Failed(e) => Err(e.into()),
            WorkerMsg::Decoded { output, worker, t } => {
                let plan = &self.sched.plan;
                let b = output.block;
                if self.finished[b] {
                    return Err(SchedulerError::Packet(format!("block {b} decoded twice")));
                }
                self.finished[b] = true;
                if self.sched.config.trace {
                    self.report.trace.push(TraceEvent {
                        kind: TaskKind::Decode,
                        block: vec![b],
                        t_start: t.0,
                        t_end: t.1,
                        worker,
                    });
                }
                let tick = self.tick_of_block[b];
                self.acc[tick] ^= output.logical;
                self.remaining_blocks[tick] -= 1;
                self.report.frame.apply(Contributor::Block(b), output.logical);
                self.report.work += output.work;
                let id = plan.blocks[b].id;
                self.store.insert(id, output)?;
                for &n in &plan.blocks[b].neighbors {
                    if !self.finished[n] {
                        continue;
                    }
                    let (a, c) = (b.min(n), b.max(n));
                    let seam_a = self.store.take_seam(plan.blocks[a].id, c)?;
                    let seam_c = self.store.take_seam(plan.blocks[c].id, a)?;
                    self.report.merge_tasks += 1;
                    self.merge_tx
                        .send(MergeTask {
                            pair: (a, c),
                            tick: self.tick_of_block[a].max(self.tick_of_block[c]),
                            seams: (seam_a, seam_c),
                        })
                        .map_err(|_| SchedulerError::Config("merge pool stopped".into()))?;
                }
                while self.first_open_window < plan.windows {
                    let first = self.first_open_window * plan.regions;
                    if !self.finished[first..first + plan.regions].iter().all(|&f| f) {
                        break;
                    }
                    self.first_open_window += 1;
                }
                self.try_ticks()
            }
            WorkerMsg::Merged {
                pair,
                tick,
                output,
                worker,
                t,
            } => {
                if self.sched.config.trace {
                    self.report.trace.push(TraceEvent {
                        kind: TaskKind::Merge,
                        block: vec![pair.0, pair.1],
                        t_start: t.0,
                        t_end: t.1,
                        worker,
                    });
                }
                self.acc[tick] ^= output.logical;
                self.remaining_pairs[tick] -= 1;
                self.report.frame.apply(Contributor::Seam(pair.0, pair.1), output.logical);
                self.report.escalations += output.escalated as usize;
                self.report.work += output.work;
                self.try_ticks()
            }
        }
    }

    fn try_ticks(&mut self) -> Result<(), SchedulerError> {
        while self.next_tick < self.acc.len() {
            let k = self.next_tick;
            let round = self.sched.tick_round(k);
            if self.remaining_blocks[k] > 0 || self.remaining_pairs[k] > 0 || (self.ready_through as usize) <= round {
                return Ok(());
            }
            self.running ^= self.acc[k];
            let delivered = Instant::now();
            let arrived = self.arrival[round].expect("covered rounds have arrived");
            self.report.ticks.push(FeedbackEvent {
                tick: k,
                round: round as u32,
                bits: self.running,
                latency_ns: delivered.duration_since(arrived).as_nanos() as u64,
                delivered_ns: self.now_ns(),
            });
            if let (Some(state), Some(program)) = (self.basis.as_mut(), self.sched.config.program.as_ref()) {
                for rule in program.rules.iter().filter(|r| r.tick == k) {
                    let outcome = (self.running & rule.observables).count_ones() % 2 == 1;
                    *state = update_measurement_basis(state, rule.gate, outcome)?;
                    self.report.basis_history.push(state.clone());
                }
            }
            self.next_tick += 1;
        }
        Ok(())
    }
}
