//! Evaluation protocols: memory and stability logical error rates, threshold
//! scans, predecoder bandwidth, multi-patch throughput and streaming
//! feedback latency.

pub mod stats;

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::base_decoder::{DecodeError, DecoderKind, GlobalDecoder};
use crate::block_engine::{BlockConfig, BlockPlan, EngineError};
use crate::code_model::{
    build_dem, build_stability_model, build_surface_code, build_surgery_model, DecodingModel, ModelError, NoiseParams,
    SurgeryLayout,
};
use crate::nldu::{predecode, Geometry, NlduError, NlduPredecoder, QuantizedModel};
use crate::sampler::{shot_seed, ShotSampler};
use crate::scheduler::{RoundPredecoder, RoundSource, Scheduler, SchedulerConfig, SchedulerError, TraceEvent};
use stats::{median, quantile, wilson, Interval, Z95};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Nldu(#[from] NlduError),
    #[error(transparent)]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Memory,
    Stability,
    Multipatch,
    ThresholdScan,
    Bandwidth,
    StreamingLatency,
}

/// Parameters shared by every experiment; zero means "derive from d".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub d: usize,
    pub p: f64,
    /// Detector layers; 0 = d.
    pub rounds: usize,
    pub shots: u64,
    /// Buffer layers; 0 = ceil(d / 2).
    pub buffer: usize,
    pub decode_workers: usize,
    pub merge_workers: usize,
    pub nldu: bool,
    /// LNW1 file; the shipped weights when absent.
    pub weights: Option<PathBuf>,
    pub seed: u64,
    pub decoder: DecoderKind,
    /// Decode each shot as one volume instead of blocks.
    pub global: bool,
    pub patches: usize,
    /// Wall seconds per virtual second of round pacing; 0 = unpaced.
    pub time_scale: f64,
    /// Target Wilson half-width; 0 runs exactly `shots`.
    pub tolerance: f64,
    pub shot_cap: u64,
    pub ds: Vec<usize>,
    pub ps: Vec<f64>,
    pub threads: Vec<usize>,
    /// Record scheduler task events in streaming runs.
    pub trace: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            d: 5,
            p: 0.001,
            rounds: 0,
            shots: 1000,
            buffer: 0,
            decode_workers: 1,
            merge_workers: 2,
            nldu: false,
            weights: None,
            seed: 0,
            decoder: DecoderKind::UnionFind,
            global: false,
            patches: 16,
            time_scale: 0.0,
            tolerance: 0.0,
            shot_cap: 1_000_000,
            ds: vec![3, 5, 7],
            ps: vec![0.001, 0.003, 0.01, 0.03],
            threads: vec![1, 2, 4, 8, 16],
            trace: false,
        }
    }
}

impl ExperimentSpec {
    pub fn rounds(&self) -> usize {
        if self.rounds == 0 {
            self.d
        } else {
            self.rounds
        }
    }

    pub fn buffer(&self) -> usize {
        if self.buffer == 0 {
            self.d.div_ceil(2)
        } else {
            self.buffer
        }
    }

    pub fn block(&self, spatial: bool) -> BlockConfig {
        BlockConfig {
            core_layers: self.d,
            buffer: self.buffer(),
            spatial,
        }
    }

    pub fn load_weights(&self) -> Result<QuantizedModel, ExperimentError> {
        Ok(match &self.weights {
            Some(p) => QuantizedModel::load(p)?,
            None => QuantizedModel::shipped(),
        })
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Config(m.into()));
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if !(0.0..=0.5).contains(&self.p) {
            return bad("p must lie in [0, 0.5]");
        }
        if self.decode_workers == 0 || self.merge_workers == 0 {
            return bad("worker counts must be positive");
        }
        if self.tolerance < 0.0 || self.time_scale.is_nan() || self.time_scale < 0.0 {
            return bad("tolerance and time scale must be non-negative");
        }
        Ok(())
    }
}

pub fn memory_model(d: usize, rounds: usize, p: f64) -> Result<DecodingModel, ExperimentError> {
    Ok(build_dem(&build_surface_code(d)?, rounds, NoiseParams::uniform(p))?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BandwidthStats {
    pub raw_defects: u64,
    pub residual_defects: u64,
    /// Residual over raw detector events; 0 when nothing fired.
    pub ratio: f64,
    /// True when the ratio is 0/0.
    pub no_events: bool,
    pub accepted: u64,
}

impl BandwidthStats {
    fn finish(mut self) -> BandwidthStats {
        self.no_events = self.raw_defects == 0;
        self.ratio = if self.no_events {
            0.0
        } else {
            self.residual_defects as f64 / self.raw_defects as f64
        };
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LerReport {
    pub kind: ExperimentKind,
    pub d: usize,
    pub p: f64,
    pub rounds: usize,
    pub buffer: usize,
    pub global: bool,
    pub shots: u64,
    pub failures: u64,
    pub ler: f64,
    pub ci: Interval,
    pub bandwidth: Option<BandwidthStats>,
    /// Decoder work units summed over shots.
    pub decode_work: u64,
    pub escalations: u64,
    pub wall_s: f64,
}

#[derive(Default)]
struct Tally {
    failures: u64,
    work: u64,
    escalations: u64,
    bw: BandwidthStats,
}

impl Tally {
    fn add(mut self, o: Tally) -> Tally {
        self.failures += o.failures;
        self.work += o.work;
        self.escalations += o.escalations;
        self.bw.raw_defects += o.bw.raw_defects;
        self.bw.residual_defects += o.bw.residual_defects;
        self.bw.accepted += o.bw.accepted;
        self
    }
}

/// Samples shots of `model`, optionally predecodes them with the NLDU, then
/// decodes blockwise (or globally) and counts failures on `observables`.
pub fn run_ler(
    kind: ExperimentKind,
    model: &DecodingModel,
    spec: &ExperimentSpec,
    observables: u64,
) -> Result<LerReport, ExperimentError> {
    spec.validate()?;
    let start = Instant::now();
    let plan = if spec.global {
        None
    } else {
        let plan = BlockPlan::new(model, spec.block(false))?;
        plan.prepare();
        Some(plan)
    };
    let global = spec.global.then(|| GlobalDecoder::new(model));
    let weights = if spec.nldu { Some(spec.load_weights()?) } else { None };
    let geom = Geometry::new(model);
    let sampler = ShotSampler::new(model);
    let decoder = spec.decoder.build();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.decode_workers).build()?;

    let one = |i: u64| -> Result<Tally, ExperimentError> {
        let shot = sampler.sample(shot_seed(spec.seed, i));
        let raw = shot.defects();
        let mut t = Tally::default();
        let (defects, local) = match &weights {
            Some(w) => {
                let r = predecode(&geom, w, &raw)?;
                t.bw.raw_defects = raw.len() as u64;
                t.bw.residual_defects = r.residual.len() as u64;
                t.bw.accepted = r.accepted as u64;
                (r.residual, r.logical)
            }
            None => (raw, 0),
        };
        let logical = match (&plan, &global) {
            (Some(plan), _) => {
                let out = plan.decode_shot(&defects, decoder.as_ref())?;
                t.work = out.work;
                t.escalations = out.escalations as u64;
                out.logical
            }
            (None, Some(g)) => g.decode(decoder.as_ref(), &defects)?,
            _ => unreachable!(),
        };
        t.failures = ((logical ^ local ^ shot.true_logical) & observables != 0) as u64;
        Ok(t)
    };

    let mut done = 0u64;
    let mut total = Tally::default();
    loop {
        let target = if spec.tolerance > 0.0 {
            let batch = spec.shots.max(1000);
            (done + batch).min(spec.shot_cap)
        } else {
            spec.shots
        };
        let part = pool.install(|| {
            (done..target)
                .into_par_iter()
                .map(one)
                .try_reduce(Tally::default, |a, b| Ok(a.add(b)))
        })?;
        total = total.add(part);
        done = target;
        if spec.tolerance == 0.0
            || done >= spec.shot_cap
            || wilson(total.failures, done, Z95).half_width() < spec.tolerance
        {
            break;
        }
    }
    Ok(LerReport {
        kind,
        d: spec.d,
        p: spec.p,
        rounds: model.rounds,
        buffer: spec.buffer(),
        global: spec.global,
        shots: done,
        failures: total.failures,
        ler: if done == 0 { 0.0 } else { total.failures as f64 / done as f64 },
        ci: wilson(total.failures, done, Z95),
        bandwidth: spec.nldu.then(|| total.bw.finish()),
        decode_work: total.work,
        escalations: total.escalations,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Z-basis memory: failure when the decoded Z_L disagrees with the truth.
pub fn run_memory(spec: &ExperimentSpec) -> Result<LerReport, ExperimentError> {
    spec.validate()?;
    let model = memory_model(spec.d, spec.rounds(), spec.p)?;
    run_ler(ExperimentKind::Memory, &model, spec, 1)
}

/// Stability: the observable is the product of the X stabilizers, flipped
/// by timelike error chains.
pub fn run_stability(spec: &ExperimentSpec) -> Result<LerReport, ExperimentError> {
    spec.validate()?;
    let model = build_stability_model(spec.d, spec.rounds(), NoiseParams::uniform(spec.p))?;
    run_ler(ExperimentKind::Stability, &model, spec, 1)
}

/// LER over the grid `ds` x `ps`.
pub fn run_threshold_scan(spec: &ExperimentSpec, stability: bool) -> Result<Vec<LerReport>, ExperimentError> {
    let mut out = Vec::new();
    for &d in &spec.ds {
        for &p in &spec.ps {
            let s = ExperimentSpec { d, p, ..spec.clone() };
            out.push(if stability { run_stability(&s)? } else { run_memory(&s)? });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthRow {
    pub d: usize,
    pub p: f64,
    pub shots: u64,
    pub stats: BandwidthStats,
}

/// Residual-syndrome ratio of the NLDU over the grid `ds` x `ps`.
pub fn run_bandwidth(spec: &ExperimentSpec) -> Result<Vec<BandwidthRow>, ExperimentError> {
    spec.validate()?;
    let weights = spec.load_weights()?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(spec.decode_workers).build()?;
    let mut rows = Vec::new();
    for &d in &spec.ds {
        for &p in &spec.ps {
            let rounds = if spec.rounds == 0 { d } else { spec.rounds };
            let model = memory_model(d, rounds, p)?;
            let geom = Geometry::new(&model);
            let sampler = ShotSampler::new(&model);
            let stats = pool.install(|| {
                (0..spec.shots)
                    .into_par_iter()
                    .map(|i| -> Result<BandwidthStats, ExperimentError> {
                        let raw = sampler.sample(shot_seed(spec.seed, i)).defects();
                        let r = predecode(&geom, &weights, &raw)?;
                        Ok(BandwidthStats {
                            raw_defects: raw.len() as u64,
                            residual_defects: r.residual.len() as u64,
                            accepted: r.accepted as u64,
                            ..BandwidthStats::default()
                        })
                    })
                    .try_reduce(BandwidthStats::default, |a, b| {
                        Ok(BandwidthStats {
                            raw_defects: a.raw_defects + b.raw_defects,
                            residual_defects: a.residual_defects + b.residual_defects,
                            accepted: a.accepted + b.accepted,
                            ..a
                        })
                    })
            })?;
            rows.push(BandwidthRow {
                d,
                p,
                shots: spec.shots,
                stats: stats.finish(),
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreadRow {
    pub threads: usize,
    pub median_shot_ms: f64,
    pub mean_shot_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultipatchReport {
    pub d: usize,
    pub p: f64,
    pub patches: usize,
    pub shots: u64,
    pub failures: u64,
    pub ler: f64,
    pub ci: Interval,
    pub decode_tasks_per_shot: usize,
    pub rows: Vec<ThreadRow>,
}

/// Joint Z measurement across a vertical stack of patches, decoded by the
/// scheduler with spatial blocks at every thread count of `threads`.
pub fn run_multipatch(spec: &ExperimentSpec) -> Result<MultipatchReport, ExperimentError> {
    spec.validate()?;
    if spec.patches == 0 {
        return Err(ExperimentError::Config("at least one patch".into()));
    }
    let op = "Z".repeat(spec.patches);
    let layout = SurgeryLayout::stack(spec.d, spec.patches, &op);
    let model = build_surgery_model(&layout, spec.rounds(), NoiseParams::uniform(spec.p))?;
    let joint = if spec.patches > 1 { 1u64 << (spec.patches + 1) } else { 1 };
    let sampler = ShotSampler::new(&model);
    let shots: Vec<_> = (0..spec.shots).map(|i| sampler.sample(shot_seed(spec.seed, i))).collect();
    let mut rows = Vec::new();
    let mut failures = None;
    let mut tasks = 0;
    for &threads in &spec.threads {
        let mut cfg = SchedulerConfig::new(spec.block(true));
        cfg.decoder = spec.decoder;
        cfg.decode_workers = threads;
        cfg.merge_workers = spec.merge_workers;
        let sched = Scheduler::new(&model, cfg)?;
        sched.warm_up();
        let mut times = Vec::with_capacity(shots.len());
        let mut fails = 0;
        for shot in &shots {
            let r = sched.run(RoundSource::Shot(shot), None)?;
            times.push(r.wall_ns as f64 / 1e6);
            fails += ((r.logical ^ shot.true_logical) & joint != 0) as u64;
            tasks = r.decode_tasks;
        }
        if *failures.get_or_insert(fails) != fails {
            return Err(ExperimentError::Config("failure count depends on thread count".into()));
        }
        rows.push(ThreadRow {
            threads,
            median_shot_ms: median(&times),
            mean_shot_ms: times.iter().sum::<f64>() / times.len().max(1) as f64,
        });
    }
    let failures = failures.unwrap_or(0);
    Ok(MultipatchReport {
        d: spec.d,
        p: spec.p,
        patches: spec.patches,
        shots: spec.shots,
        failures,
        ler: failures as f64 / spec.shots.max(1) as f64,
        ci: wilson(failures, spec.shots, Z95),
        decode_tasks_per_shot: tasks,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub d: usize,
    pub rounds: usize,
    pub decode_workers: usize,
    pub nldu: bool,
    pub ticks: usize,
    pub median_ns: f64,
    pub p99_ns: f64,
    pub max_ns: f64,
    /// Largest tick latency over the median.
    pub max_over_median: f64,
    /// Largest median of ten consecutive tick segments over the overall
    /// median: growth of latency along the run.
    pub drift: f64,
    pub max_buffered_rounds: usize,
    pub decode_tasks: usize,
    pub decode_work: u64,
    pub wall_s: f64,
    pub latencies_ns: Vec<u64>,
    #[serde(skip)]
    pub trace: Vec<TraceEvent>,
}

/// One long paced memory run through the scheduler, optionally behind the
/// streaming NLDU.
pub fn run_streaming_latency(spec: &ExperimentSpec) -> Result<LatencyReport, ExperimentError> {
    spec.validate()?;
    let model = memory_model(spec.d, spec.rounds(), spec.p)?;
    let mut cfg = SchedulerConfig::new(spec.block(false));
    cfg.decoder = spec.decoder;
    cfg.decode_workers = spec.decode_workers;
    cfg.merge_workers = spec.merge_workers;
    cfg.stream.time_scale = spec.time_scale;
    cfg.stream.seed = spec.seed;
    cfg.trace = spec.trace;
    let sched = Scheduler::new(&model, cfg)?;
    sched.warm_up();
    let shot = ShotSampler::new(&model).sample(shot_seed(spec.seed, 0));
    let mut pd = if spec.nldu {
        Some(NlduPredecoder::new(&model, &spec.load_weights()?)?)
    } else {
        None
    };
    let r = sched.run(
        RoundSource::Shot(&shot),
        pd.as_mut().map(|p| p as &mut dyn RoundPredecoder),
    )?;
    let lat: Vec<f64> = r.ticks.iter().map(|t| t.latency_ns as f64).collect();
    let med = median(&lat);
    let seg = lat.len().div_ceil(10).max(1);
    let seg_max = lat.chunks(seg).map(median).fold(0.0, f64::max);
    let max = lat.iter().copied().fold(0.0, f64::max);
    Ok(LatencyReport {
        d: spec.d,
        rounds: model.rounds,
        decode_workers: spec.decode_workers,
        nldu: spec.nldu,
        ticks: lat.len(),
        median_ns: med,
        p99_ns: quantile(&lat, 0.99),
        max_ns: max,
        max_over_median: if med > 0.0 { max / med } else { 0.0 },
        drift: if med > 0.0 { seg_max / med } else { 0.0 },
        max_buffered_rounds: r.max_buffered_rounds,
        decode_tasks: r.decode_tasks,
        decode_work: r.work,
        wall_s: r.wall_ns as f64 / 1e9,
        latencies_ns: r.ticks.iter().map(|t| t.latency_ns).collect(),
        trace: r.trace,
    })
}

/// Smallest worker count in `candidates` whose paced run neither faults on
/// backlog nor buffers more than `max_buffered` rounds.
pub fn min_workers(
    spec: &ExperimentSpec,
    candidates: &[usize],
    max_buffered: usize,
) -> Result<Option<(usize, LatencyReport)>, ExperimentError> {
    for &m in candidates {
        let s = ExperimentSpec {
            decode_workers: m,
            ..spec.clone()
        };
        match run_streaming_latency(&s) {
            Ok(r) if r.max_buffered_rounds <= max_buffered => return Ok(Some((m, r))),
            Ok(_) | Err(ExperimentError::Scheduler(SchedulerError::Stream(_))) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}
