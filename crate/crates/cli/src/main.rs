mod plot;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use latte::experiments::{
    memory_model, min_workers, run_bandwidth, run_memory, run_multipatch, run_stability, run_streaming_latency,
    run_threshold_scan, ExperimentSpec,
};
use latte::scheduler::write_trace;
use latte::nldu::{estimate_resources, export_dataset, search_config, stage_latency_s, NlduConfig};

#[derive(Parser)]
#[command(name = "latte", version, about = "Streaming block decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Experiment parameters; flags override values from `--config`.
#[derive(Args, Clone, Debug, Default)]
struct SpecArgs {
    /// TOML file with experiment fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    shots: Option<u64>,
    #[arg(long)]
    buffer: Option<usize>,
    #[arg(long)]
    decode_workers: Option<usize>,
    #[arg(long)]
    merge_workers: Option<usize>,
    /// Predecode with the neural local decoder.
    #[arg(long)]
    nldu: bool,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Decode whole shots without blocks.
    #[arg(long)]
    global: bool,
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    time_scale: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    shot_cap: Option<u64>,
    #[arg(long, value_delimiter = ',')]
    ds: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    ps: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    threads: Option<Vec<usize>>,
    /// Metrics JSON; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional CSV table next to the JSON.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl SpecArgs {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut s: ExperimentSpec = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => ExperimentSpec::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { s.$f = v; })* };
        }
        take!(d, p, rounds, shots, buffer, decode_workers, merge_workers, seed, patches, time_scale, tolerance, shot_cap, ds, ps, threads);
        if self.weights.is_some() {
            s.weights = self.weights.clone();
        }
        s.nldu |= self.nldu;
        s.global |= self.global;
        if self.exact {
            s.decoder = latte::base_decoder::DecoderKind::Exact;
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Z-basis memory experiment.
    Memory(SpecArgs),
    /// Stability experiment.
    Stability(SpecArgs),
    /// Joint Z measurement over a stack of patches at several thread counts.
    Multipatch(SpecArgs),
    /// Residual-syndrome ratio of the neural local decoder.
    Bandwidth(SpecArgs),
    /// Paced streaming run with per-tick feedback latency.
    StreamLatency {
        #[command(flatten)]
        spec: SpecArgs,
        /// Sweep decode workers 1..=N for the smallest without backlog.
        #[arg(long)]
        sweep: Option<usize>,
        /// Event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// LER over the ds x ps grid.
    ThresholdScan {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        stability: bool,
    },
    /// Write an LNDS training set of memory-experiment shots.
    ExportDataset(SpecArgs),
    /// Resource and latency estimate of one hardware configuration.
    EstimateHw {
        #[arg(long, default_value_t = 9)]
        n: u32,
        #[arg(long, value_delimiter = ',', default_value = "7,7,7")]
        k: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "52,33,27")]
        pe: Vec<u32>,
        /// Clock in Hz.
        #[arg(long, default_value_t = 300e6)]
        f: f64,
    },
    /// Cheapest configuration meeting a per-stage latency budget.
    SearchHw {
        #[arg(long, default_value_t = 9)]
        n: u32,
        #[arg(long, default_value_t = 300e6)]
        f: f64,
        /// Seconds.
        #[arg(long, default_value_t = 1e-6)]
        budget: f64,
    },
    /// Render an SVG from a JSON result file.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(p) => std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Memory(a) => emit(&run_memory(&a.spec()?)?, a.out.as_deref())?,
        Command::Stability(a) => emit(&run_stability(&a.spec()?)?, a.out.as_deref())?,
        Command::Multipatch(a) => {
            let r = run_multipatch(&a.spec()?)?;
            if let Some(c) = &a.csv {
                write_csv(
                    c,
                    "threads,median_shot_ms,mean_shot_ms",
                    r.rows.iter().map(|t| format!("{},{},{}", t.threads, t.median_shot_ms, t.mean_shot_ms)),
                )?;
            }
            emit(&r, a.out.as_deref())?;
        }
        Command::Bandwidth(a) => {
            let rows = run_bandwidth(&a.spec()?)?;
            if let Some(c) = &a.csv {
                write_csv(
                    c,
                    "d,p,shots,raw,residual,ratio",
                    rows.iter().map(|r| {
                        format!(
                            "{},{},{},{},{},{}",
                            r.d, r.p, r.shots, r.stats.raw_defects, r.stats.residual_defects, r.stats.ratio
                        )
                    }),
                )?;
            }
            emit(&rows, a.out.as_deref())?;
        }
        Command::StreamLatency { spec, sweep, trace } => {
            let mut s = spec.spec()?;
            s.trace = trace.is_some();
            let report = match sweep {
                Some(max) => {
                    let bound = 2 * (s.d + 2 * s.buffer());
                    let cands: Vec<usize> = (1..=max).collect();
                    match min_workers(&s, &cands, bound)? {
                        Some((_, r)) => r,
                        None => bail!("no worker count up to {max} keeps up"),
                    }
                }
                None => run_streaming_latency(&s)?,
            };
            if let Some(c) = &spec.csv {
                write_csv(
                    c,
                    "tick,latency_ns",
                    report.latencies_ns.iter().enumerate().map(|(i, l)| format!("{i},{l}")),
                )?;
            }
            if let Some(t) = trace {
                write_trace(&report.trace, BufWriter::new(File::create(t)?))?;
            }
            emit(&report, spec.out.as_deref())?;
        }
        Command::ThresholdScan { spec, stability } => {
            let rows = run_threshold_scan(&spec.spec()?, stability)?;
            if let Some(c) = &spec.csv {
                write_csv(
                    c,
                    "d,p,shots,failures,ler,ci_lo,ci_hi",
                    rows.iter().map(|r| {
                        format!("{},{},{},{},{},{},{}", r.d, r.p, r.shots, r.failures, r.ler, r.ci.lo, r.ci.hi)
                    }),
                )?;
            }
            emit(&rows, spec.out.as_deref())?;
        }
        Command::ExportDataset(a) => {
            let s = a.spec()?;
            let Some(out) = &a.out else { bail!("--out is required") };
            let model = memory_model(s.d, s.rounds(), s.p)?;
            let header = export_dataset(&model, s.shots as usize, s.seed, BufWriter::new(File::create(out)?))?;
            eprintln!("{} samples of {}x{}x{} to {}", header.count, header.window, header.nx, header.ny, out.display());
        }
        Command::EstimateHw { n, k, pe, f } => {
            let (Ok(k), Ok(p)) = (<[u32; 3]>::try_from(k), <[u32; 3]>::try_from(pe)) else {
                bail!("--k and --pe take three values each");
            };
            let cfg = NlduConfig { n, k, p, f };
            let est = estimate_resources(&cfg)?;
            let stages: Vec<f64> = (0..3).map(|i| stage_latency_s(&cfg, i)).collect();
            emit(&serde_json::json!({ "config": cfg, "estimate": est, "stage_latency_s": stages }), None)?;
        }
        Command::SearchHw { n, f, budget } => {
            let cfg = search_config(n, f, budget)?;
            let est = estimate_resources(&cfg)?;
            emit(&serde_json::json!({ "config": cfg, "estimate": est }), None)?;
        }
        Command::Plot { input, out } => plot::render(&input, &out)?,
    }
    Ok(())
}
