//! Empirical FPGA resource and latency model of the NLDU and the per-layer
//! configuration search.

use serde::{Deserialize, Serialize};

use super::NlduError;

/// Fixed pipeline delay of the three inference stages.
pub const PIPELINE_DELAY_S: f64 = 3e-6;
/// Clock cycles per processing-element pass.
const CYCLES_PER_PASS: f64 = 28.0;
/// Largest PE count tried per layer.
const SEARCH_GRID: u32 = 90;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NlduConfig {
    /// Patch extent handled by one board.
    pub n: u32,
    /// Output channels of layers 1..3 (the input has 2).
    pub k: [u32; 3],
    /// Parallel processing elements of layers 1..3.
    pub p: [u32; 3],
    /// Clock frequency in Hz.
    pub f: f64,
}

impl NlduConfig {
    pub fn reference() -> NlduConfig {
        NlduConfig {
            n: 9,
            k: [7, 7, 7],
            p: [52, 33, 27],
            f: 300e6,
        }
    }

    fn validate(&self) -> Result<(), NlduError> {
        if self.n == 0 || self.k.contains(&0) || self.p.contains(&0) {
            return Err(NlduError::Config(format!("{self:?}")));
        }
        if !(self.f > 0.0 && self.f.is_finite()) {
            return Err(NlduError::Config(format!("clock {}", self.f)));
        }
        Ok(())
    }

    fn k_in(&self, i: usize) -> u64 {
        if i == 0 {
            2
        } else {
            self.k[i - 1] as u64
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub lut: u64,
    pub reg: u64,
    /// End-to-end latency in seconds.
    pub ltc_s: f64,
}

/// Cells processed by stage `i` (0-based): the board plus the halo still
/// needed by later layers.
fn stage_cells(n: u32, i: usize) -> u64 {
    let side = n as u64 + 2 * (2 - i as u64);
    side * side
}

/// Latency of stage `i` (0-based).
pub fn stage_latency_s(cfg: &NlduConfig, i: usize) -> f64 {
    CYCLES_PER_PASS / cfg.f * stage_cells(cfg.n, i).div_ceil(cfg.p[i] as u64) as f64
}

pub fn estimate_resources(cfg: &NlduConfig) -> Result<ResourceEstimate, NlduError> {
    cfg.validate()?;
    let n2 = (cfg.n as u64).pow(2);
    let out = 16 * cfg.k[2] as u64 * n2;
    let mut lut = out;
    let mut reg = out;
    let mut passes = 3u64;
    for i in 0..3 {
        let p = cfg.p[i] as u64;
        lut += 7 * p * (40 * cfg.k_in(i) + 1);
        reg += 56 * p * (1 + cfg.k_in(i));
        passes += stage_cells(cfg.n, i).div_ceil(p);
    }
    Ok(ResourceEstimate {
        lut,
        reg,
        ltc_s: PIPELINE_DELAY_S + CYCLES_PER_PASS / cfg.f * passes as f64,
    })
}

/// Cheapest PE counts (LUT + REG) with every stage under `budget_s`,
/// searching `1..=90` per layer at fixed channel counts of 7.
pub fn search_config(n: u32, f: f64, budget_s: f64) -> Result<NlduConfig, NlduError> {
    let mut cfg = NlduConfig {
        n,
        k: [7, 7, 7],
        p: [1, 1, 1],
        f,
    };
    cfg.validate()?;
    for i in 0..3 {
        let mut best: Option<(u64, u32)> = None;
        for p in 1..=SEARCH_GRID {
            cfg.p[i] = p;
            if stage_latency_s(&cfg, i) >= budget_s {
                continue;
            }
            let p = p as u64;
            let cost = 7 * p * (40 * cfg.k_in(i) + 1) + 56 * p * (1 + cfg.k_in(i));
            if best.is_none_or(|(c, _)| cost < c) {
                best = Some((cost, p as u32));
            }
        }
        cfg.p[i] = best.ok_or(NlduError::Infeasible(budget_s))?.1;
    }
    Ok(cfg)
}
