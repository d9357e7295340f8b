//! The NLDU as a round-by-round predecoder in front of the block decoders.

use std::collections::VecDeque;

use super::infer::{infer_batch, StreamInference};
use super::post::{classify, post_process, residual_round, round_logical, Compressed, PostResult};
use super::quant::QuantizedModel;
use super::{Geometry, NlduError, Volume};
use crate::code_model::{DecodingModel, TimeBoundary};
use crate::scheduler::{PredecodedRound, RoundPredecoder};

/// Whole-shot predecoding with the batch reference: sorted global raw
/// defects in, residual defects and local logical flips out.
pub fn predecode(geom: &Geometry, model: &QuantizedModel, defects: &[u32]) -> Result<PostResult, NlduError> {
    let input = geom.embed(defects, 0, geom.rounds)?;
    let pred = infer_batch(model, &input)?;
    let comp = classify(&pred, geom, model.threshold(), 0);
    Ok(post_process(geom, &comp, defects))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PredecodeStats {
    pub rounds: usize,
    pub raw_defects: usize,
    pub residual_defects: usize,
    pub accepted: usize,
}

impl PredecodeStats {
    /// Residual over raw defect count; 0 for a silent stream.
    pub fn residual_ratio(&self) -> f64 {
        if self.raw_defects == 0 {
            0.0
        } else {
            self.residual_defects as f64 / self.raw_defects as f64
        }
    }
}

pub struct NlduPredecoder {
    geom: Geometry,
    stream: StreamInference,
    threshold: i32,
    /// Raw layer-local defects of rounds not yet emitted.
    raw: VecDeque<(u32, Vec<u32>)>,
    /// Classified slices from the oldest round still referenced.
    comp: Compressed,
    /// Future slices a round's residual depends on.
    lookahead: usize,
    pub stats: PredecodeStats,
}

impl NlduPredecoder {
    pub fn new(model: &DecodingModel, weights: &QuantizedModel) -> Result<NlduPredecoder, NlduError> {
        let geom = Geometry::new(model);
        let stream = StreamInference::new(weights, geom.nx, geom.ny)?;
        Ok(NlduPredecoder {
            stream,
            threshold: weights.threshold(),
            raw: VecDeque::new(),
            comp: Compressed::new(0, 0, geom.nx, geom.ny),
            lookahead: match model.time_boundary {
                TimeBoundary::Closed => 0,
                TimeBoundary::Open => 1,
            },
            geom,
            stats: PredecodeStats::default(),
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    /// Rounds between a round's arrival and its residual.
    pub fn delay(&self) -> usize {
        self.stream.delay() + self.lookahead
    }

    fn absorb(&mut self, slices: Vec<(usize, Vec<u8>)>) {
        for (t, s) in slices {
            let v = Volume {
                nt: 1,
                nx: self.geom.nx,
                ny: self.geom.ny,
                nc: 6,
                data: s,
            };
            let c = classify(&v, &self.geom, self.threshold, t);
            self.stats.accepted += c.accepted();
            if self.comp.nt == 0 {
                self.comp = c;
            } else {
                self.comp.extend(&c);
            }
        }
    }

    fn emit(&mut self, all: bool) -> Vec<PredecodedRound> {
        let mut out = Vec::new();
        let covered = self.comp.t0 + self.comp.nt;
        while let Some(&(r, _)) = self.raw.front() {
            let t = r as usize;
            if !all && t + self.lookahead >= covered {
                break;
            }
            let (_, locals) = self.raw.pop_front().expect("front");
            let base = (t * self.geom.layer_size()) as u32;
            let residual: Vec<u32> = residual_round(&self.geom, &self.comp, &locals, t)
                .into_iter()
                .map(|l| base + l)
                .collect();
            self.stats.rounds += 1;
            self.stats.raw_defects += locals.len();
            self.stats.residual_defects += residual.len();
            out.push(PredecodedRound {
                round: r,
                defects: residual,
                logical: round_logical(&self.geom, &self.comp, t),
            });
            // hooks reach one round back
            self.comp.drop_before(t.saturating_sub(1).max(self.comp.t0));
        }
        out
    }

    fn try_push(&mut self, round: u32, defects: &[u32]) -> Result<Vec<PredecodedRound>, NlduError> {
        let base = round * self.geom.layer_size() as u32;
        let locals: Vec<u32> = defects.iter().map(|&d| d - base).collect();
        let slice = self.geom.embed_round(&locals)?;
        self.raw.push_back((round, locals));
        let ready = self.stream.push(slice)?;
        self.absorb(ready);
        Ok(self.emit(false))
    }
}

impl RoundPredecoder for NlduPredecoder {
    fn push_round(&mut self, round: u32, defects: &[u32]) -> Vec<PredecodedRound> {
        self.try_push(round, defects).expect("round matches the model geometry")
    }

    fn finish(&mut self) -> Vec<PredecodedRound> {
        let rest = self.stream.finish();
        self.absorb(rest);
        self.emit(true)
    }
}
