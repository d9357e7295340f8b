//! Integer inference: a whole-volume reference and the round-by-round
//! streaming pipeline.

use std::collections::VecDeque;

use super::quant::{QuantizedModel, Requant};
use super::{NlduError, Volume};

/// Layer parameters rearranged for the inner loops.
#[derive(Clone, Debug)]
struct Prepared {
    in_ch: usize,
    out_ch: usize,
    kernel: [usize; 3],
    /// `[dt][dx][dy][in][out]`.
    w: Vec<i32>,
    bias: Vec<i32>,
    rq: Requant,
    zp_in: i32,
    zp_out: i32,
    relu: bool,
}

impl Prepared {
    fn all(model: &QuantizedModel) -> Result<Vec<Prepared>, NlduError> {
        model.validate()?;
        let n = model.layers.len();
        model
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let [kt, kx, ky] = l.kernel;
                let mut w = Vec::with_capacity(l.weights.len());
                for dt in 0..kt {
                    for dx in 0..kx {
                        for dy in 0..ky {
                            for li in 0..l.in_ch {
                                for k in 0..l.out_ch {
                                    w.push(l.weight(k, li, dt, dx, dy) as i32);
                                }
                            }
                        }
                    }
                }
                Ok(Prepared {
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    kernel: l.kernel,
                    w,
                    bias: l.bias.clone(),
                    rq: model.requant(i)?,
                    zp_in: model.input_quant(i).1,
                    zp_out: l.act_zp,
                    relu: i + 1 < n,
                })
            })
            .collect()
    }

    #[inline]
    fn finish(&self, acc: i32) -> u8 {
        let lo = if self.relu { self.zp_out as i64 } else { 0 };
        (self.zp_out as i64 + self.rq.apply(acc)).clamp(lo, 255) as u8
    }
}

/// Whole-volume "same" convolution of every layer; out-of-range inputs
/// contribute nothing (they sit at the input zero point).
fn conv_volume(p: &Prepared, input: &Volume) -> Volume {
    let (nt, nx, ny) = (input.nt, input.nx, input.ny);
    let [kt, kx, ky] = p.kernel;
    let (rt, rx, ry) = ((kt / 2) as isize, (kx / 2) as isize, (ky / 2) as isize);
    let mut out = Volume::new(nt, nx, ny, p.out_ch);
    let mut acc = vec![0i32; p.out_ch];
    for t in 0..nt {
        for x in 0..nx {
            for y in 0..ny {
                acc.copy_from_slice(&p.bias);
                for dt in 0..kt {
                    let tt = t as isize + dt as isize - rt;
                    if tt < 0 || tt >= nt as isize {
                        continue;
                    }
                    for dx in 0..kx {
                        let xx = x as isize + dx as isize - rx;
                        if xx < 0 || xx >= nx as isize {
                            continue;
                        }
                        for dy in 0..ky {
                            let yy = y as isize + dy as isize - ry;
                            if yy < 0 || yy >= ny as isize {
                                continue;
                            }
                            let base = input.index(tt as usize, xx as usize, yy as usize, 0);
                            let wbase = ((dt * kx + dx) * ky + dy) * p.in_ch * p.out_ch;
                            for l in 0..p.in_ch {
                                let v = input.data[base + l] as i32 - p.zp_in;
                                if v == 0 {
                                    continue;
                                }
                                let w = &p.w[wbase + l * p.out_ch..wbase + (l + 1) * p.out_ch];
                                for (a, &wk) in acc.iter_mut().zip(w) {
                                    *a += wk * v;
                                }
                            }
                        }
                    }
                }
                let o = out.index(t, x, y, 0);
                for k in 0..p.out_ch {
                    out.data[o + k] = p.finish(acc[k]);
                }
            }
        }
    }
    out
}

/// Reference inference over a complete volume.
pub fn infer_batch(model: &QuantizedModel, input: &Volume) -> Result<Volume, NlduError> {
    let layers = Prepared::all(model)?;
    if input.nc != 2 {
        return Err(NlduError::Shape(format!("input has {} channels", input.nc)));
    }
    let mut v = conv_volume(&layers[0], input);
    for p in &layers[1..] {
        v = conv_volume(p, &v);
    }
    Ok(v)
}

/// One layer consuming time slices in order and emitting its output slices
/// `radius` slices later.
#[derive(Clone, Debug)]
struct LayerStream {
    p: Prepared,
    nx: usize,
    ny: usize,
    radius: usize,
    held: VecDeque<(usize, Vec<u8>)>,
    next_out: usize,
    seen: usize,
}

impl LayerStream {
    fn slice_out(&self, t: usize) -> Vec<u8> {
        let p = &self.p;
        let [kt, kx, ky] = p.kernel;
        let (rx, ry) = ((kx / 2) as isize, (ky / 2) as isize);
        let (nx, ny) = (self.nx, self.ny);
        let taps: Vec<Option<&[u8]>> = (0..kt)
            .map(|dt| {
                let tt = t as isize + dt as isize - self.radius as isize;
                self.held
                    .iter()
                    .find(|(h, _)| *h as isize == tt)
                    .map(|(_, s)| s.as_slice())
            })
            .collect();
        let mut out = vec![0u8; nx * ny * p.out_ch];
        let mut acc = vec![0i32; p.out_ch];
        for x in 0..nx {
            for y in 0..ny {
                acc.copy_from_slice(&p.bias);
                for (dt, tap) in taps.iter().enumerate() {
                    let Some(s) = tap else { continue };
                    for dx in 0..kx {
                        let xx = x as isize + dx as isize - rx;
                        if !(0..nx as isize).contains(&xx) {
                            continue;
                        }
                        for dy in 0..ky {
                            let yy = y as isize + dy as isize - ry;
                            if !(0..ny as isize).contains(&yy) {
                                continue;
                            }
                            let base = (xx as usize * ny + yy as usize) * p.in_ch;
                            let wbase = ((dt * kx + dx) * ky + dy) * p.in_ch * p.out_ch;
                            for l in 0..p.in_ch {
                                let v = s[base + l] as i32 - p.zp_in;
                                if v == 0 {
                                    continue;
                                }
                                for k in 0..p.out_ch {
                                    acc[k] += p.w[wbase + l * p.out_ch + k] * v;
                                }
                            }
                        }
                    }
                }
                let o = (x * ny + y) * p.out_ch;
                for k in 0..p.out_ch {
                    out[o + k] = p.finish(acc[k]);
                }
            }
        }
        out
    }

    fn push(&mut self, slice: Vec<u8>) -> Vec<Vec<u8>> {
        let t = self.seen;
        self.seen += 1;
        self.held.push_back((t, slice));
        let mut out = Vec::new();
        while self.next_out + self.radius <= t {
            out.push(self.slice_out(self.next_out));
            self.next_out += 1;
            self.trim();
        }
        out
    }

    fn finish(&mut self) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        while self.next_out < self.seen {
            out.push(self.slice_out(self.next_out));
            self.next_out += 1;
            self.trim();
        }
        out
    }

    fn trim(&mut self) {
        while let Some((h, _)) = self.held.front() {
            if h + self.radius < self.next_out {
                self.held.pop_front();
            } else {
                break;
            }
        }
    }
}

/// Streaming pipeline: one input slice per round in, one prediction slice
/// per round out after a fixed delay equal to the temporal radius (3 rounds
/// for the reference network).
#[derive(Clone, Debug)]
pub struct StreamInference {
    stages: Vec<LayerStream>,
    emitted: usize,
    slice_len: usize,
}

impl StreamInference {
    pub fn new(model: &QuantizedModel, nx: usize, ny: usize) -> Result<StreamInference, NlduError> {
        let stages = Prepared::all(model)?
            .into_iter()
            .map(|p| LayerStream {
                radius: p.kernel[0] / 2,
                p,
                nx,
                ny,
                held: VecDeque::new(),
                next_out: 0,
                seen: 0,
            })
            .collect();
        Ok(StreamInference {
            stages,
            emitted: 0,
            slice_len: nx * ny * 2,
        })
    }

    pub fn delay(&self) -> usize {
        self.stages.iter().map(|s| s.radius).sum()
    }

    fn cascade(&mut self, from: usize, mut slices: Vec<Vec<u8>>) -> Vec<Vec<u8>> {
        for stage in &mut self.stages[from..] {
            slices = slices.into_iter().flat_map(|s| stage.push(s)).collect();
        }
        slices
    }

    fn number(&mut self, out: Vec<Vec<u8>>) -> Vec<(usize, Vec<u8>)> {
        out.into_iter()
            .map(|s| {
                self.emitted += 1;
                (self.emitted - 1, s)
            })
            .collect()
    }

    /// Feeds the next round's `(x, y, 2)` slice; returns finished output
    /// slices with their round index.
    pub fn push(&mut self, slice: Vec<u8>) -> Result<Vec<(usize, Vec<u8>)>, NlduError> {
        if slice.len() != self.slice_len {
            return Err(NlduError::Shape(format!("slice of {} values, expected {}", slice.len(), self.slice_len)));
        }
        let out = self.cascade(0, vec![slice]);
        Ok(self.number(out))
    }

    /// Flushes the pipeline after the last round: no idle rounds are
    /// inserted, the missing future inputs are treated as padding.
    pub fn finish(&mut self) -> Vec<(usize, Vec<u8>)> {
        let mut out = Vec::new();
        for i in 0..self.stages.len() {
            let flushed = self.stages[i].finish();
            let mut cascaded = self.cascade(i + 1, flushed);
            out.append(&mut cascaded);
        }
        self.number(out)
    }

    /// Runs a full volume through the pipeline.
    pub fn run(model: &QuantizedModel, input: &Volume) -> Result<Volume, NlduError> {
        let mut s = StreamInference::new(model, input.nx, input.ny)?;
        let mut out = Volume::new(input.nt, input.nx, input.ny, 6);
        let n = out.slice_len();
        let mut place = |items: Vec<(usize, Vec<u8>)>| {
            for (t, sl) in items {
                out.data[t * n..(t + 1) * n].copy_from_slice(&sl);
            }
        };
        for t in 0..input.nt {
            place(s.push(input.slice(t).to_vec())?);
        }
        place(s.finish());
        Ok(out)
    }
}
