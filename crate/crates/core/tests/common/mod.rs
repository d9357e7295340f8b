#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use latte::code_model::{build_dem, build_surface_code, Channel, DecodingModel, NoiseParams};
use latte::nldu::{Compressed, Geometry, QuantLayer, QuantizedModel, Requant, Volume};

pub fn memory(d: usize, rounds: usize, p: f64) -> DecodingModel {
    build_dem(&build_surface_code(d).unwrap(), rounds, NoiseParams::uniform(p)).unwrap()
}

/// Reference-shaped network with random weights and quantization
/// parameters that keep activations away from saturation.
pub fn random_model(rng: &mut ChaCha8Rng) -> QuantizedModel {
    let mut m = QuantizedModel::zeros();
    let mut s_in = 1.0f32;
    let n = m.layers.len();
    for (i, l) in m.layers.iter_mut().enumerate() {
        l.weight_scale = rng.gen_range(0.005..0.05);
        l.act_scale = s_in * l.weight_scale * rng.gen_range(8.0..40.0);
        l.act_zp = if i + 1 == n { 128 } else { rng.gen_range(0..64) };
        for b in &mut l.bias {
            *b = rng.gen_range(-300..300);
        }
        for w in &mut l.weights {
            *w = rng.gen_range(-127..=127);
        }
        s_in = l.act_scale;
    }
    m
}

pub fn random_input(geom: &Geometry, nt: usize, density: f64, rng: &mut ChaCha8Rng) -> Volume {
    let l = geom.layer_size();
    let defects: Vec<u32> = (0..nt * l).filter(|_| rng.gen_bool(density)).map(|d| d as u32).collect();
    geom.embed(&defects, 0, nt).unwrap()
}

/// Direct integer convolution, one output value at a time.
pub fn oracle_layer(layer: &QuantLayer, rq: Requant, zp_in: i32, relu: bool, input: &Volume) -> Volume {
    let [kt, kx, ky] = layer.kernel;
    let mut out = Volume::new(input.nt, input.nx, input.ny, layer.out_ch);
    for t in 0..input.nt as isize {
        for x in 0..input.nx as isize {
            for y in 0..input.ny as isize {
                for k in 0..layer.out_ch {
                    let mut acc = layer.bias[k] as i64;
                    for l in 0..layer.in_ch {
                        for dt in 0..kt {
                            for dx in 0..kx {
                                for dy in 0..ky {
                                    let tt = t + dt as isize - (kt / 2) as isize;
                                    let xx = x + dx as isize - (kx / 2) as isize;
                                    let yy = y + dy as isize - (ky / 2) as isize;
                                    if tt < 0
                                        || xx < 0
                                        || yy < 0
                                        || tt >= input.nt as isize
                                        || xx >= input.nx as isize
                                        || yy >= input.ny as isize
                                    {
                                        continue;
                                    }
                                    let v = input.get(tt as usize, xx as usize, yy as usize, l) as i64 - zp_in as i64;
                                    acc += layer.weight(k, l, dt, dx, dy) as i64 * v;
                                }
                            }
                        }
                    }
                    let r = (acc * rq.m0 + (1i64 << (rq.shift - 1))) >> rq.shift;
                    let lo = if relu { layer.act_zp as i64 } else { 0 };
                    let q = (layer.act_zp as i64 + r).clamp(lo, 255) as u8;
                    out.set(t as usize, x as usize, y as usize, k, q);
                }
            }
        }
    }
    out
}

pub fn oracle(model: &QuantizedModel, input: &Volume) -> Volume {
    let mut v = input.clone();
    for (i, l) in model.layers.iter().enumerate() {
        v = oracle_layer(l, model.requant(i).unwrap(), model.input_quant(i).1, i + 1 < model.layers.len(), &v);
    }
    v
}

/// Random accepted predictions placed only on mapped anchors.
pub fn random_predictions(g: &Geometry, rng: &mut ChaCha8Rng, density: f64) -> Compressed {
    let mut c = Compressed::new(0, g.rounds, g.nx, g.ny);
    let pauli = [Channel::X, Channel::Y, Channel::Z];
    for t in 0..g.rounds {
        for x in 0..g.nx {
            for y in 0..g.ny {
                let mut v = 0u8;
                if rng.gen_bool(density) {
                    let k = rng.gen_range(0..3);
                    if g.edge_at(t, x, y, pauli[k]).is_some() {
                        v |= k as u8 + 1;
                    }
                }
                if rng.gen_bool(density) && g.edge_at(t, x, y, Channel::M).is_some() {
                    v |= 4;
                }
                if rng.gen_bool(density) && g.edge_at(t, x, y, Channel::H).is_some() {
                    v |= 8;
                }
                c.set(t, x, y, v);
            }
        }
    }
    c
}

/// Applies the predicted edges to the model and re-derives detectors.
pub fn global_recompute(m: &DecodingModel, g: &Geometry, c: &Compressed, raw: &[u32]) -> (Vec<u32>, u64) {
    let pauli = [Channel::I, Channel::X, Channel::Y, Channel::Z];
    let mut edges = Vec::new();
    for t in 0..c.nt {
        for x in 0..c.nx {
            for y in 0..c.ny {
                let v = c.cells[(t * c.nx + x) * c.ny + y];
                if v & 3 != 0 {
                    edges.push(g.edge_at(t, x, y, pauli[(v & 3) as usize]).unwrap());
                }
                if v & 4 != 0 {
                    edges.push(g.edge_at(t, x, y, Channel::M).unwrap());
                }
                if v & 8 != 0 {
                    edges.push(g.edge_at(t, x, y, Channel::H).unwrap());
                }
            }
        }
    }
    let (flips, mask) = m.syndrome_of(edges);
    let mut residual: Vec<u32> = raw.iter().copied().filter(|d| flips.binary_search(d).is_err()).collect();
    residual.extend(flips.iter().filter(|d| raw.binary_search(d).is_err()));
    residual.sort_unstable();
    (residual, mask)
}
