//! INT8 model parameters, fixed-point requantization and the LNW1 weights
//! file.

use std::io::{Read, Write};
use std::path::Path;

use super::NlduError;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LNW1";

/// Fixed-point multiplier: `v * M ~= (v * m0 + 2^(shift-1)) >> shift`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Requant {
    pub m0: i64,
    pub shift: u32,
}

impl Requant {
    pub fn from_real(m: f64) -> Result<Requant, NlduError> {
        if !(m.is_finite() && m >= 0.0) {
            return Err(NlduError::Format(format!("requantization multiplier {m}")));
        }
        if m == 0.0 {
            return Ok(Requant { m0: 0, shift: 31 });
        }
        // m = frac * 2^exp with frac in [0.5, 1)
        let mut exp = m.log2().floor() as i32 + 1;
        let mut frac = m / 2f64.powi(exp);
        if frac >= 1.0 {
            frac /= 2.0;
            exp += 1;
        } else if frac < 0.5 {
            frac *= 2.0;
            exp -= 1;
        }
        let mut m0 = (frac * (1u64 << 31) as f64).round() as i64;
        if m0 == 1 << 31 {
            m0 /= 2;
            exp += 1;
        }
        let shift = 31 - exp;
        if !(1..=62).contains(&shift) {
            return Err(NlduError::Format(format!("requantization multiplier {m} out of range")));
        }
        Ok(Requant { m0, shift: shift as u32 })
    }

    #[inline]
    pub fn apply(&self, acc: i32) -> i64 {
        (acc as i64 * self.m0 + (1i64 << (self.shift - 1))) >> self.shift
    }
}

/// One convolution layer with kernel `(kt, kx, ky)` over `(t, x, y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantLayer {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: [usize; 3],
    pub weight_scale: f32,
    /// Scale and zero point of this layer's UINT8 output.
    pub act_scale: f32,
    pub act_zp: i32,
    pub bias: Vec<i32>,
    /// `[out][in][kt][kx][ky]`.
    pub weights: Vec<i8>,
}

impl QuantLayer {
    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    #[inline]
    pub fn weight(&self, k: usize, l: usize, dt: usize, dx: usize, dy: usize) -> i8 {
        let [_, kx, ky] = self.kernel;
        self.weights[(((k * self.in_ch + l) * self.kernel[0] + dt) * kx + dx) * ky + dy]
    }

    pub fn params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedModel {
    pub layers: Vec<QuantLayer>,
}

impl QuantizedModel {
    /// Checks that layers chain from 2 input channels to 6 outputs with odd
    /// kernels and sane quantization parameters.
    pub fn validate(&self) -> Result<(), NlduError> {
        let shape = |m: String| Err(NlduError::Shape(m));
        if self.layers.is_empty() {
            return shape("no layers".into());
        }
        let mut ch = 2;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_ch != ch {
                return shape(format!("layer {i} expects {} input channels, got {ch}", l.in_ch));
            }
            if l.kernel.iter().any(|&k| k % 2 == 0) {
                return shape(format!("layer {i} kernel {:?} is not odd", l.kernel));
            }
            if l.bias.len() != l.out_ch || l.weights.len() != l.out_ch * l.in_ch * l.kernel_volume() {
                return shape(format!("layer {i} parameter counts"));
            }
            if !(l.weight_scale > 0.0 && l.weight_scale.is_finite() && l.act_scale > 0.0 && l.act_scale.is_finite()) {
                return Err(NlduError::Format(format!("layer {i} scales")));
            }
            if !(0..=255).contains(&l.act_zp) {
                return Err(NlduError::Format(format!("layer {i} zero point {}", l.act_zp)));
            }
            ch = l.out_ch;
        }
        if ch != 6 {
            return shape(format!("model outputs {ch} channels, expected 6"));
        }
        Ok(())
    }

    /// The four-layer network: three 3x3x3 layers (2->7->7->7) and a 1x1x1
    /// layer 7->6.
    pub fn has_reference_shape(&self) -> bool {
        let want = [(2, 7, 3), (7, 7, 3), (7, 7, 3), (7, 6, 1)];
        self.layers.len() == 4
            && self
                .layers
                .iter()
                .zip(want)
                .all(|(l, (i, o, k))| l.in_ch == i && l.out_ch == o && l.kernel == [k; 3])
    }

    pub fn params(&self) -> usize {
        self.layers.iter().map(|l| l.params()).sum()
    }

    /// Temporal half-width of the receptive field.
    pub fn temporal_radius(&self) -> usize {
        self.layers.iter().map(|l| l.kernel[0] / 2).sum()
    }

    /// Input scale and zero point of layer `i`.
    pub fn input_quant(&self, i: usize) -> (f64, i32) {
        if i == 0 {
            (1.0, 0)
        } else {
            (self.layers[i - 1].act_scale as f64, self.layers[i - 1].act_zp)
        }
    }

    pub fn requant(&self, i: usize) -> Result<Requant, NlduError> {
        let (s_in, _) = self.input_quant(i);
        let l = &self.layers[i];
        Requant::from_real(s_in * l.weight_scale as f64 / l.act_scale as f64)
    }

    /// Integer threshold equivalent to a sigmoid confidence of 0.8 (logit
    /// ln 4) on the output layer's grid.
    pub fn threshold(&self) -> i32 {
        let l = self.layers.last().expect("validated");
        (4f64.ln() / l.act_scale as f64).round() as i32 + l.act_zp
    }

    /// All-zero weights and biases with unit scales.
    pub fn zeros() -> QuantizedModel {
        let spec = [(2, 7, 3), (7, 7, 3), (7, 7, 3), (7, 6, 1)];
        QuantizedModel {
            layers: spec
                .iter()
                .map(|&(i, o, k)| QuantLayer {
                    in_ch: i,
                    out_ch: o,
                    kernel: [k; 3],
                    weight_scale: 1.0,
                    act_scale: 1.0,
                    act_zp: 0,
                    bias: vec![0; o],
                    weights: vec![0; o * i * k * k * k],
                })
                .collect(),
        }
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), NlduError> {
        self.validate()?;
        let mut buf = Vec::new();
        buf.extend_from_slice(WEIGHTS_MAGIC);
        buf.push(u8::try_from(self.layers.len()).map_err(|_| NlduError::Format("too many layers".into()))?);
        for l in &self.layers {
            let small = |v: usize| u8::try_from(v).map_err(|_| NlduError::Format(format!("dimension {v} exceeds u8")));
            buf.push(small(l.in_ch)?);
            buf.push(small(l.out_ch)?);
            for &k in &l.kernel {
                buf.push(small(k)?);
            }
            buf.extend_from_slice(&l.weight_scale.to_le_bytes());
            buf.extend_from_slice(&l.act_scale.to_le_bytes());
            buf.extend_from_slice(&l.act_zp.to_le_bytes());
            for b in &l.bias {
                buf.extend_from_slice(&b.to_le_bytes());
            }
            buf.extend(l.weights.iter().map(|&v| v as u8));
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<QuantizedModel, NlduError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], NlduError> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| NlduError::Format(format!("truncated at byte {pos}")))?;
            pos += n;
            Ok(s)
        };
        if take(4)? != WEIGHTS_MAGIC {
            return Err(NlduError::Format("bad magic".into()));
        }
        let count = take(1)?[0] as usize;
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let h = take(5)?.to_vec();
            let (in_ch, out_ch) = (h[0] as usize, h[1] as usize);
            let kernel = [h[2] as usize, h[3] as usize, h[4] as usize];
            let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            let weight_scale = f(take(4)?);
            let act_scale = f(take(4)?);
            let act_zp = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
            let bias = take(4 * out_ch)?
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let n = out_ch * in_ch * kernel.iter().product::<usize>();
            let weights = take(n)?.iter().map(|&b| b as i8).collect();
            layers.push(QuantLayer {
                in_ch,
                out_ch,
                kernel,
                weight_scale,
                act_scale,
                act_zp,
                bias,
                weights,
            });
        }
        if pos != bytes.len() {
            return Err(NlduError::Format(format!("{} trailing bytes", bytes.len() - pos)));
        }
        let m = QuantizedModel { layers };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<QuantizedModel, NlduError> {
        QuantizedModel::read(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NlduError> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    /// The weights shipped with the crate.
    pub fn shipped() -> QuantizedModel {
        QuantizedModel::read(&include_bytes!("../../assets/nldu.lnw")[..]).expect("shipped weights are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requant_matches_real_multiplication() {
        for &m in &[0.5, 0.123456, 1.0, 3.75, 1e-4, 0.9999999] {
            let r = Requant::from_real(m).unwrap();
            for acc in [-100_000, -3, 0, 1, 7, 12_345, 1_000_000] {
                let exact = acc as f64 * m;
                assert!((r.apply(acc) as f64 - exact).abs() <= 0.5 + 1e-6 * exact.abs(), "{m} {acc}");
            }
        }
        assert!(Requant::from_real(-1.0).is_err());
        assert_eq!(Requant::from_real(0.0).unwrap().apply(123), 0);
    }

    #[test]
    fn zero_model_round_trips() {
        let m = QuantizedModel::zeros();
        assert!(m.has_reference_shape());
        let mut a = Vec::new();
        m.write(&mut a).unwrap();
        let back = QuantizedModel::read(&a[..]).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        back.write(&mut b).unwrap();
        assert_eq!(a, b);
        assert!(QuantizedModel::read(&a[..a.len() - 1]).is_err());
    }
}
