//! Learned parameters and the `LISW` weight file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "LISW" | u32 version = 1 | u32 entry count
//! per entry: u16 name length | UTF-8 name | u8 dtype (0 = f32) | u8 rank
//!            | u32 dims[rank] | raw little-endian payload
//! ```
//!
//! Every learnable layer contributes two entries, `<layer>.weight` followed
//! by `<layer>.bias`, in forward order.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const WEIGHT_MAGIC: &[u8; 4] = b"LISW";
pub const WEIGHT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    /// Kaiming-uniform draw: weights from `U(-sqrt(6 / fan_in), +sqrt(6 / fan_in))`,
    /// biases from `U(-1 / sqrt(fan_in), +1 / sqrt(fan_in))`.
    pub fn kaiming_uniform(weight_shape: &[usize], bias_shape: &[usize], rng: &mut impl Rng) -> Self {
        let fan_in = fan_in(weight_shape);
        let w_bound = (6.0 / fan_in as f64).sqrt() as f32;
        let b_bound = (1.0 / fan_in as f64).sqrt() as f32;
        let weight = Tensor::from_fn(weight_shape.to_vec(), |_| rng.gen_range(-w_bound..=w_bound))
            .expect("valid weight shape");
        let bias = Tensor::from_fn(bias_shape.to_vec(), |_| rng.gen_range(-b_bound..=b_bound))
            .expect("valid bias shape");
        LayerParams { weight, bias }
    }
}

/// Inputs feeding each output unit of a weight tensor shaped
/// `(out, in, kh, kw)` or `(out, in)`.
pub fn fan_in(weight_shape: &[usize]) -> usize {
    weight_shape[1..].iter().product()
}

/// Standard deviation of the weight initialisation for a layer with this
/// fan-in (`bound / sqrt(3)` = `sqrt(2 / fan_in)`).
pub fn init_weight_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    layers: Vec<(String, LayerParams)>,
}

impl NetworkWeights {
    pub fn from_layers(layers: Vec<(String, LayerParams)>) -> Self {
        NetworkWeights { layers }
    }

    /// Fresh seeded initialisation for every learnable layer of `spec`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .learnable_layers()
            .into_iter()
            .map(|(name, ws, bs)| (name.to_string(), LayerParams::kaiming_uniform(&ws, &bs, &mut rng)))
            .collect();
        NetworkWeights { layers }
    }

    pub fn layers(&self) -> &[(String, LayerParams)] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [(String, LayerParams)] {
        &mut self.layers
    }

    pub fn get(&self, layer: &str) -> Option<&LayerParams> {
        self.layers.iter().find(|(n, _)| n == layer).map(|(_, p)| p)
    }

    pub fn get_mut(&mut self, layer: &str) -> Option<&mut LayerParams> {
        self.layers.iter_mut().find(|(n, _)| n == layer).map(|(_, p)| p)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|(_, p)| p.weight.len() + p.bias.len()).sum()
    }

    /// Checks that names and shapes match `spec` exactly, in order.
    pub fn validate(&self, spec: &NetworkSpec) -> Result<()> {
        let expected = spec.learnable_layers();
        if expected.len() != self.layers.len() {
            return Err(Error::WeightFormat(format!(
                "spec has {} learnable layers, weights have {}",
                expected.len(),
                self.layers.len()
            )));
        }
        for ((name, ws, bs), (have_name, params)) in expected.iter().zip(&self.layers) {
            if name != have_name {
                return Err(Error::WeightFormat(format!(
                    "expected layer {name}, found {have_name}"
                )));
            }
            for (want, have) in [(ws, &params.weight), (bs, &params.bias)] {
                if want.as_slice() != have.shape() {
                    return Err(Error::WeightShape {
                        layer: name.to_string(),
                        expected: want.clone(),
                        found: have.shape().to_vec(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.parameter_count() + 64 * self.layers.len());
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&(2 * self.layers.len() as u32).to_le_bytes());
        for (name, params) in &self.layers {
            for (suffix, t) in [("weight", &params.weight), ("bias", &params.bias)] {
                let full = format!("{name}.{suffix}");
                out.extend_from_slice(&(full.len() as u16).to_le_bytes());
                out.extend_from_slice(full.as_bytes());
                out.push(DTYPE_F32);
                out.push(t.rank() as u8);
                for &d in t.shape() {
                    out.extend_from_slice(&(d as u32).to_le_bytes());
                }
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parses a complete weight file. Nothing is returned unless every entry
    /// decodes and the byte stream is fully consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(Error::WeightFormat("bad magic, expected LISW".into()));
        }
        let version = r.u32()?;
        if version != WEIGHT_VERSION {
            return Err(Error::WeightFormat(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        if count % 2 != 0 {
            return Err(Error::WeightFormat(format!(
                "entry count {count} is odd; every layer has a weight and a bias"
            )));
        }
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::WeightFormat("entry name is not UTF-8".into()))?
                .to_string();
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::WeightFormat(format!("{name}: unsupported dtype tag {dtype}")));
            }
            let rank = r.u8()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape.is_empty() || shape.iter().any(|&d| d == 0) {
                return Err(Error::WeightFormat(format!("{name}: invalid shape {shape:?}")));
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(4))
                .ok_or_else(|| Error::WeightFormat(format!("{name}: shape {shape:?} overflows")))?;
            let payload = r.take(n)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::WeightFormat(format!("{name}: {e}")))?;
            entries.push((name, tensor));
        }
        if r.pos != bytes.len() {
            return Err(Error::WeightFormat(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - r.pos
            )));
        }
        let mut layers = Vec::with_capacity(count / 2);
        let mut it = entries.into_iter();
        while let (Some((wn, weight)), Some((bn, bias))) = (it.next(), it.next()) {
            let layer = wn
                .strip_suffix(".weight")
                .ok_or_else(|| Error::WeightFormat(format!("expected a .weight entry, found {wn}")))?;
            if bn != format!("{layer}.bias") {
                return Err(Error::WeightFormat(format!(
                    "expected {layer}.bias after {wn}, found {bn}"
                )));
            }
            layers.push((layer.to_string(), LayerParams { weight, bias }));
        }
        Ok(NetworkWeights { layers })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a weight file without checking it against a topology.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Reads a weight file and validates it against `spec`.
    pub fn load(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Self> {
        let weights = Self::read(path)?;
        weights.validate(spec)?;
        Ok(weights)
    }

    /// SHA-256 of the serialized form, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::WeightFormat(format!(
                "truncated file: needed {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
