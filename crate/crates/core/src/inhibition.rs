//! Lateral inhibition over channel-max maps.
//!
//! For a map `x` and a `k x k` lateral inhibition zone (LIZ) centred on each
//! cell, the inhibition field is
//!
//! ```text
//! x_li[i,j] = a * exp(-mean(LIZ)) + b * sum_uv d_uv * exp(-d_uv) * max(0, x[u,v] - x[i,j])
//! ```
//!
//! with `d_uv` the Euclidean distance from `(i, j)` to `(u, v)` divided by
//! `k`. The map is zero-padded by `k / 2` on every side; padded cells take
//! part in both terms and the mean always divides by `k * k`. A cell
//! survives gating when its value exceeds the L2-normalised field.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ActivationTrace, NetworkSpec};
use crate::saliency::normalize_l2;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiParams {
    /// Weight of the average term.
    pub a: f64,
    /// Weight of the differential term.
    pub b: f64,
    /// Side of the inhibition zone; odd.
    pub k: usize,
}

impl Default for LiParams {
    fn default() -> Self {
        LiParams { a: 0.1, b: 0.9, k: 7 }
    }
}

impl LiParams {
    pub fn new(a: f64, b: f64, k: usize) -> Result<Self> {
        let p = LiParams { a, b, k };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k % 2 == 0 {
            return Err(Error::InvalidArgument(format!(
                "inhibition zone side k must be odd and positive, got {}",
                self.k
            )));
        }
        if !self.a.is_finite() || !self.b.is_finite() {
            return Err(Error::InvalidArgument("a and b must be finite".into()));
        }
        Ok(())
    }
}

/// Which saved tensor of each ReLU layer feeds the inhibition model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiSource {
    #[default]
    Gradient,
    Activation,
}

impl std::str::FromStr for LiSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradient" => Ok(LiSource::Gradient),
            "activation" => Ok(LiSource::Activation),
            _ => Err(Error::InvalidArgument(format!(
                "unknown li_source {s:?}, expected gradient|activation"
            ))),
        }
    }
}

impl std::fmt::Display for LiSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LiSource::Gradient => "gradient",
            LiSource::Activation => "activation",
        })
    }
}

/// Channel-wise maximum of one layer's tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct MaxCMap {
    pub layer: String,
    pub values: Tensor,
}

impl MaxCMap {
    pub fn new(layer: impl Into<String>, tensor: &Tensor) -> Result<Self> {
        Ok(MaxCMap {
            layer: layer.into(),
            values: max_c(tensor)?,
        })
    }
}

/// Views a rank-1 (fully-connected) tensor as `(N, 1, 1)`.
pub(crate) fn as_chw(t: &Tensor) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        [n] => Ok((*n, 1, 1)),
        s => Err(Error::Shape(format!("expected (C, H, W) or (N), got {s:?}"))),
    }
}

/// `out[h, w] = max_c in[c, h, w]`.
pub fn max_c(tensor: &Tensor) -> Result<Tensor> {
    let (c, h, w) = as_chw(tensor)?;
    let plane = h * w;
    let x = tensor.data();
    let mut out = x[..plane].to_vec();
    for ch in 1..c {
        for (o, &v) in out.iter_mut().zip(&x[ch * plane..(ch + 1) * plane]) {
            *o = o.max(v);
        }
    }
    Tensor::new(vec![h, w], out)
}

/// Inhibition strength for every cell of an `(H, W)` map.
pub fn inhibition_field(map: &Tensor, params: &LiParams) -> Result<Tensor> {
    params.validate()?;
    let (h, w) = map.dims2()?;
    let k = params.k;
    let r = (k / 2) as isize;
    let offsets: Vec<(isize, isize, f64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .map(|(dy, dx)| {
            let d = ((dy * dy + dx * dx) as f64).sqrt() / k as f64;
            (dy, dx, d * (-d).exp())
        })
        .collect();
    let x: Vec<f64> = map.data().iter().map(|&v| f64::from(v)).collect();
    let at = |y: isize, xx: isize| -> f64 {
        if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
            0.0
        } else {
            x[y as usize * w + xx as usize]
        }
    };
    let area = (k * k) as f64;
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h as isize {
        for j in 0..w as isize {
            let centre = at(i, j);
            let mut sum = 0.0;
            let mut diff = 0.0;
            for &(dy, dx, weight) in &offsets {
                let v = at(i + dy, j + dx);
                sum += v;
                diff += weight * (v - centre).max(0.0);
            }
            out.push((params.a * (-sum / area).exp() + params.b * diff) as f32);
        }
    }
    Tensor::from_op(vec![h, w], out, "inhibition_field")
}

/// Binary mask: 1 where `map - field > 0`, else 0.
pub fn gate(map: &Tensor, field: &Tensor) -> Result<Tensor> {
    map.dims2()?;
    map.expect_same_shape(field)?;
    let out = map
        .data()
        .iter()
        .zip(field.data())
        .map(|(&m, &f)| if f64::from(m) - f64::from(f) > 0.0 { 1.0 } else { 0.0 })
        .collect();
    Tensor::new(map.shape().to_vec(), out)
}

/// Max-C, inhibition field, L2 normalisation of the field, then gating
/// against the same Max-C map.
pub fn suppression_mask(tensor: &Tensor, params: &LiParams) -> Result<Tensor> {
    let map = max_c(tensor)?;
    let field = inhibition_field(&map, params)?;
    let normalized = normalize_l2(&field);
    gate(&map, &normalized.values)
}

/// One binary `(H, W)` mask per ReLU layer, in forward order.
#[derive(Clone, Debug, PartialEq)]
pub struct SuppressionMaskSet {
    masks: Vec<(String, Tensor)>,
}

impl SuppressionMaskSet {
    /// Validates that every mask holds only 0 and 1.
    pub fn new(masks: Vec<(String, Tensor)>) -> Result<Self> {
        for (name, m) in &masks {
            m.dims2()?;
            if m.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument(format!("mask for {name} is not binary")));
            }
        }
        Ok(SuppressionMaskSet { masks })
    }

    /// A constant mask for every ReLU layer of `spec`.
    pub fn uniform(spec: &NetworkSpec, keep: bool) -> Self {
        let value = if keep { 1.0 } else { 0.0 };
        let masks = spec
            .layers()
            .iter()
            .enumerate()
            .filter(|(_, l)| l.layer == crate::network::Layer::Relu)
            .map(|(i, l)| {
                let s = spec.output_shape(i);
                let (h, w) = if s.len() == 3 { (s[1], s[2]) } else { (1, 1) };
                (l.name.clone(), Tensor::full(vec![h, w], value))
            })
            .collect();
        SuppressionMaskSet { masks }
    }

    pub fn get(&self, layer: &str) -> Option<&Tensor> {
        self.masks.iter().find(|(n, _)| n == layer).map(|(_, m)| m)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.masks.iter().map(|(n, m)| (n.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }
}

/// Builds a suppression mask for every ReLU layer from a trace whose
/// gradients have been filled by `backprop_category`.
pub fn build_suppression_masks(
    trace: &ActivationTrace<'_>,
    params: &LiParams,
    source: LiSource,
) -> Result<SuppressionMaskSet> {
    let masks = trace
        .relus()
        .iter()
        .map(|r| {
            let gradient = r
                .gradient
                .as_ref()
                .ok_or_else(|| Error::MissingGradients(r.layer.clone()))?;
            let input = match source {
                LiSource::Gradient => gradient,
                LiSource::Activation => &r.activation,
            };
            Ok((r.layer.clone(), suppression_mask(input, params)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SuppressionMaskSet { masks })
}
