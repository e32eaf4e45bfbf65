//! Category attention maps and fused saliency maps.
//!
//! An attention map is built by back-propagating one category through a
//! traced pass, turning every ReLU gradient into a suppression mask, running
//! a second pass with those masks applied, and summing the per-layer Sum-C
//! maps at input resolution. A saliency map sums the attention maps of the
//! top predicted categories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inhibition::{as_chw, build_suppression_masks, LiParams, LiSource, SuppressionMaskSet};
use crate::network::{forward_traced, run_forward, ActivationTrace, ForwardOutput, NetworkSpec, NetworkWeights, Tap};
use crate::tensor::Tensor;

/// Norms below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Result of [`normalize_l2`].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalized {
    pub values: Tensor,
    /// Set when the input norm was below [`DEGENERATE_NORM`]; `values` is
    /// then the unchanged input.
    pub degenerate: bool,
}

pub fn normalize_l2(map: &Tensor) -> Normalized {
    let norm = map.l2_norm();
    if norm < DEGENERATE_NORM {
        return Normalized {
            values: map.clone(),
            degenerate: true,
        };
    }
    let data = map
        .data()
        .iter()
        .map(|&v| (f64::from(v) / norm) as f32)
        .collect();
    Normalized {
        values: Tensor::from_parts_unchecked(map.shape().to_vec(), data),
        degenerate: false,
    }
}

/// `out[h, w] = sum_c in[c, h, w]`, accumulated in `f64`. Rank-1 tensors
/// are read as `(N, 1, 1)`.
pub fn sum_c(tensor: &Tensor) -> Result<Tensor> {
    let (c, h, w) = as_chw(tensor)?;
    let plane = h * w;
    let x = tensor.data();
    let mut acc = vec![0.0f64; plane];
    for ch in 0..c {
        for (a, &v) in acc.iter_mut().zip(&x[ch * plane..(ch + 1) * plane]) {
            *a += f64::from(v);
        }
    }
    Tensor::from_op(vec![h, w], acc.into_iter().map(|v| v as f32).collect(), "sum_c")
}

/// Bilinear resize with corner-aligned sampling: output corners sample the
/// input corners exactly.
pub fn resize_bilinear(map: &Tensor, target: (usize, usize)) -> Result<Tensor> {
    let (h, w) = map.dims2()?;
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(Error::InvalidArgument(format!("resize target {target:?} must be positive")));
    }
    let coords = |n: usize, tn: usize| -> Vec<(usize, usize, f64)> {
        (0..tn)
            .map(|t| {
                let s = if tn > 1 { t as f64 * (n - 1) as f64 / (tn - 1) as f64 } else { 0.0 };
                let lo = (s.floor() as usize).min(n - 1);
                let hi = (lo + 1).min(n - 1);
                (lo, hi, s - lo as f64)
            })
            .collect()
    };
    let ys = coords(h, th);
    let xs = coords(w, tw);
    let x = map.data();
    let at = |r: usize, c: usize| f64::from(x[r * w + c]);
    let mut out = Vec::with_capacity(th * tw);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    Tensor::from_op(vec![th, tw], out, "resize_bilinear")
}

/// Second forward pass: after each ReLU, every spatial location whose mask
/// cell is 0 is zeroed across all channels before feeding the next layer.
pub fn masked_forward(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    image: &Tensor,
    masks: &SuppressionMaskSet,
) -> Result<ForwardOutput> {
    let names = spec.relu_layers();
    run_forward(spec, weights, image, |i, y| {
        let name = names[i];
        let mask = masks.get(name).ok_or_else(|| Error::MissingMask(name.to_string()))?;
        let (c, h, w) = as_chw(y)?;
        if mask.shape() != [h, w] {
            return Err(Error::Shape(format!(
                "mask for {name} has shape {:?}, layer is {h}x{w}",
                mask.shape()
            )));
        }
        let plane = h * w;
        let m = mask.data();
        let data = y.data_mut();
        for ch in 0..c {
            for (v, &keep) in data[ch * plane..(ch + 1) * plane].iter_mut().zip(m) {
                if keep == 0.0 {
                    *v = 0.0;
                }
            }
        }
        Ok(())
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SaliencyConfig {
    pub a: f64,
    pub b: f64,
    pub k: usize,
    pub tap: Tap,
    pub li_source: LiSource,
    /// Skip fully-connected ReLUs, whose 1x1 Sum-C maps only add a constant.
    pub spatial_layers_only: bool,
    /// Number of top categories fused into a saliency map.
    pub top_k: usize,
}

impl Default for SaliencyConfig {
    fn default() -> Self {
        let li = LiParams::default();
        SaliencyConfig {
            a: li.a,
            b: li.b,
            k: li.k,
            tap: Tap::default(),
            li_source: LiSource::default(),
            spatial_layers_only: true,
            top_k: 5,
        }
    }
}

impl SaliencyConfig {
    pub fn li_params(&self) -> Result<LiParams> {
        LiParams::new(self.a, self.b, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        self.li_params()?;
        if self.top_k == 0 {
            return Err(Error::InvalidArgument("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    /// `(H_in, W_in)`, unit L2 norm unless `degenerate`.
    pub values: Tensor,
    pub category: usize,
    pub tap: Tap,
    pub li_source: LiSource,
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub values: Tensor,
    /// Fused categories, highest probability first.
    pub categories: Vec<usize>,
    pub degenerate: bool,
}

/// Sums the per-layer Sum-C maps of `relus`, each L2-normalised and resized
/// to input resolution, and normalises the total.
pub fn combine_layer_maps(
    spec: &NetworkSpec,
    relus: &[Tensor],
    spatial_layers_only: bool,
) -> Result<Normalized> {
    let [_, h, w] = spec.input_shape();
    let mut acc = vec![0.0f64; h * w];
    for r in relus {
        if spatial_layers_only && r.rank() != 3 {
            continue;
        }
        let layer = normalize_l2(&sum_c(r)?);
        let resized = resize_bilinear(&layer.values, (h, w))?;
        for (a, &v) in acc.iter_mut().zip(resized.data()) {
            *a += f64::from(v);
        }
    }
    Ok(normalize_l2(&from_f64(vec![h, w], &acc)?))
}

fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Tensor> {
    Tensor::from_op(shape, values.iter().map(|&v| v as f32).collect(), "saliency")
}

/// Attention map for `category` from an existing trace. The trace's
/// gradients are overwritten.
pub fn attention_from_trace(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    image: &Tensor,
    trace: &mut ActivationTrace<'_>,
    category: usize,
    cfg: &SaliencyConfig,
) -> Result<AttentionMap> {
    let params = cfg.li_params()?;
    trace.backprop_category(category, cfg.tap)?;
    let masks = build_suppression_masks(trace, &params, cfg.li_source)?;
    let second = masked_forward(spec, weights, image, &masks)?;
    let combined = combine_layer_maps(spec, &second.relus, cfg.spatial_layers_only)?;
    Ok(AttentionMap {
        values: combined.values,
        category,
        tap: cfg.tap,
        li_source: cfg.li_source,
        degenerate: combined.degenerate,
    })
}

pub fn attention_map(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    image: &Tensor,
    category: usize,
    cfg: &SaliencyConfig,
) -> Result<AttentionMap> {
    cfg.validate()?;
    let mut trace = forward_traced(spec, weights, image)?;
    attention_from_trace(spec, weights, image, &mut trace, category, cfg)
}

/// Sums maps of equal shape and normalises the result.
pub fn fuse(maps: &[&Tensor]) -> Result<Normalized> {
    let first = maps
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    let mut acc = vec![0.0f64; first.len()];
    for m in maps {
        first.expect_same_shape(m)?;
        for (a, &v) in acc.iter_mut().zip(m.data()) {
            *a += f64::from(v);
        }
    }
    Ok(normalize_l2(&from_f64(first.shape().to_vec(), &acc)?))
}

/// Fuses the attention maps of the `min(top_k, classes)` most probable
/// categories, each computed independently from one shared forward pass.
pub fn saliency_map(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    image: &Tensor,
    cfg: &SaliencyConfig,
) -> Result<SaliencyMap> {
    cfg.validate()?;
    let mut trace = forward_traced(spec, weights, image)?;
    let categories = trace.top_k(cfg.top_k);
    let maps = categories
        .iter()
        .map(|&c| attention_from_trace(spec, weights, image, &mut trace, c, cfg))
        .collect::<Result<Vec<_>>>()?;
    let fused = fuse(&maps.iter().map(|m| &m.values).collect::<Vec<_>>())?;
    Ok(SaliencyMap {
        values: fused.values,
        categories,
        degenerate: fused.degenerate,
    })
}

/// Fraction of the map's total mass inside the box `(x, y, w, h)`, clipped
/// to the map. Zero for an all-zero map.
pub fn mass_in_box(map: &Tensor, bx: usize, by: usize, bw: usize, bh: usize) -> Result<f64> {
    let (h, w) = map.dims2()?;
    let total = map.sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let mut inside = 0.0;
    for y in by.min(h)..(by + bh).min(h) {
        for x in bx.min(w)..(bx + bw).min(w) {
            inside += f64::from(map.data()[y * w + x]);
        }
    }
    Ok(inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_c_examples() {
        let one = Tensor::new(vec![1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(sum_c(&one).unwrap().data(), one.data());
        let ones = Tensor::full(vec![2, 2, 2], 1.0);
        assert_eq!(sum_c(&ones).unwrap().data(), &[2.0; 4]);
    }

    #[test]
    fn normalize_examples() {
        let n = normalize_l2(&Tensor::vector(&[3.0, 4.0]).unwrap());
        assert_eq!(n.values.data(), &[0.6, 0.8]);
        assert!(!n.degenerate);
        let z = normalize_l2(&Tensor::zeros(vec![3, 3]));
        assert!(z.degenerate);
        assert!(z.values.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn resize_corner_aligned() {
        let m = Tensor::new(vec![2, 2], vec![0., 1., 0., 1.]).unwrap();
        let r = resize_bilinear(&m, (2, 4)).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in 0..2 {
            for (c, &v) in want.iter().enumerate() {
                assert!((r.get(&[row, c]) - v as f32).abs() < 1e-7);
            }
        }
        let single = Tensor::full(vec![1, 1], 2.5);
        let big = resize_bilinear(&single, (5, 3)).unwrap();
        assert!(big.data().iter().all(|&v| v == 2.5));
        assert!(resize_bilinear(&single, (0, 3)).is_err());
    }

    #[test]
    fn resize_stays_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
            let m = Tensor::from_fn(vec![h, w], |_| rng.gen_range(-2.0..2.0)).unwrap();
            let r = resize_bilinear(&m, (rng.gen_range(1..40), rng.gen_range(1..40))).unwrap();
            assert!(r.min() >= m.min() - 1e-6 && r.max() <= m.max() + 1e-6);
        }
    }

    #[test]
    fn fusing_identical_maps() {
        let m = normalize_l2(&Tensor::from_fn(vec![4, 4], |i| (i % 5) as f32).unwrap()).values;
        let f = fuse(&[&m, &m, &m, &m, &m]).unwrap();
        assert!(f.values.max_abs_diff(&m).unwrap() < 1e-6);
    }

    #[test]
    fn box_mass() {
        let mut m = Tensor::zeros(vec![4, 4]);
        m.data_mut()[5] = 3.0;
        m.data_mut()[15] = 1.0;
        assert_eq!(mass_in_box(&m, 1, 1, 2, 2).unwrap(), 0.75);
        assert_eq!(mass_in_box(&Tensor::zeros(vec![2, 2]), 0, 0, 1, 1).unwrap(), 0.0);
    }

    #[test]
    fn masked_forward_requires_every_mask() {
        let spec = NetworkSpec::mini_vgg();
        let weights = NetworkWeights::init(&spec, 4);
        let image = Tensor::zeros(spec.input_shape().to_vec());
        let empty = SuppressionMaskSet::new(Vec::new()).unwrap();
        assert!(matches!(
            masked_forward(&spec, &weights, &image, &empty),
            Err(Error::MissingMask(_))
        ));
    }
}
