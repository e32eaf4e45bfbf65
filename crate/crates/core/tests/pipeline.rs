mod common;

use lisaliency::inhibition::{build_suppression_masks, inhibition_field, max_c, LiParams, LiSource, SuppressionMaskSet};
use lisaliency::network::{
    fan_in, forward_traced, init_weight_std, run_forward, Layer, LayerParams, NetworkSpec, NetworkWeights, Tap,
};
use lisaliency::saliency::{attention_map, fuse, masked_forward, saliency_map, sum_c, SaliencyConfig};
use lisaliency::sanity::randomize_layer;
use lisaliency::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SMALL: &str = r#"
name = "small"
input = [2, 14, 14]
class_count = 3

[[layers]]
type = "conv"
name = "c1"
out_channels = 3
kernel = 3
padding = 1

[[layers]]
type = "relu"
name = "r1"

[[layers]]
type = "conv"
name = "c2"
out_channels = 4
kernel = 3
padding = 1

[[layers]]
type = "relu"
name = "r2"

[[layers]]
type = "maxpool"
name = "p1"
window = 2
stride = 2

[[layers]]
type = "conv"
name = "c3"
out_channels = 4
kernel = 3
stride = 2
padding = 1

[[layers]]
type = "relu"
name = "r3"

[[layers]]
type = "flatten"
name = "flat"

[[layers]]
type = "fc"
name = "fc"
out_features = 3

[[layers]]
type = "softmax"
name = "prob"
"#;

fn small() -> NetworkSpec {
    NetworkSpec::parse(SMALL).unwrap()
}

fn zero_bias(weights: &NetworkWeights) -> NetworkWeights {
    let layers = weights
        .layers()
        .iter()
        .map(|(n, p)| {
            let bias = Tensor::zeros(p.bias.shape().to_vec());
            (n.clone(), LayerParams { weight: p.weight.clone(), bias })
        })
        .collect();
    NetworkWeights::from_layers(layers)
}

/// Cells of each layer's output that can depend on a set of input cells.
fn propagate(support: &[bool], h: usize, w: usize, layer: &Layer) -> (Vec<bool>, usize, usize) {
    let (k, s, p) = match *layer {
        Layer::Conv { kernel, stride, padding, .. } => (kernel, stride, padding),
        Layer::MaxPool { window, stride } => (window, stride, 0),
        _ => return (support.to_vec(), h, w),
    };
    let oh = (h + 2 * p - k) / s + 1;
    let ow = (w + 2 * p - k) / s + 1;
    let mut out = vec![false; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            for dy in 0..k {
                for dx in 0..k {
                    let iy = (y * s + dy) as isize - p as isize;
                    let ix = (x * s + dx) as isize - p as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        out[y * ow + x] |= support[iy as usize * w + ix as usize];
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

#[test]
fn single_cell_mask_stays_inside_receptive_cone() {
    let spec = small();
    let weights = zero_bias(&NetworkWeights::init(&spec, 4));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = common::random_tensor(&mut rng, &spec.input_shape(), 1.0).map(f32::abs).unwrap();
    let (cy, cx) = (5, 6);
    let mut keep = SuppressionMaskSet::uniform(&spec, true).iter().map(|(n, m)| (n.to_string(), m.clone())).collect::<Vec<_>>();
    keep[0].1 = Tensor::from_fn(vec![14, 14], |i| if i == cy * 14 + cx { 1.0 } else { 0.0 }).unwrap();
    let masks = SuppressionMaskSet::new(keep).unwrap();
    let out = masked_forward(&spec, &weights, &image, &masks).unwrap();

    let mut support = vec![false; 196];
    support[cy * 14 + cx] = true;
    let (mut h, mut w) = (14, 14);
    let mut relu = 0;
    let start = spec.layers().iter().position(|l| l.name == "r1").unwrap() + 1;
    for l in &spec.layers()[start..] {
        if matches!(l.layer, Layer::Flatten) {
            break;
        }
        (support, h, w) = propagate(&support, h, w, &l.layer);
        if matches!(l.layer, Layer::Relu) {
            relu += 1;
            let map = sum_c(&out.relus[relu]).unwrap();
            assert_eq!(map.shape(), [h, w]);
            for (i, &v) in map.data().iter().enumerate() {
                assert!(v == 0.0 || support[i], "{} cell {i} outside cone", l.name);
            }
            assert!(map.sum() > 0.0, "{} carries nothing", l.name);
            assert!(support.iter().any(|&s| !s));
        }
    }
    assert_eq!(relu, 2);
}

#[test]
fn all_zero_masks_leave_bias_only() {
    let spec = small();
    let weights = NetworkWeights::init(&spec, 2);
    let image = Tensor::full(spec.input_shape().to_vec(), 0.5);
    let out = masked_forward(&spec, &weights, &image, &SuppressionMaskSet::uniform(&spec, false)).unwrap();
    for r in &out.relus {
        assert!(r.data().iter().all(|&v| v == 0.0));
    }
    let fc = weights.get("fc").unwrap();
    let bias_logits = fc.bias.data();
    assert_eq!(out.logits.data(), bias_logits);
}

#[test]
fn zero_gradients_give_a_flagged_zero_map() {
    let spec = small();
    let mut weights = NetworkWeights::init(&spec, 3);
    let fc = weights.get_mut("fc").unwrap();
    fc.weight = Tensor::zeros(fc.weight.shape().to_vec());
    let image = Tensor::full(spec.input_shape().to_vec(), 0.3);
    for tap in [Tap::BeforeSoftmax, Tap::AfterSoftmax] {
        let cfg = SaliencyConfig { tap, ..Default::default() };
        let m = attention_map(&spec, &weights, &image, 1, &cfg).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.values.sum(), 0.0);
    }
    let mut trace = forward_traced(&spec, &weights, &image).unwrap();
    trace.backprop_category(0, Tap::BeforeSoftmax).unwrap();
    let masks = build_suppression_masks(&trace, &LiParams::default(), LiSource::Gradient).unwrap();
    assert_eq!(masks.len(), spec.relu_layers().len());
    assert!(masks.iter().all(|(_, m)| m.sum() == 0.0));
}

#[test]
fn two_class_network_fuses_both() {
    let text = SMALL.replace("class_count = 3", "class_count = 2").replace("out_features = 3", "out_features = 2");
    let spec = NetworkSpec::parse(&text).unwrap();
    let weights = NetworkWeights::init(&spec, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let image = common::random_tensor(&mut rng, &spec.input_shape(), 1.0);
    let cfg = SaliencyConfig { tap: Tap::BeforeSoftmax, ..Default::default() };
    let s = saliency_map(&spec, &weights, &image, &cfg).unwrap();
    let mut cats = s.categories.clone();
    cats.sort();
    assert_eq!(cats, vec![0, 1]);
    let a = attention_map(&spec, &weights, &image, 0, &cfg).unwrap().values;
    let b = attention_map(&spec, &weights, &image, 1, &cfg).unwrap().values;
    let expected = fuse(&[&a, &b]).unwrap().values;
    assert!(s.values.max_abs_diff(&expected).unwrap() < 1e-6);
}

#[test]
fn fusing_identical_maps_is_idempotent() {
    let m = Tensor::from_fn(vec![6, 5], |i| (i % 7) as f32).unwrap();
    let one = fuse(&[&m]).unwrap().values;
    let five = fuse(&[&m, &m, &m, &m, &m]).unwrap().values;
    assert!(one.max_abs_diff(&five).unwrap() < 1e-7);
}

#[test]
fn centre_impulse_field_matches_oracle() {
    let mut data = vec![0.0f32; 25];
    data[12] = 1.0;
    let map = Tensor::new(vec![5, 5], data).unwrap();
    let p = LiParams::new(0.1, 0.9, 3).unwrap();
    let field = inhibition_field(&map, &p).unwrap();
    let oracle = common::inhibition_field(&common::Arr::from_tensor(&map).data, 5, 5, 0.1, 0.9, 3);
    for (&f, &o) in field.data().iter().zip(&oracle) {
        assert!((f64::from(f) - o).abs() < 1e-6);
    }
    let d = 1.0f64 / 3.0;
    let side = 0.1 * (-1.0f64 / 9.0).exp() + 0.9 * d * (-d).exp();
    assert!((f64::from(field.data()[11]) - side).abs() < 1e-6);
    assert!((f64::from(field.data()[12]) - 0.1 * (-1.0f64 / 9.0).exp()).abs() < 1e-6);
}

#[test]
fn max_c_examples() {
    let t = Tensor::new(vec![2, 2, 2], vec![1., 5., 3., 0., 2., 2., 2., 2.]).unwrap();
    assert_eq!(max_c(&t).unwrap().data(), &[2., 5., 3., 2.]);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = common::random_tensor(&mut rng, &[8, 6, 6], 1.0);
    let m = max_c(&r).unwrap();
    for i in 0..36 {
        let best = (0..8).map(|c| r.data()[c * 36 + i]).fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(m.data()[i], best);
    }
}

#[test]
fn randomized_layer_matches_init_scale() {
    let spec = NetworkSpec::mini_vgg();
    let trained = NetworkWeights::init(&spec, 1);
    let before = trained.checksum();
    for layer in ["conv3_2", "fc1"] {
        let r = randomize_layer(&trained, layer, 77).unwrap();
        let w = &r.get(layer).unwrap().weight;
        assert!(w.len() >= 10_000);
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let target = init_weight_std(fan_in(w.shape()));
        assert!((var.sqrt() / target - 1.0).abs() < 0.2, "{layer}: {} vs {target}", var.sqrt());
        let changed: Vec<&str> = r
            .layers()
            .iter()
            .zip(trained.layers())
            .filter(|(a, b)| a.1 != b.1)
            .map(|(a, _)| a.0.as_str())
            .collect();
        assert_eq!(changed, vec![layer]);
        assert_eq!(randomize_layer(&trained, layer, 77).unwrap(), r);
    }
    assert_eq!(trained.checksum(), before);
    assert!(randomize_layer(&trained, "relu1_1", 1).is_err());
}

#[test]
fn trace_has_one_record_per_relu() {
    let spec = NetworkSpec::mini_vgg();
    let weights = NetworkWeights::init(&spec, 6);
    let image = Tensor::zeros(spec.input_shape().to_vec());
    let trace = forward_traced(&spec, &weights, &image).unwrap();
    assert_eq!(trace.relus().len(), spec.relu_layers().len());
    let p = trace.probabilities();
    assert!((p.sum() - 1.0).abs() < 1e-6);
    let again = run_forward(&spec, &weights, &image, |_, _| Ok(())).unwrap();
    assert_eq!(again.probabilities.to_bits(), p.to_bits());
}
