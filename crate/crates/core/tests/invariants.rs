mod common;

use lisaliency::experiments::{gaussian_blur, gaussian_kernel};
use lisaliency::inhibition::{gate, inhibition_field, LiParams};
use lisaliency::saliency::{normalize_l2, resize_bilinear};
use lisaliency::sanity::{pearson, spearman};
use lisaliency::tensor::Tensor;
use proptest::prelude::*;

fn map(h: usize, w: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f32..1.0, h * w).prop_map(move |v| Tensor::new(vec![h, w], v).unwrap())
}

fn sized_map(lo: usize, hi: usize) -> impl Strategy<Value = Tensor> {
    (lo..=hi, lo..=hi).prop_flat_map(|(h, w)| map(h, w))
}

fn vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec(-10.0f64..10.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn correlations_are_symmetric((x, y) in vectors()) {
        let (a, b) = (pearson(&x, &y).unwrap().value, pearson(&y, &x).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-12);
        let (a, b) = (spearman(&x, &y).unwrap().value, spearman(&y, &x).unwrap().value);
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn pearson_agrees_with_raw_sums((x, y) in vectors()) {
        let c = pearson(&x, &y).unwrap();
        prop_assume!(!c.degenerate);
        prop_assert!((c.value - common::pearson(&x, &y)).abs() < 1e-9);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(x in prop::collection::vec(-5.0f64..5.0, 3..40)) {
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        let c = spearman(&x, &y).unwrap();
        prop_assume!(!c.degenerate);
        prop_assert_eq!(c.value, 1.0);
    }

    #[test]
    fn field_matches_oracle(m in sized_map(5, 14), k in prop::sample::select(vec![1usize, 3, 5, 7]),
                            a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (h, w) = m.dims2().unwrap();
        let field = inhibition_field(&m, &LiParams::new(a, b, k).unwrap()).unwrap();
        let oracle = common::inhibition_field(&common::Arr::from_tensor(&m).data, h, w, a, b, k);
        for (&f, &o) in field.data().iter().zip(&oracle) {
            prop_assert!((f64::from(f) - o).abs() < 1e-6);
        }
    }

    #[test]
    fn field_is_translation_equivariant(big in map(20, 20), dy in 0usize..3, dx in 0usize..3) {
        let p = LiParams { k: 3, ..LiParams::default() };
        let crop = |oy: usize, ox: usize| {
            Tensor::from_fn(vec![14, 14], |i| big.get(&[oy + i / 14, ox + i % 14])).unwrap()
        };
        let f0 = inhibition_field(&crop(2, 2), &p).unwrap();
        let f1 = inhibition_field(&crop(2 + dy, 2 + dx), &p).unwrap();
        for y in 3..11 - dy {
            for x in 3..11 - dx {
                let a = f0.get(&[y + dy, x + dx]);
                let b = f1.get(&[y, x]);
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_cell_zone_has_closed_form(m in sized_map(1, 10), a in 0.0f64..2.0) {
        let field = inhibition_field(&m, &LiParams::new(a, 0.7, 1).unwrap()).unwrap();
        for (&f, &x) in field.data().iter().zip(m.data()) {
            prop_assert!((f64::from(f) - a * (-f64::from(x)).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn raising_a_cell_never_closes_its_gate(m in map(6, 6), f in map(6, 6), cell in 0usize..36, bump in 0.0f32..2.0) {
        let before = gate(&m, &f).unwrap();
        let mut raised = m.data().to_vec();
        raised[cell] += bump;
        let after = gate(&Tensor::new(vec![6, 6], raised).unwrap(), &f).unwrap();
        prop_assert!(after.data()[cell] >= before.data()[cell]);
        prop_assert!(after.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn zero_map_never_passes_the_gate(h in 1usize..12, w in 1usize..12, a in 0.01f64..1.0, b in 0.0f64..1.0) {
        let zero = Tensor::zeros(vec![h, w]);
        let field = normalize_l2(&inhibition_field(&zero, &LiParams::new(a, b, 3).unwrap()).unwrap());
        prop_assert_eq!(gate(&zero, &field.values).unwrap().sum(), 0.0);
    }

    #[test]
    fn resize_stays_in_range(m in sized_map(1, 8), th in 1usize..40, tw in 1usize..40) {
        let out = resize_bilinear(&m, (th, tw)).unwrap();
        prop_assert_eq!(out.shape(), [th, tw]);
        let (lo, hi) = (m.min(), m.max());
        prop_assert!(out.data().iter().all(|&v| v >= lo - 1e-6 && v <= hi + 1e-6));
    }

    #[test]
    fn normalized_maps_have_unit_norm(m in sized_map(1, 12)) {
        let n = normalize_l2(&m);
        prop_assert!(n.degenerate || (n.values.l2_norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn separable_blur_matches_direct(img in map(13, 11), radius in 0.3f64..4.0) {
        let out = gaussian_blur(&img.reshape(vec![1, 13, 11]).unwrap(), radius).unwrap();
        let direct = common::blur_direct(&common::Arr::from_tensor(&img).data, 13, 11, radius);
        for (&a, &b) in out.data().iter().zip(&direct) {
            prop_assert!((f64::from(a) - b).abs() < 1e-5);
        }
    }
}

#[test]
fn blurring_an_impulse_reproduces_the_kernel() {
    let radius = 2.0;
    let kernel = gaussian_kernel(radius).unwrap();
    let n = kernel.len();
    let size = n + 4;
    let c = size / 2;
    let img = Tensor::from_fn(vec![1, size, size], |i| if i == c * size + c { 1.0 } else { 0.0 }).unwrap();
    let out = gaussian_blur(&img, radius).unwrap();
    let half = n / 2;
    for y in 0..n {
        for x in 0..n {
            let got = f64::from(out.get(&[0, c - half + y, c - half + x]));
            assert!((got - kernel[y] * kernel[x]).abs() < 1e-7);
        }
    }
    assert!((out.sum() - 1.0).abs() < 1e-5);
}

#[test]
fn resize_examples() {
    let one = Tensor::new(vec![1, 1], vec![0.25]).unwrap();
    let out = resize_bilinear(&one, (3, 5)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.25));
    let m = Tensor::new(vec![2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let out = resize_bilinear(&m, (2, 4)).unwrap();
    for row in out.data().chunks(4) {
        for (&v, e) in row.iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((f64::from(v) - e).abs() < 1e-6);
        }
    }
}
