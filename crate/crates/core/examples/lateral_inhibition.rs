//! The inhibition field and gate on a toy gradient map: two bumps of
//! different strength over low-level noise.

use lisaliency::inhibition::{gate, inhibition_field, LiParams};
use lisaliency::saliency::normalize_l2;
use lisaliency::tensor::Tensor;

fn show(title: &str, t: &Tensor) {
    let (h, w) = t.dims2().unwrap();
    let max = t.max().max(1e-12);
    let ramp = [' ', '.', ':', '-', '=', '+', '*', '#', '%', '@'];
    println!("{title}");
    for y in 0..h {
        let row: String = (0..w)
            .map(|x| ramp[((t.get(&[y, x]) / max) * 9.0).round().clamp(0.0, 9.0) as usize])
            .collect();
        println!("  |{row}|");
    }
}

fn main() -> lisaliency::Result<()> {
    let (h, w) = (16, 28);
    let bump = |y: f32, x: f32, cy: f32, cx: f32, s: f32| (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * s * s)).exp();
    let map = Tensor::from_fn(vec![h, w], |i| {
        let (y, x) = ((i / w) as f32, (i % w) as f32);
        let noise = ((i * 7919) % 97) as f32 / 97.0 * 0.08;
        0.35 * bump(y, x, 5.0, 7.0, 2.5) + 0.12 * bump(y, x, 10.0, 20.0, 3.0) + noise
    })?;

    let params = LiParams::default();
    let field = inhibition_field(&map, &params)?;
    let normalized = normalize_l2(&field);
    let mask = gate(&map, &normalized.values)?;

    show("gradient Max-C map", &map);
    show("inhibition field (L2-normalised)", &normalized.values);
    show("suppression mask", &mask);
    println!("a = {}, b = {}, k = {}: {} of {} cells kept", params.a, params.b, params.k, mask.sum(), h * w);

    for k in [1, 3, 7, 11] {
        let p = LiParams { k, ..params };
        let m = gate(&map, &normalize_l2(&inhibition_field(&map, &p)?).values)?;
        println!("k = {k:>2}: {:>3} cells kept", m.sum());
    }
    Ok(())
}
