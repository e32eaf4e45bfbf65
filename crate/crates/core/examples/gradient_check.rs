//! Reverse-mode gradients of a small conv net checked against central
//! differences of the same forward pass.

use lisaliency::tensor::{GradientTape, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 5] = ["input", "conv weight", "conv bias", "fc weight", "fc bias"];

struct Eval {
    loss: f32,
    grads: Vec<Tensor>,
    /// Which conv outputs the ReLU let through, and the winning cell of
    /// every pooling window.
    pattern: Vec<usize>,
}

/// Cross-entropy of conv -> relu -> maxpool -> linear, and its gradient
/// with respect to every parameter.
fn loss(params: &[Tensor], label: usize) -> lisaliency::Result<Eval> {
    let mut tape = GradientTape::new();
    let ids: Vec<NodeId> = params.iter().map(|t| tape.borrowed_leaf(t, true)).collect();
    let c = tape.conv2d(ids[0], ids[1], ids[2], 1, 1)?;
    let r = tape.relu(c)?;
    let m = tape.maxpool2d(r, 2, 2)?;
    let n = tape.value(m)?.len();
    let flat = tape.reshape(m, &[n])?;
    let logits = tape.linear(flat, ids[3], ids[4])?;
    let ce = tape.cross_entropy(logits, label)?;
    let mut pattern: Vec<usize> = tape.value(c)?.data().iter().map(|&v| usize::from(v > 0.0)).collect();
    pattern.extend(pool_winners(tape.value(r)?));
    let value = tape.value(ce)?.data()[0];
    let grads = tape.backward(ce)?;
    Ok(Eval {
        loss: value,
        grads: ids.iter().map(|&id| grads.get(id).cloned().unwrap()).collect(),
        pattern,
    })
}

fn pool_winners(t: &Tensor) -> Vec<usize> {
    let (c, h, w) = t.dims3().unwrap();
    let mut out = Vec::new();
    for ch in 0..c {
        for y in (0..h).step_by(2) {
            for x in (0..w).step_by(2) {
                let cells = [(y, x), (y, x + 1), (y + 1, x), (y + 1, x + 1)];
                let best = (0..4).fold(0, |b, j| {
                    let v = |j: usize| t.get(&[ch, cells[j].0, cells[j].1]);
                    if v(j) > v(b) { j } else { b }
                });
                out.push(best);
            }
        }
    }
    out
}

fn with_value(t: &Tensor, i: usize, v: f32) -> Tensor {
    let mut d = t.data().to_vec();
    d[i] = v;
    Tensor::new(t.shape().to_vec(), d).unwrap()
}

fn main() -> lisaliency::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes = [vec![2, 6, 6], vec![4, 2, 3, 3], vec![4], vec![3, 36], vec![3]];
    let mut params: Vec<Tensor> = shapes
        .iter()
        .map(|s| Tensor::from_fn(s.clone(), |_| rng.gen_range(-0.5..0.5)).unwrap())
        .collect();
    let base = loss(&params, 1)?;
    println!("loss {:.5}", base.loss);

    // Coordinates whose perturbation flips a ReLU or a pooling winner sit on
    // a kink, where the difference quotient is not a derivative.
    let eps = 1e-2f32;
    for (k, name) in NAMES.iter().enumerate() {
        let (mut agree, mut checked, mut kinks) = (0, 0, 0);
        for i in 0..base.grads[k].len() {
            let orig = params[k].clone();
            let x = orig.data()[i];
            params[k] = with_value(&orig, i, x + eps);
            let up = loss(&params, 1)?;
            params[k] = with_value(&orig, i, x - eps);
            let down = loss(&params, 1)?;
            params[k] = orig;
            if up.pattern != base.pattern || down.pattern != base.pattern {
                kinks += 1;
                continue;
            }
            let numeric = (f64::from(up.loss) - f64::from(down.loss)) / (2.0 * f64::from(eps));
            let analytic = f64::from(base.grads[k].data()[i]);
            if analytic.abs() > 1e-2 {
                checked += 1;
                agree += usize::from((analytic - numeric).abs() / analytic.abs().max(numeric.abs()) < 1e-2);
            }
        }
        println!(
            "{name:<12} {:>4} values, {agree}/{checked} within 1% of central differences, {kinks} on kinks",
            base.grads[k].len()
        );
    }
    Ok(())
}
