//! Independent `f64` reference implementations used as test oracles.

#![allow(dead_code)]

use lisaliency::tensor::Tensor;
use rand::Rng;

/// A dense `f64` array in row-major order.
#[derive(Clone, Debug)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn from_tensor(t: &Tensor) -> Arr {
        Arr {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f32) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale)).unwrap()
}

pub fn conv2d(x: &Arr, w: &Arr, b: &Arr, stride: usize, pad: usize) -> Arr {
    let (c, h, wd) = (x.shape[0], x.shape[1], x.shape[2]);
    let (oc, kh, kw) = (w.shape[0], w.shape[2], w.shape[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b.data[o];
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (y * stride + ky) as isize - pad as isize;
                            let ix = (xx * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            acc += w.data[((o * c + ci) * kh + ky) * kw + kx]
                                * x.data[(ci * h + iy as usize) * wd + ix as usize];
                        }
                    }
                }
                out[(o * oh + y) * ow + xx] = acc;
            }
        }
    }
    Arr { shape: vec![oc, oh, ow], data: out }
}

/// Records which inputs were positive so callers can detect kinks.
pub fn relu(x: &Arr, pattern: &mut Vec<usize>) -> Arr {
    pattern.extend(x.data.iter().map(|&v| usize::from(v > 0.0)));
    Arr {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Records the winning position of every window.
pub fn maxpool(x: &Arr, win: usize, stride: usize, pattern: &mut Vec<usize>) -> Arr {
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    let oh = (h - win) / stride + 1;
    let ow = (w - win) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = (f64::NEG_INFINITY, 0);
                for dy in 0..win {
                    for dx in 0..win {
                        let i = (ch * h + y * stride + dy) * w + xx * stride + dx;
                        if x.data[i] > best.0 {
                            best = (x.data[i], i);
                        }
                    }
                }
                pattern.push(best.1);
                out.push(best.0);
            }
        }
    }
    Arr { shape: vec![c, oh, ow], data: out }
}

pub fn linear(x: &Arr, w: &Arr, b: &Arr) -> Arr {
    let (m, n) = (w.shape[0], w.shape[1]);
    let data = (0..m)
        .map(|i| b.data[i] + (0..n).map(|j| w.data[i * n + j] * x.data[j]).sum::<f64>())
        .collect();
    Arr { shape: vec![m], data }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy(x: &[f64], label: usize) -> f64 {
    -softmax(x)[label].ln()
}

/// Field value at each cell from a direct scan of the `k x k` zone, with
/// cells outside the map read as zero.
pub fn inhibition_field(map: &[f64], h: usize, w: usize, a: f64, b: f64, k: usize) -> Vec<f64> {
    let half = (k / 2) as isize;
    let mut out = vec![0.0; h * w];
    for i in 0..h as isize {
        for j in 0..w as isize {
            let centre = map[i as usize * w + j as usize];
            let mut total = 0.0;
            let mut diff = 0.0;
            for u in i - half..=i + half {
                for v in j - half..=j + half {
                    let inside = u >= 0 && v >= 0 && u < h as isize && v < w as isize;
                    let x = if inside { map[u as usize * w + v as usize] } else { 0.0 };
                    total += x;
                    let du = (u - i) as f64;
                    let dv = (v - j) as f64;
                    let d = (du * du + dv * dv).sqrt() / k as f64;
                    if x > centre {
                        diff += d * (-d).exp() * (x - centre);
                    }
                }
            }
            out[i as usize * w + j as usize] = a * (-total / (k * k) as f64).exp() + b * diff;
        }
    }
    out
}

/// Rank of each value as `1 + #smaller + (#equal - 1) / 2`.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            1.0 + less + (equal - 1.0) / 2.0
        })
        .collect()
}

/// Textbook sample Pearson from raw sums.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sx: f64 = x.iter().sum();
    let sy: f64 = y.iter().sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
}

/// Non-separable 2-D Gaussian blur of one plane with clamped borders.
pub fn blur_direct(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as isize;
    let g = |t: isize| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp();
    let norm: f64 = (-half..=half).map(g).sum::<f64>().powi(2);
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -half..=half {
                for dx in -half..=half {
                    let sy = (y + dy).clamp(0, h as isize - 1) as usize;
                    let sx = (x + dx).clamp(0, w as isize - 1) as usize;
                    acc += g(dy) * g(dx) * plane[sy * w + sx];
                }
            }
            out[y as usize * w + x as usize] = acc / norm;
        }
    }
    out
}
