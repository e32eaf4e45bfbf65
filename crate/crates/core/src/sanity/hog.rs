//! Histogram of oriented gradients over a single-channel map.
//!
//! Gradients are central differences (zero on the outermost rows and
//! columns). Orientation is unsigned, `atan2(gy, gx)` folded into
//! `[0, 180)` degrees, and each pixel adds its magnitude to one of nine
//! 20-degree bins. Cells are 8x8 pixels; blocks of 2x2 cells slide by one
//! cell and are normalised as `v / sqrt(|v|^2 + eps^2)`. Maps narrower than
//! two cells use single-cell blocks along that axis.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const HOG_CELL: usize = 8;
pub const HOG_BINS: usize = 9;
const BLOCK: usize = 2;
const EPS: f64 = 1e-6;

pub fn hog_descriptor(map: &Tensor) -> Result<Vec<f64>> {
    let (h, w) = map.dims2()?;
    if h < HOG_CELL || w < HOG_CELL {
        return Err(Error::InvalidArgument(format!(
            "map {h}x{w} is smaller than one {HOG_CELL}x{HOG_CELL} cell"
        )));
    }
    let (cy, cx) = (h / HOG_CELL, w / HOG_CELL);
    let x = map.data();
    let at = |r: usize, c: usize| f64::from(x[r * w + c]);
    let mut cells = vec![0.0f64; cy * cx * HOG_BINS];
    for r in 0..cy * HOG_CELL {
        for c in 0..cx * HOG_CELL {
            let gx = if c == 0 || c + 1 == w { 0.0 } else { at(r, c + 1) - at(r, c - 1) };
            let gy = if r == 0 || r + 1 == h { 0.0 } else { at(r + 1, c) - at(r - 1, c) };
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            let bin = ((theta / (180.0 / HOG_BINS as f64)) as usize).min(HOG_BINS - 1);
            cells[((r / HOG_CELL) * cx + c / HOG_CELL) * HOG_BINS + bin] += mag;
        }
    }
    let (by, bx) = (BLOCK.min(cy), BLOCK.min(cx));
    let mut out = Vec::with_capacity((cy - by + 1) * (cx - bx + 1) * by * bx * HOG_BINS);
    for y0 in 0..=cy - by {
        for x0 in 0..=cx - bx {
            let start = out.len();
            for yy in y0..y0 + by {
                for xx in x0..x0 + bx {
                    let off = (yy * cx + xx) * HOG_BINS;
                    out.extend_from_slice(&cells[off..off + HOG_BINS]);
                }
            }
            let norm = (out[start..].iter().map(|v| v * v).sum::<f64>() + EPS * EPS).sqrt();
            for v in &mut out[start..] {
                *v /= norm;
            }
        }
    }
    Ok(out)
}
