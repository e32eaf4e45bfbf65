use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Normalised 1-D Gaussian with `sigma = radius` and half-width
/// `ceil(3 * sigma)`. Radius 0 gives the unit impulse.
pub fn gaussian_kernel(radius: f64) -> Result<Vec<f64>> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidArgument(format!("blur radius must be >= 0, got {radius}")));
    }
    if radius == 0.0 {
        return Ok(vec![1.0]);
    }
    let half = (3.0 * radius).ceil() as isize;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * radius * radius)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|v| v / total).collect())
}

fn convolve_axis(src: &[f64], dst: &mut [f64], h: usize, w: usize, kernel: &[f64], vertical: bool) {
    let half = (kernel.len() / 2) as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &wt) in kernel.iter().enumerate() {
                let off = k as isize - half;
                let (sy, sx) = if vertical {
                    ((y as isize + off).clamp(0, h as isize - 1) as usize, x)
                } else {
                    (y, (x as isize + off).clamp(0, w as isize - 1) as usize)
                };
                acc += wt * src[sy * w + sx];
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Separable per-channel Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(image: &Tensor, radius: f64) -> Result<Tensor> {
    let kernel = gaussian_kernel(radius)?;
    let (c, h, w) = image.dims3()?;
    if kernel.len() == 1 {
        return Ok(image.clone());
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(c * plane);
    let mut tmp = vec![0.0f64; plane];
    let mut res = vec![0.0f64; plane];
    for ch in 0..c {
        let src: Vec<f64> = image.data()[ch * plane..(ch + 1) * plane]
            .iter()
            .map(|&v| f64::from(v))
            .collect();
        convolve_axis(&src, &mut tmp, h, w, &kernel, false);
        convolve_axis(&tmp, &mut res, h, w, &kernel, true);
        out.extend(res.iter().map(|&v| v as f32));
    }
    Tensor::from_op(vec![c, h, w], out, "gaussian_blur")
}

/// A thresholded saliency map.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMask {
    pub mask: Tensor,
    /// The map had no positive maximum; the mask is all zero.
    pub degenerate: bool,
}

impl BinaryMask {
    /// Fraction of cells set.
    pub fn area(&self) -> f64 {
        self.mask.sum() / self.mask.len() as f64
    }
}

/// `mask[h, w] = 1` iff `map[h, w] >= t * max(map)`.
pub fn saliency_to_mask(map: &Tensor, threshold: f64) -> Result<BinaryMask> {
    map.dims2()?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidArgument(format!("mask threshold must lie in (0, 1), got {threshold}")));
    }
    let max = f64::from(map.max());
    if !(max > 0.0) {
        return Ok(BinaryMask {
            mask: Tensor::zeros(map.shape().to_vec()),
            degenerate: true,
        });
    }
    let cut = threshold * max;
    let mask = map.map(|v| if f64::from(v) >= cut { 1.0 } else { 0.0 })?;
    Ok(BinaryMask { mask, degenerate: false })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    /// Blur where the mask is 0.
    Background,
    /// Blur where the mask is 1.
    Foreground,
}

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Region::Background => "background",
            Region::Foreground => "foreground",
        })
    }
}

/// Hard-edged composite of `image` and its blur: for `Background`,
/// `mask * image + (1 - mask) * blur(image)`; `Foreground` swaps the roles.
pub fn blend_blur(image: &Tensor, mask: &Tensor, radius: f64, region: Region) -> Result<Tensor> {
    let (c, h, w) = image.dims3()?;
    if mask.shape() != [h, w] {
        return Err(Error::Shape(format!(
            "mask shape {:?} does not match image {h}x{w}",
            mask.shape()
        )));
    }
    let blurred = gaussian_blur(image, radius)?;
    let plane = h * w;
    let m = mask.data();
    let data = (0..c * plane)
        .map(|i| {
            let keep_sharp = (m[i % plane] != 0.0) == (region == Region::Background);
            if keep_sharp { image.data()[i] } else { blurred.data()[i] }
        })
        .collect();
    Tensor::new(vec![c, h, w], data)
}
