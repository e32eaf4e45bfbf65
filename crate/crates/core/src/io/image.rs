//! Raster images as `(3, H, W)` tensors in `[0, 1]`, preprocessing, and map
//! export.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ColorType, ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::resize_bilinear;
use crate::tensor::Tensor;

fn image_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Decodes an 8-bit PNG or PPM into channel-major RGB with values `v / 255`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| image_error(path, e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(image_error(path, format!("unsupported format {format:?}")));
    }
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| image_error(path, e.to_string()))?;
    if !matches!(
        decoded.color(),
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8
    ) {
        return Err(image_error(
            path,
            format!("expected 8-bit samples, got {:?}", decoded.color()),
        ));
    }
    Ok(from_rgb8(&decoded.to_rgb8()))
}

pub fn from_rgb8(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    let mut data = vec![0.0f32; 3 * h * w];
    for (p, px) in raw.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + p] = f32::from(px[c]) / 255.0;
        }
    }
    Tensor::from_parts_unchecked(vec![3, h, w], data)
}

/// Quantises a `(3, H, W)` tensor, clamping to `[0, 1]`.
pub fn to_rgb8(image: &Tensor) -> Result<RgbImage> {
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let x = image.data();
    let mut raw = Vec::with_capacity(3 * h * w);
    for p in 0..h * w {
        for ch in 0..3 {
            raw.push((x[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from dims"))
}

/// Encodes as PNG, or PPM when the extension is `.ppm`.
pub fn save_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") => ImageFormat::Pnm,
        _ => ImageFormat::Png,
    };
    let mut buf = std::io::Cursor::new(Vec::new());
    to_rgb8(image)?
        .write_to(&mut buf, format)
        .map_err(|e| image_error(path, e.to_string()))?;
    fs::write(path, buf.into_inner()).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Network input `(height, width)`.
    pub size: [usize; 2],
    /// The shorter image edge is resized to this before the centre crop.
    pub resize_shorter: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            size: [64, 64],
            resize_shorter: 64,
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl PreprocessConfig {
    /// Leaves values untouched apart from resizing and cropping.
    pub fn identity(size: [usize; 2]) -> Self {
        PreprocessConfig {
            size,
            resize_shorter: size[0].min(size[1]),
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::Config(format!("std components must be positive, got {:?}", self.std)));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("mean must be finite".into()));
        }
        if self.size.contains(&0) || self.resize_shorter < self.size[0].min(self.size[1]) {
            return Err(Error::Config(format!(
                "resize_shorter {} cannot be smaller than the crop {:?}",
                self.resize_shorter, self.size
            )));
        }
        Ok(())
    }
}

/// Height and width after scaling the shorter edge to `shorter`.
pub fn resized_dims(h: usize, w: usize, shorter: usize) -> (usize, usize) {
    if h <= w {
        (shorter, ((w * shorter) as f64 / h as f64).round().max(1.0) as usize)
    } else {
        (((h * shorter) as f64 / w as f64).round().max(1.0) as usize, shorter)
    }
}

/// Shorter-edge resize, centre crop, then `(x - mean) / std` per channel.
pub fn preprocess(image: &Tensor, cfg: &PreprocessConfig) -> Result<Tensor> {
    normalize(&resize_and_crop(image, cfg)?, cfg)
}

/// The geometric half of [`preprocess`]: values stay in image space.
pub fn resize_and_crop(image: &Tensor, cfg: &PreprocessConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let (rh, rw) = resized_dims(h, w, cfg.resize_shorter);
    let [th, tw] = cfg.size;
    if (rh, rw) == (h, w) && (th, tw) == (h, w) {
        return Ok(image.clone());
    }
    if rh < th || rw < tw {
        return Err(Error::Shape(format!("resized image {rh}x{rw} is smaller than crop {th}x{tw}")));
    }
    let (oy, ox) = ((rh - th) / 2, (rw - tw) / 2);
    let mut out = Vec::with_capacity(3 * th * tw);
    for ch in 0..3 {
        let plane = Tensor::from_parts_unchecked(vec![h, w], image.data()[ch * h * w..(ch + 1) * h * w].to_vec());
        let resized = if (rh, rw) == (h, w) { plane } else { resize_bilinear(&plane, (rh, rw))? };
        for y in oy..oy + th {
            out.extend_from_slice(&resized.data()[y * rw + ox..y * rw + ox + tw]);
        }
    }
    Tensor::from_op(vec![3, th, tw], out, "resize_and_crop")
}

/// `(x - mean) / std` per channel.
pub fn normalize(image: &Tensor, cfg: &PreprocessConfig) -> Result<Tensor> {
    cfg.validate()?;
    let (c, h, w) = image.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v - cfg.mean[i / plane]) / cfg.std[i / plane])
        .collect();
    Tensor::from_op(vec![3, h, w], data, "normalize")
}

/// One row per map row, comma-separated, shortest round-trip formatting.
pub fn write_map_csv(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = map.dims2()?;
    let mut text = String::with_capacity(h * w * 12);
    for row in map.data().chunks(w) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_map_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Dataset(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::Dataset(format!("{}: ragged row {}", path.display(), i + 1)));
        }
        data.extend(row);
        rows += 1;
    }
    Tensor::new(vec![rows, width.unwrap_or(0)], data)
}

/// Grayscale PNG mapping `[0, max]` linearly onto `[0, 255]`.
pub fn write_map_png(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = map.dims2()?;
    let max = map.max();
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let raw: Vec<u8> = map
        .data()
        .iter()
        .map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8)
        .collect();
    let img = image::GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer sized from dims");
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| image_error(path, e.to_string()))?;
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(buf.get_ref()).map_err(|e| Error::io(path, e))
}
