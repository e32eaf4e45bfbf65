//! The shapes-on-scenes corpus: geometric sprites with class-specific colour
//! and texture composited onto one of four background families.
//!
//! Layout of a generated corpus:
//!
//! ```text
//! <out>/train/images/*.png   <out>/train/labels.csv
//! <out>/test/...
//! <out>/adversarial/...
//! ```
//!
//! `labels.csv` has the columns `filename,label,box_x,box_y,box_w,box_h`.
//! In the train and test splits each class appears on its preferred
//! background family with probability `background_bias`; the adversarial
//! split never uses the preferred family.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{load_image, preprocess, save_image, PreprocessConfig};
use crate::error::{Error, Result};
use crate::network::Sample;
use crate::tensor::Tensor;

/// Object classes in label order. Matches the class table of the bundled
/// mini-VGG spec.
pub const SHAPES: [&str; 8] = [
    "disc", "square", "triangle", "diamond", "cross", "ring", "star", "hexagon",
];

pub const BACKGROUNDS: [&str; 4] = ["sky", "meadow", "sand", "stone"];

pub const SPLITS: [&str; 3] = ["train", "test", "adversarial"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub adversarial_per_class: usize,
    /// Probability that a train/test image uses its class's preferred
    /// background family.
    pub background_bias: f64,
    pub image_size: usize,
    pub min_object: usize,
    pub max_object: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train_per_class: 150,
            test_per_class: 64,
            adversarial_per_class: 32,
            background_bias: 0.65,
            image_size: 64,
            min_object: 22,
            max_object: 34,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.background_bias) {
            return Err(Error::Config("background_bias must lie in [0, 1]".into()));
        }
        if self.min_object < 4 || self.min_object > self.max_object || self.max_object + 2 > self.image_size {
            return Err(Error::Config(format!(
                "object size range {}..={} does not fit a {}px image",
                self.min_object, self.max_object, self.image_size
            )));
        }
        Ok(())
    }

    fn per_class(&self, split: usize) -> usize {
        [self.train_per_class, self.test_per_class, self.adversarial_per_class][split]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledImage {
    pub filename: String,
    pub label: usize,
    pub bbox: BoundingBox,
}

#[derive(Serialize, Deserialize)]
struct LabelRow {
    filename: String,
    label: usize,
    box_x: usize,
    box_y: usize,
    box_w: usize,
    box_h: usize,
}

/// A rendered scene before quantisation.
pub struct Scene {
    pub image: Tensor,
    pub label: usize,
    pub background: usize,
    pub bbox: BoundingBox,
}

/// Renders image `index` of `split`; a pure function of its arguments.
pub fn render_scene(seed: u64, split: usize, index: usize, cfg: &DatasetConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((split as u64) << 32) | index as u64);
    let label = index % SHAPES.len();
    let preferred = label % BACKGROUNDS.len();
    let others: Vec<usize> = (0..BACKGROUNDS.len()).filter(|&b| b != preferred).collect();
    let background = if split != 2 && rng.gen_bool(cfg.background_bias) {
        preferred
    } else {
        *others.choose(&mut rng).expect("several families")
    };
    let n = cfg.image_size;
    let mut pixels = render_background(&mut rng, background, n);
    let size = rng.gen_range(cfg.min_object..=cfg.max_object);
    let x0 = rng.gen_range(1..=n - size - 1);
    let y0 = rng.gen_range(1..=n - size - 1);
    draw_sprite(&mut rng, &mut pixels, n, label, x0, y0, size);
    let image = Tensor::new(vec![3, n, n], pixels).expect("renderer emits finite values");
    Scene {
        image,
        label,
        background,
        bbox: BoundingBox { x: x0, y: y0, w: size, h: size },
    }
}

fn value_noise(rng: &mut ChaCha8Rng, n: usize, cell: usize) -> Vec<f32> {
    let g = n / cell + 2;
    let grid: Vec<f32> = (0..g * g).map(|_| rng.gen()).collect();
    let mut out = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (fy, fx) = (y as f32 / cell as f32, x as f32 / cell as f32);
            let (iy, ix) = (fy as usize, fx as usize);
            let (ty, tx) = (fy - iy as f32, fx - ix as f32);
            let (sy, sx) = (ty * ty * (3.0 - 2.0 * ty), tx * tx * (3.0 - 2.0 * tx));
            let at = |r: usize, c: usize| grid[r * g + c];
            let top = at(iy, ix) * (1.0 - sx) + at(iy, ix + 1) * sx;
            let bottom = at(iy + 1, ix) * (1.0 - sx) + at(iy + 1, ix + 1) * sx;
            out.push(top * (1.0 - sy) + bottom * sy);
        }
    }
    out
}

fn render_background(rng: &mut ChaCha8Rng, family: usize, n: usize) -> Vec<f32> {
    let tint: [f32; 3] = [rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05)];
    let coarse = value_noise(rng, n, 16);
    let fine = value_noise(rng, n, 4);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let mut px = vec![0.0f32; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let p = y * n + x;
            let t = y as f32 / (n - 1) as f32;
            let rgb = match family {
                0 => {
                    let cloud = (coarse[p] - 0.55).max(0.0) * 1.2;
                    [0.30 + 0.35 * t + cloud, 0.50 + 0.30 * t + cloud, 0.85 + 0.10 * t + cloud]
                }
                1 => {
                    let blade = (fine[p] - 0.5) * 0.25;
                    let shade = (coarse[p] - 0.5) * 0.2;
                    [0.22 + shade, 0.52 + shade + blade, 0.18 + shade * 0.5]
                }
                2 => {
                    let ripple = ((y as f32 * 0.7 + coarse[p] * 4.0 + phase).sin()) * 0.06;
                    [0.82 + ripple, 0.70 + ripple, 0.46 + ripple * 0.5]
                }
                _ => {
                    let blotch = (coarse[p] - 0.5) * 0.35 + (fine[p] - 0.5) * 0.15;
                    [0.48 + blotch, 0.48 + blotch, 0.50 + blotch]
                }
            };
            for c in 0..3 {
                px[c * n * n + p] = (rgb[c] + tint[c]).clamp(0.0, 1.0);
            }
        }
    }
    px
}

fn inside(label: usize, u: f32, v: f32) -> bool {
    let (au, av) = (u.abs(), v.abs());
    let r = (u * u + v * v).sqrt();
    match label {
        0 => r <= 0.95,
        1 => au <= 0.8 && av <= 0.8,
        2 => (-0.85..=0.85).contains(&v) && au <= (v + 0.85) / 1.7 * 0.95,
        3 => au + av <= 0.95,
        4 => (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95),
        5 => (0.55..=0.95).contains(&r),
        6 => {
            let theta = v.atan2(u) + std::f32::consts::FRAC_PI_2;
            r <= 0.55 + 0.4 * (5.0 * theta).cos()
        }
        _ => av <= 0.82 && 3f32.sqrt() * au + av <= 3f32.sqrt() * 0.95,
    }
}

fn texture(label: usize, x: usize, y: usize) -> f32 {
    let on = match label {
        1 => (y / 2) % 2 == 0,
        2 => (x / 2) % 2 == 0,
        3 => ((x / 3) + (y / 3)) % 2 == 0,
        4 => ((x + y) / 2) % 2 == 0,
        6 => x % 3 == 0 && y % 3 == 0,
        7 => ((x + 64 - y % 64) / 2) % 2 == 0,
        _ => true,
    };
    if on { 1.0 } else { 0.72 }
}

const COLORS: [[f32; 3]; 8] = [
    [0.85, 0.15, 0.15],
    [0.15, 0.25, 0.85],
    [0.95, 0.85, 0.10],
    [0.80, 0.20, 0.80],
    [0.95, 0.50, 0.10],
    [0.10, 0.80, 0.85],
    [0.95, 0.95, 0.95],
    [0.40, 0.22, 0.10],
];

fn draw_sprite(rng: &mut ChaCha8Rng, px: &mut [f32], n: usize, label: usize, x0: usize, y0: usize, size: usize) {
    let base = COLORS[label].map(|c| (c + rng.gen_range(-0.1..0.1f32)).clamp(0.0, 1.0));
    let half = size as f32 / 2.0;
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            let u = (x as f32 + 0.5 - x0 as f32 - half) / half;
            let v = (y as f32 + 0.5 - y0 as f32 - half) / half;
            if inside(label, u, v) {
                let t = texture(label, x - x0, y - y0);
                for (c, &b) in base.iter().enumerate() {
                    px[c * n * n + y * n + x] = b * t;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSummary {
    /// Image count per split, in [`SPLITS`] order.
    pub counts: [usize; 3],
}

/// Writes all three splits under `out`. Deterministic for a given seed and
/// config, independent of thread count.
pub fn generate_dataset(out: impl AsRef<Path>, seed: u64, cfg: &DatasetConfig) -> Result<DatasetSummary> {
    cfg.validate()?;
    let out = out.as_ref();
    let mut counts = [0; 3];
    for (split, name) in SPLITS.iter().enumerate() {
        let dir = out.join(name);
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        let total = cfg.per_class(split) * SHAPES.len();
        let rows = (0..total)
            .into_par_iter()
            .map(|i| {
                let scene = render_scene(seed, split, i, cfg);
                let filename = format!("{name}_{i:05}.png");
                save_image(images.join(&filename), &scene.image)?;
                Ok(LabelRow {
                    filename,
                    label: scene.label,
                    box_x: scene.bbox.x,
                    box_y: scene.bbox.y,
                    box_w: scene.bbox.w,
                    box_h: scene.bbox.h,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        write_labels(&dir.join("labels.csv"), &rows)?;
        counts[split] = total;
    }
    Ok(DatasetSummary { counts })
}

fn write_labels(path: &Path, rows: &[LabelRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Dataset(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A labelled image directory: `images/*.png` plus `labels.csv`.
#[derive(Clone, Debug)]
pub struct Dataset {
    root: PathBuf,
    entries: Vec<LabeledImage>,
}

impl Dataset {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let root = dir.as_ref().to_path_buf();
        let labels = root.join("labels.csv");
        let csv_err = |e: csv::Error| Error::Dataset(format!("{}: {e}", labels.display()));
        let mut reader = csv::Reader::from_path(&labels).map_err(csv_err)?;
        let entries = reader
            .deserialize::<LabelRow>()
            .map(|r| {
                let r = r.map_err(csv_err)?;
                Ok(LabeledImage {
                    filename: r.filename,
                    label: r.label,
                    bbox: BoundingBox { x: r.box_x, y: r.box_y, w: r.box_w, h: r.box_h },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if entries.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Dataset { root, entries })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[LabeledImage] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keeps the first `n` entries.
    pub fn truncate(&mut self, n: usize) {
        self.entries.truncate(n);
    }

    pub fn image_path(&self, i: usize) -> PathBuf {
        self.root.join("images").join(&self.entries[i].filename)
    }

    /// Decoded image in `[0, 1]`, before preprocessing.
    pub fn load_raw(&self, i: usize) -> Result<Tensor> {
        load_image(self.image_path(i))
    }

    pub fn load_all_raw(&self) -> Result<Vec<Tensor>> {
        (0..self.len()).into_par_iter().map(|i| self.load_raw(i)).collect()
    }

    /// Preprocessed training samples.
    pub fn samples(&self, cfg: &PreprocessConfig) -> Result<Vec<Sample>> {
        (0..self.len())
            .into_par_iter()
            .map(|i| {
                Ok(Sample {
                    image: preprocess(&self.load_raw(i)?, cfg)?,
                    label: self.entries[i].label,
                })
            })
            .collect()
    }
}
