//! Background and foreground blur experiments.
//!
//! Each image gets one saliency map, computed from the unblurred image
//! without access to its label. The map is thresholded into a mask, and the
//! image is re-classified with the background (mask 0) or the foreground
//! (mask 1) blurred at every configured radius.

mod blur;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use blur::{blend_blur, gaussian_blur, gaussian_kernel, saliency_to_mask, BinaryMask, Region};

use crate::error::{Error, Result};
use crate::io::{normalize, resize_and_crop, Dataset, PreprocessConfig};
use crate::network::{forward, NetworkSpec, NetworkWeights};
use crate::saliency::{saliency_map, SaliencyConfig};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurConfig {
    pub radii: Vec<f64>,
    /// Relative mask threshold `t`: cells at or above `t * max` are salient.
    pub threshold: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            radii: vec![2.0, 5.0, 10.0],
            threshold: 0.1,
        }
    }
}

impl BlurConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config(format!("radii must be a non-empty list of values >= 0, got {:?}", self.radii)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }
}

/// What the experiment needs from a classifier. Images are `(3, H, W)` in
/// `[0, 1]`.
pub trait ImageModel: Sync {
    fn class_count(&self) -> usize;

    /// Brings a decoded image to the resolution that is blurred and
    /// classified.
    fn prepare(&self, image: &Tensor) -> Result<Tensor> {
        Ok(image.clone())
    }

    /// Class probabilities.
    fn classify(&self, image: &Tensor) -> Result<Tensor>;

    /// Saliency map at the image's resolution.
    fn saliency(&self, image: &Tensor) -> Result<Tensor>;
}

/// A trained network with its preprocessing and saliency settings.
pub struct NetworkModel<'a> {
    pub spec: &'a NetworkSpec,
    pub weights: &'a NetworkWeights,
    pub preprocess: PreprocessConfig,
    pub saliency: SaliencyConfig,
}

impl ImageModel for NetworkModel<'_> {
    fn class_count(&self) -> usize {
        self.spec.class_count()
    }

    fn prepare(&self, image: &Tensor) -> Result<Tensor> {
        resize_and_crop(image, &self.preprocess)
    }

    fn classify(&self, image: &Tensor) -> Result<Tensor> {
        forward(self.spec, self.weights, &normalize(image, &self.preprocess)?)
    }

    fn saliency(&self, image: &Tensor) -> Result<Tensor> {
        let input = normalize(image, &self.preprocess)?;
        Ok(saliency_map(self.spec, self.weights, &input, &self.saliency)?.values)
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentImage {
    pub id: String,
    pub image: Tensor,
    pub label: usize,
}

/// Decodes every image of a dataset directory.
pub fn load_labeled(dataset: &Dataset) -> Result<Vec<ExperimentImage>> {
    let images = dataset.load_all_raw()?;
    Ok(dataset
        .entries()
        .iter()
        .zip(images)
        .map(|(e, image)| ExperimentImage {
            id: e.filename.clone(),
            image,
            label: e.label,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantAccuracy {
    pub variant: String,
    pub region: Option<Region>,
    pub radius: Option<f64>,
    pub top1: f64,
    pub top5: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub image: String,
    pub variant: String,
    /// `(class, probability)`, most probable first.
    pub top: Vec<(usize, f32)>,
}

/// An image classified correctly only after its background was blurred.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Flip {
    pub image: String,
    pub label: usize,
    pub radius: f64,
    pub original_top1: usize,
    pub blurred_top1: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    /// Original first, then background blurs, then foreground blurs, each
    /// in radius order.
    pub variants: Vec<VariantAccuracy>,
    pub predictions: Vec<PredictionRecord>,
    pub flips: Vec<Flip>,
    pub mean_mask_area: f64,
    pub degenerate_masks: usize,
}

impl AccuracyReport {
    pub fn variant(&self, name: &str) -> Option<&VariantAccuracy> {
        self.variants.iter().find(|v| v.variant == name)
    }
}

fn variant_name(region: Option<Region>, radius: Option<f64>) -> String {
    match (region, radius) {
        (Some(r), Some(rad)) => format!("{r}_r{rad}"),
        _ => "original".to_string(),
    }
}

struct ImageOutcome {
    /// Top-k classes per variant, in report order.
    rankings: Vec<Vec<(usize, f32)>>,
    mask: BinaryMask,
}

fn evaluate_image<M: ImageModel>(
    model: &M,
    item: &ExperimentImage,
    variants: &[(Option<Region>, Option<f64>)],
    cfg: &BlurConfig,
    k: usize,
) -> Result<ImageOutcome> {
    let image = model.prepare(&item.image)?;
    let saliency = model.saliency(&image)?;
    let mask = saliency_to_mask(&saliency, cfg.threshold)?;
    let rankings = variants
        .iter()
        .map(|&(region, radius)| {
            let input = match (region, radius) {
                (Some(region), Some(r)) => blend_blur(&image, &mask.mask, r, region)?,
                _ => image.clone(),
            };
            let probs = model.classify(&input)?;
            Ok(probs.top_k(k).into_iter().map(|c| (c, probs.data()[c])).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ImageOutcome { rankings, mask })
}

/// Classifies every image in its original form and under each blur variant.
pub fn run_blur_experiment<M: ImageModel>(
    model: &M,
    images: &[ExperimentImage],
    cfg: &BlurConfig,
) -> Result<AccuracyReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = model.class_count();
    if let Some(bad) = images.iter().find(|i| i.label >= classes) {
        return Err(Error::Dataset(format!("{} has label {} but the model has {classes} classes", bad.id, bad.label)));
    }
    let k = classes.min(5);
    let mut variants = vec![(None, None)];
    for region in [Region::Background, Region::Foreground] {
        variants.extend(cfg.radii.iter().map(|&r| (Some(region), Some(r))));
    }
    let outcomes = images
        .par_iter()
        .map(|item| evaluate_image(model, item, &variants, cfg, k))
        .collect::<Result<Vec<_>>>()?;

    let mut hits1 = vec![0usize; variants.len()];
    let mut hits5 = vec![0usize; variants.len()];
    let mut predictions = Vec::with_capacity(images.len() * variants.len());
    let mut flips = Vec::new();
    for (item, outcome) in images.iter().zip(&outcomes) {
        let original_top1 = outcome.rankings[0][0].0;
        for (v, ranking) in outcome.rankings.iter().enumerate() {
            let top1 = ranking[0].0;
            hits1[v] += usize::from(top1 == item.label);
            hits5[v] += usize::from(ranking.iter().any(|&(c, _)| c == item.label));
            let (region, radius) = variants[v];
            if region == Some(Region::Background) && top1 == item.label && original_top1 != item.label {
                flips.push(Flip {
                    image: item.id.clone(),
                    label: item.label,
                    radius: radius.expect("blur variants carry a radius"),
                    original_top1,
                    blurred_top1: top1,
                });
            }
            predictions.push(PredictionRecord {
                image: item.id.clone(),
                variant: variant_name(region, radius),
                top: ranking.clone(),
            });
        }
    }
    let n = images.len();
    let variants = variants
        .iter()
        .enumerate()
        .map(|(v, &(region, radius))| VariantAccuracy {
            variant: variant_name(region, radius),
            region,
            radius,
            top1: hits1[v] as f64 / n as f64,
            top5: hits5[v] as f64 / n as f64,
            count: n,
        })
        .collect();
    Ok(AccuracyReport {
        variants,
        predictions,
        flips,
        mean_mask_area: outcomes.iter().map(|o| o.mask.area()).sum::<f64>() / n as f64,
        degenerate_masks: outcomes.iter().filter(|o| o.mask.degenerate).count(),
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Dataset(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Columns: `variant,region,radius,top1,top5,count`. Region and radius are
/// empty for the original variant.
pub fn write_report_csv(path: impl AsRef<Path>, report: &AccuracyReport) -> Result<()> {
    write_rows(path.as_ref(), &report.variants)
}

/// Columns: `image,label,radius,original_top1,blurred_top1`.
pub fn write_flips_csv(path: impl AsRef<Path>, report: &AccuracyReport) -> Result<()> {
    let path = path.as_ref();
    if report.flips.is_empty() {
        std::fs::write(path, "image,label,radius,original_top1,blurred_top1\n").map_err(|e| Error::io(path, e))
    } else {
        write_rows(path, &report.flips)
    }
}

/// Columns: `image,variant,rank,class,probability`.
pub fn write_predictions_csv(path: impl AsRef<Path>, report: &AccuracyReport) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        image: &'a str,
        variant: &'a str,
        rank: usize,
        class: usize,
        probability: f32,
    }
    let rows = report.predictions.iter().flat_map(|p| {
        p.top.iter().enumerate().map(move |(rank, &(class, probability))| Row {
            image: &p.image,
            variant: &p.variant,
            rank: rank + 1,
            class,
            probability,
        })
    });
    write_rows(path.as_ref(), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Ranks classes by a fixed table keyed on the image's first pixel.
    struct Stub;

    impl ImageModel for Stub {
        fn class_count(&self) -> usize {
            6
        }

        fn classify(&self, image: &Tensor) -> Result<Tensor> {
            let key = (image.data()[0] * 10.0).round() as usize;
            let order: [usize; 6] = match key {
                0 => [0, 1, 2, 3, 4, 5],
                1 => [5, 4, 3, 2, 1, 0],
                _ => [2, 0, 4, 1, 3, 5],
            };
            let mut p = vec![0.0f32; 6];
            for (rank, &c) in order.iter().enumerate() {
                p[c] = (6 - rank) as f32 / 21.0;
            }
            Tensor::vector(&p)
        }

        fn saliency(&self, image: &Tensor) -> Result<Tensor> {
            let (_, h, w) = image.dims3()?;
            Ok(Tensor::full(vec![h, w], 1.0))
        }
    }

    fn item(id: &str, key: f32, label: usize) -> ExperimentImage {
        ExperimentImage { id: id.into(), image: Tensor::full(vec![3, 4, 4], key / 10.0), label }
    }

    #[test]
    fn stub_counts_match_hand_tally() {
        let items = [
            item("a", 0.0, 0),
            item("b", 0.0, 4),
            item("c", 1.0, 0),
            item("d", 2.0, 3),
            item("e", 2.0, 5),
        ];
        let cfg = BlurConfig { radii: vec![1.0], threshold: 0.5 };
        let report = run_blur_experiment(&Stub, &items, &cfg).unwrap();
        assert_eq!(report.variants.len(), 3);
        let orig = report.variant("original").unwrap();
        assert_eq!(orig.top1, 1.0 / 5.0);
        assert_eq!(orig.top5, 3.0 / 5.0);
        assert!(report.variants.iter().all(|v| v.top1 <= v.top5));
        assert_eq!(report.predictions.len(), 15);
        assert_eq!(report.mean_mask_area, 1.0);
    }

    #[test]
    fn zero_radius_leaves_accuracy() {
        let items = [item("a", 0.0, 0), item("b", 1.0, 1)];
        let cfg = BlurConfig { radii: vec![0.0], threshold: 0.1 };
        let report = run_blur_experiment(&Stub, &items, &cfg).unwrap();
        let orig = report.variants[0].clone();
        for v in &report.variants {
            assert_eq!((v.top1, v.top5), (orig.top1, orig.top5));
        }
    }

    #[test]
    fn rejects_empty_and_bad_labels() {
        let cfg = BlurConfig::default();
        assert!(matches!(run_blur_experiment(&Stub, &[], &cfg), Err(Error::EmptyDataset)));
        assert!(run_blur_experiment(&Stub, &[item("x", 0.0, 9)], &cfg).is_err());
        assert!(BlurConfig { radii: vec![-1.0], ..Default::default() }.validate().is_err());
    }
}
