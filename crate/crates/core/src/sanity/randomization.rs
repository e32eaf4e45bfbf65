use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::correlation::{pearson, spearman};
use super::hog::hog_descriptor;
use crate::error::{Error, Result};
use crate::network::{LayerParams, NetworkSpec, NetworkWeights};
use crate::saliency::{saliency_map, SaliencyConfig};
use crate::tensor::Tensor;

/// Returns a copy of `weights` with `layer` re-drawn from the
/// initialisation distribution. The draw depends only on `seed` and the
/// layer's position.
pub fn randomize_layer(weights: &NetworkWeights, layer: &str, seed: u64) -> Result<NetworkWeights> {
    let position = weights
        .layers()
        .iter()
        .position(|(n, _)| n == layer)
        .ok_or_else(|| Error::UnknownLayer(layer.to_string()))?;
    let mut out = weights.clone();
    let params = out.get_mut(layer).expect("layer located above");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(position as u64);
    *params = LayerParams::kaiming_uniform(params.weight.shape(), params.bias.shape(), &mut rng);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizationMode {
    /// Each stage randomizes one more layer, top to bottom.
    Cascading,
    /// Each stage randomizes exactly one layer of the trained model.
    Independent,
}

impl std::str::FromStr for RandomizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cascading" => Ok(RandomizationMode::Cascading),
            "independent" => Ok(RandomizationMode::Independent),
            _ => Err(Error::InvalidArgument(format!(
                "unknown mode {s:?}, expected cascading|independent"
            ))),
        }
    }
}

impl std::fmt::Display for RandomizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RandomizationMode::Cascading => "cascading",
            RandomizationMode::Independent => "independent",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomizationPlan {
    pub mode: RandomizationMode,
    /// Learnable layers from the output back to the input.
    pub layers: Vec<String>,
    pub seed: u64,
}

impl RandomizationPlan {
    pub fn new(spec: &NetworkSpec, mode: RandomizationMode, seed: u64) -> Self {
        let layers = spec
            .learnable_layers()
            .into_iter()
            .rev()
            .map(|(n, _, _)| n.to_string())
            .collect();
        RandomizationPlan { mode, layers, seed }
    }
}

/// Similarity of one stage's saliency map to the trained model's map.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityRecord {
    pub stage: usize,
    /// Layer randomized at this stage; `original` for stage 0.
    pub layer_name: String,
    pub seed: u64,
    pub hog_pearson: f64,
    pub spearman: f64,
    /// Set when either correlation hit a zero-variance input.
    pub degenerate: bool,
}

fn compare(stage: usize, layer: &str, seed: u64, base: &Tensor, base_hog: &[f64], map: &Tensor) -> Result<SimilarityRecord> {
    let hog = pearson(base_hog, &hog_descriptor(map)?)?;
    let a: Vec<f64> = base.data().iter().map(|&v| f64::from(v)).collect();
    let b: Vec<f64> = map.data().iter().map(|&v| f64::from(v)).collect();
    let rank = spearman(&a, &b)?;
    Ok(SimilarityRecord {
        stage,
        layer_name: layer.to_string(),
        seed,
        hog_pearson: hog.value,
        spearman: rank.value,
        degenerate: hog.degenerate || rank.degenerate,
    })
}

/// Stage 0 compares the trained model's saliency map with itself; every
/// later stage randomizes per `plan` and compares against stage 0.
pub fn run_randomization_test(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    image: &Tensor,
    plan: &RandomizationPlan,
    cfg: &SaliencyConfig,
) -> Result<Vec<SimilarityRecord>> {
    let base = saliency_map(spec, weights, image, cfg)?.values;
    let base_hog = hog_descriptor(&base)?;
    let mut records = vec![compare(0, "original", plan.seed, &base, &base_hog, &base)?];
    let mut current = weights.clone();
    for (i, layer) in plan.layers.iter().enumerate() {
        let source = match plan.mode {
            RandomizationMode::Cascading => &current,
            RandomizationMode::Independent => weights,
        };
        current = randomize_layer(source, layer, plan.seed)?;
        let map = saliency_map(spec, &current, image, cfg)?.values;
        records.push(compare(i + 1, layer, plan.seed, &base, &base_hog, &map)?);
    }
    Ok(records)
}
