use serde::{Deserialize, Serialize};

use super::spec::{Layer, NetworkSpec};
use super::weights::NetworkWeights;
use crate::error::{Error, Result};
use crate::tensor::{self, GradientTape, NodeId, Tensor};

/// Where the category seed for back-propagation is taken: the class logit
/// or the class probability.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tap {
    #[serde(alias = "before")]
    BeforeSoftmax,
    #[default]
    #[serde(alias = "after")]
    AfterSoftmax,
}

impl std::str::FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "before" | "before_softmax" => Ok(Tap::BeforeSoftmax),
            "after" | "after_softmax" => Ok(Tap::AfterSoftmax),
            _ => Err(Error::InvalidArgument(format!("unknown tap {s:?}, expected before|after"))),
        }
    }
}

impl std::fmt::Display for Tap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tap::BeforeSoftmax => "before_softmax",
            Tap::AfterSoftmax => "after_softmax",
        })
    }
}

/// Output of an untraced pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// ReLU outputs in forward order, after any hook has run on them.
    pub relus: Vec<Tensor>,
    pub logits: Tensor,
    pub probabilities: Tensor,
}

/// Plain inference; returns the class probabilities.
pub fn forward(spec: &NetworkSpec, weights: &NetworkWeights, image: &Tensor) -> Result<Tensor> {
    run_forward(spec, weights, image, |_, _| Ok(())).map(|o| o.probabilities)
}

/// Runs the network, calling `hook(relu_index, output)` on every ReLU output
/// before it feeds the next layer.
pub fn run_forward(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    image: &Tensor,
    mut hook: impl FnMut(usize, &mut Tensor) -> Result<()>,
) -> Result<ForwardOutput> {
    check_input(spec, image)?;
    let mut x = image.clone();
    let mut relus = Vec::new();
    let mut logits = None;
    for (i, l) in spec.layers().iter().enumerate() {
        x = match l.layer {
            Layer::Conv { stride, padding, .. } => {
                let p = params(weights, &l.name)?;
                tensor::conv2d_params(&x, &p.weight, &p.bias, stride, padding)?
            }
            Layer::Relu => {
                let mut y = tensor::relu(&x);
                hook(relus.len(), &mut y)?;
                relus.push(y.clone());
                y
            }
            Layer::MaxPool { window, stride } => tensor::maxpool2d(&x, window, stride)?,
            Layer::Flatten => {
                let n = x.len();
                x.into_shape(vec![n])?
            }
            Layer::FullyConnected { .. } => {
                let p = params(weights, &l.name)?;
                tensor::fully_connected(&x, &p.weight, &p.bias)?
            }
            Layer::Softmax => {
                logits = Some(x.clone());
                tensor::softmax(&x)?
            }
        };
        debug_assert_eq!(x.shape(), spec.output_shape(i));
    }
    Ok(ForwardOutput {
        relus,
        logits: logits.expect("validated spec ends in softmax"),
        probabilities: x,
    })
}

pub(crate) fn check_input(spec: &NetworkSpec, image: &Tensor) -> Result<()> {
    if image.shape() != spec.input_shape() {
        return Err(Error::Shape(format!(
            "image shape {:?} does not match network input {:?}",
            image.shape(),
            spec.input_shape()
        )));
    }
    Ok(())
}

fn params<'w>(weights: &'w NetworkWeights, name: &str) -> Result<&'w super::LayerParams> {
    weights
        .get(name)
        .ok_or_else(|| Error::UnknownLayer(name.to_string()))
}

/// Node handles produced by recording the network on a tape.
pub(crate) struct Recorded {
    #[cfg_attr(not(test), allow(dead_code))]
    pub input: NodeId,
    pub relus: Vec<NodeId>,
    pub logits: NodeId,
    pub probabilities: NodeId,
    /// `(weight, bias)` leaf nodes per learnable layer, forward order.
    pub params: Vec<(NodeId, NodeId)>,
}

pub(crate) fn record<'w>(
    tape: &mut GradientTape<'w>,
    spec: &NetworkSpec,
    weights: &'w NetworkWeights,
    image: Tensor,
    input_grad: bool,
    param_grad: bool,
) -> Result<Recorded> {
    check_input(spec, &image)?;
    let input = tape.leaf(image, input_grad);
    let mut x = input;
    let mut relus = Vec::new();
    let mut param_nodes = Vec::new();
    let mut logits = None;
    for l in spec.layers() {
        x = match l.layer {
            Layer::Conv { stride, padding, .. } => {
                let p = params(weights, &l.name)?;
                let w = tape.borrowed_leaf(&p.weight, param_grad);
                let b = tape.borrowed_leaf(&p.bias, param_grad);
                param_nodes.push((w, b));
                tape.conv2d(x, w, b, stride, padding)?
            }
            Layer::Relu => {
                let y = tape.relu(x)?;
                relus.push(y);
                y
            }
            Layer::MaxPool { window, stride } => tape.maxpool2d(x, window, stride)?,
            Layer::Flatten => {
                let n = tape.value(x)?.len();
                tape.reshape(x, &[n])?
            }
            Layer::FullyConnected { .. } => {
                let p = params(weights, &l.name)?;
                let w = tape.borrowed_leaf(&p.weight, param_grad);
                let b = tape.borrowed_leaf(&p.bias, param_grad);
                param_nodes.push((w, b));
                tape.linear(x, w, b)?
            }
            Layer::Softmax => {
                logits = Some(x);
                tape.softmax(x)?
            }
        };
    }
    Ok(Recorded {
        input,
        relus,
        logits: logits.expect("validated spec ends in softmax"),
        probabilities: x,
        params: param_nodes,
    })
}

/// One ReLU layer's saved output and, once a category has been
/// back-propagated, the gradient of the seed with respect to that output.
#[derive(Clone, Debug)]
pub struct ReluRecord {
    pub layer: String,
    pub activation: Tensor,
    pub gradient: Option<Tensor>,
}

/// Saved ReLU outputs and class scores from a traced forward pass. The tape
/// is kept so that gradients for several categories can be computed from
/// the same pass.
pub struct ActivationTrace<'w> {
    tape: Option<GradientTape<'w>>,
    recorded: Recorded,
    relus: Vec<ReluRecord>,
    logits: Tensor,
    probabilities: Tensor,
    seeded: Option<(usize, Tap)>,
}

/// Forward pass that records every ReLU output and keeps the tape for
/// [`ActivationTrace::backprop_category`].
pub fn forward_traced<'w>(
    spec: &NetworkSpec,
    weights: &'w NetworkWeights,
    image: &Tensor,
) -> Result<ActivationTrace<'w>> {
    let mut tape = GradientTape::new();
    let recorded = record(&mut tape, spec, weights, image.clone(), true, false)?;
    let relus = spec
        .relu_layers()
        .into_iter()
        .zip(&recorded.relus)
        .map(|(name, &id)| {
            Ok(ReluRecord {
                layer: name.to_string(),
                activation: tape.value(id)?.clone(),
                gradient: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let logits = tape.value(recorded.logits)?.clone();
    let probabilities = tape.value(recorded.probabilities)?.clone();
    Ok(ActivationTrace {
        tape: Some(tape),
        recorded,
        relus,
        logits,
        probabilities,
        seeded: None,
    })
}

impl<'w> ActivationTrace<'w> {
    pub fn relus(&self) -> &[ReluRecord] {
        &self.relus
    }

    pub fn logits(&self) -> &Tensor {
        &self.logits
    }

    pub fn probabilities(&self) -> &Tensor {
        &self.probabilities
    }

    pub fn class_count(&self) -> usize {
        self.probabilities.len()
    }

    pub fn predicted(&self) -> usize {
        self.probabilities.argmax()
    }

    /// Top-`k` classes by probability, ties to the lower index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        self.probabilities.top_k(k)
    }

    /// Category and tap of the most recent back-propagation, if any.
    pub fn seeded(&self) -> Option<(usize, Tap)> {
        self.seeded
    }

    /// Fills every ReLU record's gradient with d(score)/d(ReLU output), where
    /// the score is the class logit or probability depending on `tap`.
    /// Calling again overwrites the previous gradients.
    pub fn backprop_category(&mut self, class_index: usize, tap: Tap) -> Result<()> {
        if class_index >= self.class_count() {
            return Err(Error::InvalidArgument(format!(
                "class {class_index} out of range for {} classes",
                self.class_count()
            )));
        }
        let tape = self.tape.as_mut().ok_or(Error::TraceConsumed)?;
        let source = match tap {
            Tap::BeforeSoftmax => self.recorded.logits,
            Tap::AfterSoftmax => self.recorded.probabilities,
        };
        let seed = tape.select(source, class_index)?;
        let mut grads = tape.backward(seed)?;
        for (record, &id) in self.relus.iter_mut().zip(&self.recorded.relus) {
            let g = grads
                .take(id)
                .unwrap_or_else(|| Tensor::zeros(record.activation.shape().to_vec()));
            record.gradient = Some(g);
        }
        self.seeded = Some((class_index, tap));
        Ok(())
    }

    /// Drops the tape; saved activations and gradients stay readable but no
    /// further back-propagation is possible.
    pub fn release_tape(&mut self) {
        self.tape = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerParams, LayerSpec};

    fn linear_net() -> (NetworkSpec, NetworkWeights) {
        let spec = NetworkSpec::new(
            "linear",
            [1, 1, 3],
            vec!["a".into(), "b".into()],
            vec![
                LayerSpec { name: "flat".into(), layer: Layer::Flatten },
                LayerSpec { name: "fc".into(), layer: Layer::FullyConnected { out_features: 2 } },
                LayerSpec { name: "prob".into(), layer: Layer::Softmax },
            ],
        )
        .unwrap();
        let weights = NetworkWeights::from_layers(vec![(
            "fc".into(),
            LayerParams {
                weight: Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap(),
                bias: Tensor::vector(&[0.1, -0.1]).unwrap(),
            },
        )]);
        (spec, weights)
    }

    #[test]
    fn linear_network_logit_gradient_is_weight_row() {
        let (spec, weights) = linear_net();
        let image = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut tape = GradientTape::new();
        let rec = record(&mut tape, &spec, &weights, image, true, false).unwrap();
        let seed = tape.select(rec.logits, 1).unwrap();
        let grads = tape.backward(seed).unwrap();
        assert_eq!(grads.get(rec.input).unwrap().data(), &[1.5, 0.25, -0.75]);
    }

    #[test]
    fn repeated_backprop_is_identical_and_release_blocks_more() {
        let spec = NetworkSpec::mini_vgg();
        let weights = NetworkWeights::init(&spec, 1);
        let image = Tensor::from_fn(vec![3, 64, 64], |i| ((i % 17) as f32 - 8.0) / 8.0).unwrap();
        let mut trace = forward_traced(&spec, &weights, &image).unwrap();
        assert_eq!(trace.relus().len(), spec.relu_layers().len());
        trace.backprop_category(2, Tap::AfterSoftmax).unwrap();
        let first: Vec<_> = trace.relus().iter().map(|r| r.gradient.clone().unwrap()).collect();
        trace.backprop_category(2, Tap::AfterSoftmax).unwrap();
        for (a, r) in first.iter().zip(trace.relus()) {
            assert_eq!(a.to_bits(), r.gradient.as_ref().unwrap().to_bits());
        }
        assert!(trace.backprop_category(99, Tap::AfterSoftmax).is_err());
        trace.release_tape();
        assert!(matches!(
            trace.backprop_category(2, Tap::AfterSoftmax),
            Err(Error::TraceConsumed)
        ));
    }

    #[test]
    fn traced_and_plain_forward_agree_exactly() {
        let spec = NetworkSpec::mini_vgg();
        let weights = NetworkWeights::init(&spec, 5);
        let image = Tensor::from_fn(vec![3, 64, 64], |i| ((i * 7 % 23) as f32 - 11.0) / 11.0).unwrap();
        let plain = run_forward(&spec, &weights, &image, |_, _| Ok(())).unwrap();
        let trace = forward_traced(&spec, &weights, &image).unwrap();
        assert_eq!(plain.probabilities.to_bits(), trace.probabilities().to_bits());
        for (a, b) in plain.relus.iter().zip(trace.relus()) {
            assert_eq!(a.to_bits(), b.activation.to_bits());
        }
        let s: f64 = trace.probabilities().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let spec = NetworkSpec::mini_vgg();
        let weights = NetworkWeights::init(&spec, 5);
        assert!(forward(&spec, &weights, &Tensor::zeros(vec![3, 32, 32])).is_err());
    }
}
