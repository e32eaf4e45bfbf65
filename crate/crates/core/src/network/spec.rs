//! Network topology files.
//!
//! A spec is a TOML document: a name, the `(C, H, W)` input shape, the class
//! table, and an ordered `[[layers]]` list. Shapes are checked to chain when
//! the spec is parsed.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::conv_output_dim;

const MINI_VGG: &str = include_str!("../../specs/mini_vgg.spec");
const VGG16: &str = include_str!("../../specs/vgg16.spec");

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv {
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    FullyConnected {
        out_features: usize,
    },
    Softmax,
}

impl Layer {
    pub fn is_learnable(&self) -> bool {
        matches!(self, Layer::Conv { .. } | Layer::FullyConnected { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: String,
    pub layer: Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    name: String,
    input: [usize; 3],
    classes: Vec<String>,
    layers: Vec<LayerSpec>,
    /// Output shape of every layer, aligned with `layers`.
    shapes: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    name: String,
    input: [usize; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_count: Option<usize>,
    layers: Vec<LayerEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum LayerEntry {
    Conv {
        name: String,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    Relu {
        name: String,
    },
    Maxpool {
        name: String,
        window: usize,
        stride: usize,
    },
    Flatten {
        name: String,
    },
    Fc {
        name: String,
        out_features: usize,
    },
    Softmax {
        name: String,
    },
}

fn one() -> usize {
    1
}

impl NetworkSpec {
    pub fn new(
        name: impl Into<String>,
        input: [usize; 3],
        classes: Vec<String>,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        let shapes = validate(input, classes.len(), &layers)?;
        Ok(NetworkSpec {
            name: name.into(),
            input,
            classes,
            layers,
            shapes,
        })
    }

    /// The desk-scale VGG analogue shipped with the crate.
    pub fn mini_vgg() -> Self {
        Self::parse(MINI_VGG).expect("bundled mini_vgg.spec is valid")
    }

    /// Full VGG-16 topology (224x224 input, 1000 classes).
    pub fn vgg16() -> Self {
        Self::parse(VGG16).expect("bundled vgg16.spec is valid")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: SpecFile = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        let classes = match (file.classes.is_empty(), file.class_count) {
            (false, None) => file.classes,
            (false, Some(n)) if n == file.classes.len() => file.classes,
            (false, Some(n)) => {
                return Err(Error::Spec(format!(
                    "class_count = {n} but {} class names are listed",
                    file.classes.len()
                )))
            }
            (true, Some(n)) => (0..n).map(|i| format!("class_{i}")).collect(),
            (true, None) => return Err(Error::Spec("either classes or class_count is required".into())),
        };
        let layers = file
            .layers
            .into_iter()
            .map(|entry| {
                let (name, layer) = match entry {
                    LayerEntry::Conv {
                        name,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    } => (
                        name,
                        Layer::Conv {
                            out_channels,
                            kernel,
                            stride,
                            padding,
                        },
                    ),
                    LayerEntry::Relu { name } => (name, Layer::Relu),
                    LayerEntry::Maxpool {
                        name,
                        window,
                        stride,
                    } => (name, Layer::MaxPool { window, stride }),
                    LayerEntry::Flatten { name } => (name, Layer::Flatten),
                    LayerEntry::Fc { name, out_features } => {
                        (name, Layer::FullyConnected { out_features })
                    }
                    LayerEntry::Softmax { name } => (name, Layer::Softmax),
                };
                LayerSpec { name, layer }
            })
            .collect();
        Self::new(file.name, file.input, classes, layers)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Spec(msg) => Error::Spec(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                let name = l.name.clone();
                match l.layer {
                    Layer::Conv {
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    } => LayerEntry::Conv {
                        name,
                        out_channels,
                        kernel,
                        stride,
                        padding,
                    },
                    Layer::Relu => LayerEntry::Relu { name },
                    Layer::MaxPool { window, stride } => LayerEntry::Maxpool {
                        name,
                        window,
                        stride,
                    },
                    Layer::Flatten => LayerEntry::Flatten { name },
                    Layer::FullyConnected { out_features } => LayerEntry::Fc { name, out_features },
                    Layer::Softmax => LayerEntry::Softmax { name },
                }
            })
            .collect();
        let file = SpecFile {
            name: self.name.clone(),
            input: self.input,
            classes: self.classes.clone(),
            class_count: None,
            layers,
        };
        toml::to_string(&file).expect("spec serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of layer `i`.
    pub fn output_shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    /// Input shape of layer `i`.
    pub fn layer_input_shape(&self, i: usize) -> Vec<usize> {
        if i == 0 {
            self.input.to_vec()
        } else {
            self.shapes[i - 1].clone()
        }
    }

    pub fn relu_layers(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.layer == Layer::Relu)
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Learnable layers in forward order with their `(weight, bias)` shapes.
    pub fn learnable_layers(&self) -> Vec<(&str, Vec<usize>, Vec<usize>)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                let input = self.layer_input_shape(i);
                match l.layer {
                    Layer::Conv {
                        out_channels,
                        kernel,
                        ..
                    } => Some((
                        l.name.as_str(),
                        vec![out_channels, input[0], kernel, kernel],
                        vec![out_channels],
                    )),
                    Layer::FullyConnected { out_features } => Some((
                        l.name.as_str(),
                        vec![out_features, input[0]],
                        vec![out_features],
                    )),
                    _ => None,
                }
            })
            .collect()
    }

    /// The layer feeding the final softmax, whose output is the logit vector.
    pub fn logits_layer(&self) -> usize {
        self.layers.len() - 2
    }
}

fn validate(input: [usize; 3], class_count: usize, layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>> {
    if input.iter().any(|&d| d == 0) {
        return Err(Error::Spec(format!("input shape {input:?} must be positive")));
    }
    if class_count == 0 {
        return Err(Error::Spec("at least one class is required".into()));
    }
    if layers.len() < 2 {
        return Err(Error::Spec("a network needs at least a fully-connected and a softmax layer".into()));
    }
    let mut seen = HashSet::new();
    for l in layers {
        if l.name.is_empty() || l.name.contains('.') {
            return Err(Error::Spec(format!("invalid layer name {:?}", l.name)));
        }
        if !seen.insert(l.name.as_str()) {
            return Err(Error::Spec(format!("duplicate layer name {}", l.name)));
        }
    }

    let last = layers.len() - 1;
    if layers[last].layer != Layer::Softmax {
        return Err(Error::Spec("the last layer must be softmax".into()));
    }
    if !matches!(layers[last - 1].layer, Layer::FullyConnected { .. }) {
        return Err(Error::Spec("softmax must follow a fully-connected layer".into()));
    }

    let mut shape = input.to_vec();
    let mut shapes = Vec::with_capacity(layers.len());
    for (i, l) in layers.iter().enumerate() {
        let err = |msg: String| Error::Spec(format!("layer {}: {msg}", l.name));
        shape = match l.layer {
            Layer::Conv {
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let [_, h, w] = shape[..] else {
                    return Err(err(format!("conv needs a (C, H, W) input, got {shape:?}")));
                };
                if out_channels == 0 || kernel % 2 == 0 {
                    return Err(err("conv needs out_channels > 0 and an odd kernel".into()));
                }
                let oh = conv_output_dim(h, kernel, stride, padding).map_err(|e| err(e.to_string()))?;
                let ow = conv_output_dim(w, kernel, stride, padding).map_err(|e| err(e.to_string()))?;
                vec![out_channels, oh, ow]
            }
            Layer::Relu => shape,
            Layer::MaxPool { window, stride } => {
                let [c, h, w] = shape[..] else {
                    return Err(err(format!("maxpool needs a (C, H, W) input, got {shape:?}")));
                };
                if window == 0 {
                    return Err(err("pool window must be positive".into()));
                }
                let oh = conv_output_dim(h, window, stride, 0).map_err(|e| err(e.to_string()))?;
                let ow = conv_output_dim(w, window, stride, 0).map_err(|e| err(e.to_string()))?;
                vec![c, oh, ow]
            }
            Layer::Flatten => vec![shape.iter().product()],
            Layer::FullyConnected { out_features } => {
                if shape.len() != 1 {
                    return Err(err(format!(
                        "fully-connected layer needs a flat input, got {shape:?}; add a flatten layer"
                    )));
                }
                if out_features == 0 {
                    return Err(err("out_features must be positive".into()));
                }
                vec![out_features]
            }
            Layer::Softmax => {
                if i != last {
                    return Err(err("softmax is only allowed as the last layer".into()));
                }
                if shape != [class_count] {
                    return Err(err(format!(
                        "softmax input {shape:?} does not match {class_count} classes"
                    )));
                }
                shape
            }
        };
        let needs_relu = match l.layer {
            Layer::Conv { .. } => true,
            Layer::FullyConnected { .. } => i != last - 1,
            _ => false,
        };
        if needs_relu && layers.get(i + 1).map(|n| &n.layer) != Some(&Layer::Relu) {
            return Err(err("must be followed by a relu layer".into()));
        }
        shapes.push(shape.clone());
    }
    Ok(shapes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_specs_parse() {
        let mini = NetworkSpec::mini_vgg();
        assert_eq!(mini.input_shape(), [3, 64, 64]);
        assert_eq!(mini.relu_layers().len(), 7);
        assert_eq!(mini.learnable_layers().len(), 8);
        assert_eq!(mini.output_shape(mini.layers().len() - 1), &[mini.class_count()]);

        let vgg = NetworkSpec::vgg16();
        assert_eq!(vgg.input_shape(), [3, 224, 224]);
        assert_eq!(vgg.class_count(), 1000);
        assert_eq!(vgg.relu_layers().len(), 15);
        assert_eq!(vgg.learnable_layers().len(), 16);
    }

    #[test]
    fn toml_roundtrip() {
        let mini = NetworkSpec::mini_vgg();
        assert_eq!(NetworkSpec::parse(&mini.to_toml()).unwrap(), mini);
    }

    const TINY: &str = r#"
name = "tiny"
input = [1, 4, 4]
classes = ["a", "b"]

[[layers]]
type = "conv"
name = "conv1"
out_channels = 2
kernel = 3
padding = 1

[[layers]]
type = "relu"
name = "relu1"

[[layers]]
type = "flatten"
name = "flat"

[[layers]]
type = "fc"
name = "fc1"
out_features = 2

[[layers]]
type = "softmax"
name = "prob"
"#;

    #[test]
    fn parses_minimal_spec() {
        let spec = NetworkSpec::parse(TINY).unwrap();
        assert_eq!(spec.output_shape(2), &[32]);
        assert_eq!(spec.classes(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn conv_without_relu_is_rejected() {
        let text = TINY.replace("type = \"relu\"\nname = \"relu1\"", "type = \"flatten\"\nname = \"f0\"");
        let err = NetworkSpec::parse(&text).unwrap_err();
        assert!(err.to_string().contains("relu"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = TINY.replace("padding = 1", "padding = 1\ndilation = 2");
        assert!(NetworkSpec::parse(&text).is_err());
    }

    #[test]
    fn shape_chain_is_checked() {
        let text = TINY.replace("kernel = 3\npadding = 1", "kernel = 3\nstride = 2\npadding = 0");
        let err = NetworkSpec::parse(&text).unwrap_err();
        assert!(err.to_string().contains("conv1"), "{err}");
        let text = TINY.replace("classes = [\"a\", \"b\"]", "classes = [\"a\", \"b\", \"c\"]");
        assert!(NetworkSpec::parse(&text).is_err());
    }
}
