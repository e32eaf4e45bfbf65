use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use super::ops::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`GradientTape`]. Handles carry the id of
/// the tape that issued them, so a handle from another tape is rejected.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

impl NodeId {
    pub fn index(self) -> usize {
        self.index
    }
}

enum Op {
    Leaf,
    Conv2d {
        input: usize,
        weights: usize,
        bias: usize,
        geometry: ConvGeometry,
        cols: Vec<f32>,
    },
    Relu {
        input: usize,
    },
    MaxPool {
        input: usize,
        argmax: Vec<usize>,
    },
    Reshape {
        input: usize,
    },
    Linear {
        input: usize,
        weights: usize,
        bias: usize,
    },
    Softmax {
        input: usize,
    },
    Select {
        input: usize,
        index: usize,
    },
    CrossEntropy {
        logits: usize,
        label: usize,
    },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations in execution order together with whatever the
/// backward pass needs (im2col buffers, pooling winners). Parameters can be
/// borrowed for the tape's lifetime instead of copied.
pub struct GradientTape<'a> {
    id: u64,
    nodes: Vec<Node<'a>>,
}

impl Default for GradientTape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> GradientTape<'a> {
    pub fn new() -> Self {
        GradientTape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, requires_grad)
    }

    pub fn borrowed_leaf(&mut self, value: &'a Tensor, requires_grad: bool) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, requires_grad)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        Ok(&self.nodes[self.resolve(id)?].value)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        let (i, w, b) = (self.resolve(input)?, self.resolve(weights)?, self.resolve(bias)?);
        let x = &self.nodes[i].value;
        let wt = &self.nodes[w].value;
        let bt = &self.nodes[b].value;
        let geometry = ConvGeometry::new(x, wt, stride, padding)?;
        if bt.shape() != [geometry.out_c] {
            return Err(Error::Shape(format!(
                "conv bias must have shape [{}], got {:?}",
                geometry.out_c,
                bt.shape()
            )));
        }
        let (out, cols) = ops::conv2d_im2col(x, wt, bt, &geometry)?;
        let rg = self.any_requires_grad(&[i, w, b]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Conv2d {
                input: i,
                weights: w,
                bias: b,
                geometry,
                cols,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.resolve(input)?;
        let out = ops::relu(&self.nodes[i].value);
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Cow::Owned(out), Op::Relu { input: i }, rg))
    }

    pub fn maxpool2d(&mut self, input: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let i = self.resolve(input)?;
        let (out, argmax) = ops::maxpool2d_with_argmax(&self.nodes[i].value, window, stride)?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Cow::Owned(out), Op::MaxPool { input: i, argmax }, rg))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId> {
        let i = self.resolve(input)?;
        let out = self.nodes[i].value.reshape(shape.to_vec())?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Cow::Owned(out), Op::Reshape { input: i }, rg))
    }

    pub fn linear(&mut self, input: NodeId, weights: NodeId, bias: NodeId) -> Result<NodeId> {
        let (i, w, b) = (self.resolve(input)?, self.resolve(weights)?, self.resolve(bias)?);
        let out = ops::fully_connected(&self.nodes[i].value, &self.nodes[w].value, &self.nodes[b].value)?;
        let rg = self.any_requires_grad(&[i, w, b]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Linear {
                input: i,
                weights: w,
                bias: b,
            },
            rg,
        ))
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let i = self.resolve(input)?;
        let out = ops::softmax(&self.nodes[i].value)?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Cow::Owned(out), Op::Softmax { input: i }, rg))
    }

    /// Picks one element of a vector as a scalar node.
    pub fn select(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let i = self.resolve(input)?;
        let x = &self.nodes[i].value;
        if index >= x.len() {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for {} values",
                x.len()
            )));
        }
        let out = Tensor::from_parts_unchecked(vec![1], vec![x.data()[index]]);
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Cow::Owned(out), Op::Select { input: i, index }, rg))
    }

    /// Softmax cross-entropy of a logit vector against one label, as a scalar.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> Result<NodeId> {
        let i = self.resolve(logits)?;
        let z = &self.nodes[i].value;
        if z.rank() != 1 || label >= z.len() {
            return Err(Error::InvalidArgument(format!(
                "label {label} invalid for logits of shape {:?}",
                z.shape()
            )));
        }
        let loss = ops::log_sum_exp(z.data()) - f64::from(z.data()[label]);
        let out = Tensor::from_op(vec![1], vec![loss as f32], "cross_entropy")?;
        let rg = self.nodes[i].requires_grad;
        Ok(self.push(Cow::Owned(out), Op::CrossEntropy { logits: i, label }, rg))
    }

    /// Reverse-mode pass from a scalar seed. Every node at or before the seed
    /// is visited once, newest first.
    pub fn backward(&self, seed: NodeId) -> Result<Gradients> {
        let seed_index = self.resolve(seed)?;
        let seed_value = &self.nodes[seed_index].value;
        if seed_value.len() != 1 {
            return Err(Error::NonScalarSeed(seed_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[seed_index] = Some(vec![1.0]);

        for idx in (0..=seed_index).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weights,
                    bias,
                    geometry,
                    cols,
                } => {
                    let need_input = self.nodes[*input].requires_grad;
                    let need_params =
                        self.nodes[*weights].requires_grad || self.nodes[*bias].requires_grad;
                    let cg = ops::conv2d_backward(
                        &g,
                        cols,
                        &self.nodes[*weights].value,
                        geometry,
                        need_input,
                        need_params,
                    );
                    if let Some(dx) = cg.input {
                        accumulate(&mut grads[*input], dx);
                    }
                    if self.nodes[*weights].requires_grad {
                        accumulate(&mut grads[*weights], cg.weights.expect("weight grads"));
                    }
                    if self.nodes[*bias].requires_grad {
                        accumulate(&mut grads[*bias], cg.bias.expect("bias grads"));
                    }
                }
                Op::Relu { input } => {
                    let y = node.value.data();
                    let dx = g
                        .iter()
                        .zip(y)
                        .map(|(&gv, &yv)| if yv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut grads[*input], dx);
                }
                Op::MaxPool { input, argmax } => {
                    let mut dx = vec![0.0f32; self.nodes[*input].value.len()];
                    for (&gv, &src) in g.iter().zip(argmax) {
                        dx[src] += gv;
                    }
                    accumulate(&mut grads[*input], dx);
                }
                Op::Reshape { input } => accumulate(&mut grads[*input], g.clone()),
                Op::Linear {
                    input,
                    weights,
                    bias,
                } => {
                    let w = &self.nodes[*weights].value;
                    if self.nodes[*input].requires_grad {
                        accumulate(&mut grads[*input], ops::fully_connected_backward_input(&g, w));
                    }
                    if self.nodes[*weights].requires_grad {
                        let x = self.nodes[*input].value.data();
                        let mut dw = Vec::with_capacity(w.len());
                        for &gv in &g {
                            dw.extend(x.iter().map(|&xv| gv * xv));
                        }
                        accumulate(&mut grads[*weights], dw);
                    }
                    if self.nodes[*bias].requires_grad {
                        accumulate(&mut grads[*bias], g.clone());
                    }
                }
                Op::Softmax { input } => {
                    let p = node.value.data();
                    let dot: f64 = g
                        .iter()
                        .zip(p)
                        .map(|(&gv, &pv)| f64::from(gv) * f64::from(pv))
                        .sum();
                    let dx = g
                        .iter()
                        .zip(p)
                        .map(|(&gv, &pv)| (f64::from(pv) * (f64::from(gv) - dot)) as f32)
                        .collect();
                    accumulate(&mut grads[*input], dx);
                }
                Op::Select { input, index } => {
                    let mut dx = vec![0.0f32; self.nodes[*input].value.len()];
                    dx[*index] = g[0];
                    accumulate(&mut grads[*input], dx);
                }
                Op::CrossEntropy { logits, label } => {
                    let z = self.nodes[*logits].value.data();
                    let lse = ops::log_sum_exp(z);
                    let scale = f64::from(g[0]);
                    let dz = z
                        .iter()
                        .enumerate()
                        .map(|(j, &zv)| {
                            let p = (f64::from(zv) - lse).exp();
                            let t = if j == *label { 1.0 } else { 0.0 };
                            (scale * (p - t)) as f32
                        })
                        .collect();
                    accumulate(&mut grads[*logits], dz);
                }
            }
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| {
                g.map(|data| {
                    if data.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite("backward"));
                    }
                    Ok(Tensor::from_parts_unchecked(node.value.shape().to_vec(), data))
                })
                .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn resolve(&self, id: NodeId) -> Result<usize> {
        if id.tape != self.id || id.index >= self.nodes.len() {
            return Err(Error::UnknownNode(id.index));
        }
        Ok(id.index)
    }

    fn any_requires_grad(&self, idx: &[usize]) -> bool {
        idx.iter().any(|&i| self.nodes[i].requires_grad)
    }
}

fn accumulate(slot: &mut Option<Vec<f32>>, contribution: Vec<f32>) {
    match slot {
        Some(existing) => {
            for (a, b) in existing.iter_mut().zip(contribution) {
                *a += b;
            }
        }
        None => *slot = Some(contribution),
    }
}

/// Gradients of one backward pass. Nodes that do not require gradients, or
/// that the seed does not depend on, have no entry.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get(id.index).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        if id.tape != self.tape {
            return None;
        }
        self.grads.get_mut(id.index).and_then(Option::take)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_gradient_at_positive_input() {
        let mut tape = GradientTape::new();
        let x = tape.leaf(Tensor::vector(&[2.0]).unwrap(), true);
        let y = tape.relu(x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0]);
    }

    #[test]
    fn softmax_first_output_gradient() {
        let mut tape = GradientTape::new();
        let x = tape.leaf(Tensor::zeros(vec![2]), true);
        let p = tape.softmax(x).unwrap();
        let s = tape.select(p, 0).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.25, -0.25]);
    }

    #[test]
    fn seed_must_be_scalar_and_on_tape() {
        let mut tape = GradientTape::new();
        let x = tape.leaf(Tensor::zeros(vec![3]), true);
        assert!(matches!(tape.backward(x), Err(Error::NonScalarSeed(_))));

        let mut other = GradientTape::new();
        let y = other.leaf(Tensor::zeros(vec![1]), true);
        assert!(matches!(tape.backward(y), Err(Error::UnknownNode(_))));
    }

    #[test]
    fn nodes_after_seed_and_constants_get_no_gradient() {
        let mut tape = GradientTape::new();
        let x = tape.leaf(Tensor::vector(&[1.0, -1.0]).unwrap(), true);
        let c = tape.leaf(Tensor::vector(&[3.0, 4.0]).unwrap(), false);
        let s = tape.select(x, 0).unwrap();
        let later = tape.relu(x).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 0.0]);
        assert!(g.get(c).is_none());
        assert!(g.get(later).is_none());
    }

    #[test]
    fn cross_entropy_gradient_is_probs_minus_onehot() {
        let mut tape = GradientTape::new();
        let z = tape.leaf(Tensor::zeros(vec![4]), true);
        let loss = tape.cross_entropy(z, 2).unwrap();
        assert!((tape.value(loss).unwrap().data()[0] - 4f32.ln()).abs() < 1e-6);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(z).unwrap().data(), &[0.25, 0.25, -0.75, 0.25]);
    }
}
