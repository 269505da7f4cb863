//! Reverse-mode autodiff over a linear tape.
//!
//! Forward ops evaluate eagerly and append a node. `backward` walks the tape in
//! reverse; every node pushes its contribution into its inputs in a fixed
//! order, so gradient accumulation is deterministic. Parameters are leaf nodes
//! keyed by name: asking for the same name twice returns the same node, which
//! is how tied weights accumulate the sum of their per-use gradients.

use std::collections::HashMap;
use std::sync::Arc;

use super::conv::{conv2d, conv2d_backward, ConvSpec};
use super::ops::{self, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Input,
    Param,
    Conv {
        x: Var,
        w: Var,
        b: Option<Var>,
        spec: ConvSpec,
    },
    Add(Var, Var),
    Relu(Var),
    BatchNorm {
        x: Var,
        scale: Var,
        shift: Var,
        xhat: Tensor<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Tensor<T>,
    },
    Mse {
        pred: Var,
        target: Var,
    },
    Sum(Var),
}

struct Node<T> {
    op: Op<T>,
    value: Arc<Tensor<T>>,
}

pub struct Tape<T: Element = f32> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            op,
            value: Arc::new(value),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(Op::Input, t)
    }

    /// Leaf for a named parameter. Repeated names share one node.
    pub fn param(&mut self, name: &str, value: Arc<Tensor<T>>) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        self.nodes.push(Node { op: Op::Param, value });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        v
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let y = conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), spec)?;
        Ok(self.push(Op::Conv { x, w, b, spec: *spec }, y))
    }

    pub fn conv1d_h(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        let y = super::conv::conv1d_h(self.value(x), self.value(w), spec)?;
        Ok(self.push(Op::Conv { x, w, b: None, spec: *spec }, y))
    }

    pub fn conv1d_w(&mut self, x: Var, w: Var, spec: &ConvSpec) -> Result<Var> {
        let y = super::conv::conv1d_w(self.value(x), self.value(w), spec)?;
        Ok(self.push(Op::Conv { x, w, b: None, spec: *spec }, y))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), y))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(Op::Relu(x), y)
    }

    pub fn batch_norm(
        &mut self,
        x: Var,
        scale: Var,
        shift: Var,
        running_mean: &mut Tensor<T>,
        running_var: &mut Tensor<T>,
        mode: Mode,
    ) -> Result<Var> {
        let out = ops::batch_norm(
            self.value(x),
            self.value(scale),
            self.value(shift),
            running_mean,
            running_var,
            mode,
        )?;
        Ok(self.push(
            Op::BatchNorm {
                x,
                scale,
                shift,
                xhat: out.xhat,
                inv_std: out.inv_std,
                mode,
            },
            out.y,
        ))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(Op::GlobalAvgPool(x), y))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::linear(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(Op::Linear { x, w, b }, y))
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy(self.value(logits), labels)?;
        Ok(self.push(
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::mse_loss(self.value(pred), self.value(target))?;
        Ok(self.push(Op::Mse { pred, target }, Tensor::scalar(loss)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Op::Sum(x), Tensor::scalar(s))
    }

    /// Gradients of the scalar `loss` with respect to every node before it.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::State("backward called before the forward pass recorded this node".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));

        fn acc<T: Element>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => {
                    *slot = Some(g);
                    Ok(())
                }
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input | Op::Param => {}
                Op::Conv { x, w, b, spec } => {
                    let cg = conv2d_backward(self.value(*x), self.value(*w), spec, &g)?;
                    acc(&mut grads, *x, cg.dx)?;
                    acc(&mut grads, *w, cg.dw)?;
                    if let (Some(b), Some(db)) = (b, cg.db) {
                        acc(&mut grads, *b, db)?;
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone())?;
                    acc(&mut grads, *b, g.clone())?;
                }
                Op::Relu(x) => {
                    let dx = ops::relu_backward(self.value(*x), &g);
                    acc(&mut grads, *x, dx)?;
                }
                Op::BatchNorm {
                    x,
                    scale,
                    shift,
                    xhat,
                    inv_std,
                    mode,
                } => {
                    let bg = ops::batch_norm_backward(xhat, inv_std, self.value(*scale), *mode, &g)?;
                    acc(&mut grads, *x, bg.dx)?;
                    acc(&mut grads, *scale, bg.dscale)?;
                    acc(&mut grads, *shift, bg.dshift)?;
                }
                Op::GlobalAvgPool(x) => {
                    let dx = ops::global_avg_pool_backward(self.value(*x).shape(), &g);
                    acc(&mut grads, *x, dx)?;
                }
                Op::Linear { x, w, b } => {
                    let (dx, dw, db) = ops::linear_backward(self.value(*x), self.value(*w), &g)?;
                    let dx = dx.reshape(self.value(*x).shape())?;
                    acc(&mut grads, *x, dx)?;
                    acc(&mut grads, *w, dw)?;
                    acc(&mut grads, *b, db)?;
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let d = ops::softmax_cross_entropy_backward(probs, labels, g.data()[0]);
                    acc(&mut grads, *logits, d)?;
                }
                Op::Mse { pred, target } => {
                    let d = ops::mse_backward(self.value(*pred), self.value(*target), g.data()[0]);
                    acc(&mut grads, *target, d.scale(-T::one()))?;
                    acc(&mut grads, *pred, d)?;
                }
                Op::Sum(x) => {
                    let dx = Tensor::full(self.value(*x).shape(), g.data()[0])?;
                    acc(&mut grads, *x, dx)?;
                }
            }
            grads[i] = Some(g);
        }
        let params = self
            .param_order
            .iter()
            .filter(|(_, v)| v.0 <= loss.0)
            .map(|(n, v)| (n.clone(), *v))
            .collect();
        Ok(Gradients { grads, params })
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(String, Var)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for any recorded node (input, parameter or intermediate).
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| self.wrt(*v))
    }

    /// `(name, gradient)` for each parameter that influenced the loss, in the
    /// order the parameters were first used.
    pub fn params(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.wrt(*v).map(|g| (n.as_str(), g)))
    }
}
