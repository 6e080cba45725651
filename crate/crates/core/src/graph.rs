//! A recording tape for reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so a reverse sweep over the node
//! list is a valid topological order for the backward pass.

use crate::error::{Error, Result};
use crate::ops::{
    Activation, Affine, ColMaxCenter, Conv, ConvTranspose, DifferentiableOp, Reshape, Softmax,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Option<Box<dyn DifferentiableOp<T>>>,
    inputs: Vec<usize>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar = f64> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: None,
            inputs: Vec::new(),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    pub fn apply(
        &mut self,
        mut op: impl DifferentiableOp<T> + 'static,
        inputs: &[Var],
    ) -> Result<Var> {
        let value = {
            let refs: Vec<&Tensor<T>> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            op.forward(&refs)?
        };
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: Some(Box::new(op)),
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gradients of the one-element node `root` with respect to every node
    /// that requires them.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("root must be a scalar, shape {:?}", self.nodes[root.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.nodes[root.0].value.shape().to_vec(), T::one()));
        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            let (Some(op), true) = (node.op.as_ref(), node.requires_grad) else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let refs: Vec<&Tensor<T>> = node.inputs.iter().map(|&i| &self.nodes[i].value).collect();
            let wanted: Vec<bool> = node.inputs.iter().map(|&i| self.nodes[i].requires_grad).collect();
            let input_grads = op.backward(&refs, &node.value, &g, &wanted)?;
            for (&i, gi) in node.inputs.iter().zip(input_grads) {
                let Some(gi) = gi else { continue };
                if gi.shape() != self.nodes[i].value.shape() {
                    return Err(Error::dim(
                        "backward",
                        format!(
                            "{} produced gradient {:?} for input {:?}",
                            op.name(),
                            gi.shape(),
                            self.nodes[i].value.shape()
                        ),
                    ));
                }
                match &mut grads[i] {
                    Some(acc) => acc.add_scaled(&gi, T::one())?,
                    slot => *slot = Some(gi),
                }
            }
        }
        Ok(Gradients { grads })
    }

    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.apply(Affine, &[x, w, b])
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.apply(Activation::Elu, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(Activation::Sigmoid, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(Softmax, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        self.apply(Reshape { shape: shape.into() }, &[x])
    }

    pub fn conv(&mut self, rank: usize, stride: usize, x: Var, k: Var, b: Var) -> Result<Var> {
        self.apply(Conv::new(rank, stride), &[x, k, b])
    }

    pub fn conv_transpose(
        &mut self,
        rank: usize,
        stride: usize,
        z: Var,
        k: Var,
        b: Var,
    ) -> Result<Var> {
        self.apply(ConvTranspose::new(rank, stride), &[z, k, b])
    }

    /// One equivariant layer: `W·(H_k − max(H, rows)) + b` for every row.
    pub fn equivariant(&mut self, h: Var, w: Var, b: Var) -> Result<Var> {
        let centered = self.apply(ColMaxCenter::default(), &[h])?;
        self.affine(centered, w, b)
    }
}

pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_input_accumulates() {
        // x and w each feed two affine nodes
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_f64([1, 2], &[1.0, 2.0]).unwrap());
        let w = g.param(Tensor::from_f64([1, 2], &[3.0, 4.0]).unwrap());
        let b = g.constant(Tensor::zeros([1]));
        let y1 = g.affine(x, w, b).unwrap();
        let y2 = g.affine(x, w, b).unwrap();
        let s = g
            .apply(
                crate::ops::LinearCombination { coeffs: vec![1.0, 2.0] },
                &[y1, y2],
            )
            .unwrap();
        assert_eq!(g.value(s).item().unwrap(), 33.0);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[9.0, 12.0]);
        assert_eq!(grads.get(w).unwrap().data(), &[3.0, 6.0]);
        assert!(grads.get(b).is_none());
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros([2]));
        let y = g.sigmoid(x).unwrap();
        assert!(g.backward(y).is_err());
    }
}
