//! Operation recording and reverse-mode gradient computation.
//!
//! A [`Tape`] is an append-only list of primitive operations. Recording an op
//! runs its forward kernel immediately and stores the result, so the tape is
//! topologically ordered by construction: an op can only reference ids that
//! already exist. [`Tape::backward`] sweeps the record in reverse, applying
//! each op's vector-Jacobian product, and returns gradients for parameter
//! leaves. [`Tape::replay`] re-executes the record from its leaves, which
//! must reproduce every stored value bit for bit.

use crate::error::{Error, Result};

use super::{
    add_channel_bias, add_channel_bias_backward_bias, conv2d, conv2d_backward_bias,
    conv2d_backward_input, conv2d_backward_kernel, conv_dims, dense, dense_backward, group_norm,
    group_norm_backward, silu_derivative, upsample_nearest_2x, upsample_nearest_2x_backward,
    GroupNormStats, Tensor,
};

pub type ValueId = usize;

#[derive(Debug, Clone)]
enum Recorded {
    Leaf { parameter: bool },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Exp { a: ValueId },
    Silu { a: ValueId },
    Conv2d { input: ValueId, kernel: ValueId, bias: Option<ValueId>, stride: usize, padding: usize },
    Dense { input: ValueId, weight: ValueId, bias: ValueId },
    GroupNorm { input: ValueId, gain: ValueId, bias: ValueId, groups: usize, saved: GroupNormStats },
    AddChannelBias { input: ValueId, bias: ValueId },
    UpsampleNearest2x { input: ValueId },
    Sum { a: ValueId },
    Mean { a: ValueId },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Recorded,
    needs_grad: bool,
}

/// Recorded computation: every op applied, in order, with its output value.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to the tape's parameter leaves.
pub struct Gradients {
    by_id: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a parameter id; `None` for non-parameters.
    pub fn get(&self, id: ValueId) -> Option<&Tensor> {
        self.by_id.get(id).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Value produced by a recorded op.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Register an input that will not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Recorded::Leaf { parameter: false }, false)
    }

    /// Register a trainable parameter leaf.
    pub fn parameter(&mut self, value: Tensor) -> ValueId {
        self.push(value, Recorded::Leaf { parameter: true }, true)
    }

    fn push(&mut self, value: Tensor, op: Recorded, needs_grad: bool) -> ValueId {
        let id = self.nodes.len();
        self.nodes.push(Node { value, op, needs_grad });
        id
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id].needs_grad
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.value(a).add(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Recorded::Add { a, b }, needs))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.value(a).sub(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Recorded::Sub { a, b }, needs))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let v = self.value(a).mul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Recorded::Mul { a, b }, needs))
    }

    pub fn exp(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).exp();
        let needs = self.needs(a);
        self.push(v, Recorded::Exp { a }, needs)
    }

    pub fn silu(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).silu();
        let needs = self.needs(a);
        self.push(v, Recorded::Silu { a }, needs)
    }

    pub fn conv2d(
        &mut self,
        input: ValueId,
        kernel: ValueId,
        bias: Option<ValueId>,
        stride: usize,
        padding: usize,
    ) -> Result<ValueId> {
        let v = conv2d(
            self.value(input),
            self.value(kernel),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let needs =
            self.needs(input) || self.needs(kernel) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(v, Recorded::Conv2d { input, kernel, bias, stride, padding }, needs))
    }

    pub fn dense(&mut self, input: ValueId, weight: ValueId, bias: ValueId) -> Result<ValueId> {
        let v = dense(self.value(input), self.value(weight), self.value(bias))?;
        let needs = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(v, Recorded::Dense { input, weight, bias }, needs))
    }

    pub fn group_norm(
        &mut self,
        input: ValueId,
        gain: ValueId,
        bias: ValueId,
        groups: usize,
    ) -> Result<ValueId> {
        let (v, saved) = group_norm(self.value(input), self.value(gain), self.value(bias), groups)?;
        let needs = self.needs(input) || self.needs(gain) || self.needs(bias);
        Ok(self.push(v, Recorded::GroupNorm { input, gain, bias, groups, saved }, needs))
    }

    pub fn add_channel_bias(&mut self, input: ValueId, bias: ValueId) -> Result<ValueId> {
        let v = add_channel_bias(self.value(input), self.value(bias))?;
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(v, Recorded::AddChannelBias { input, bias }, needs))
    }

    pub fn upsample_nearest_2x(&mut self, input: ValueId) -> Result<ValueId> {
        let v = upsample_nearest_2x(self.value(input))?;
        let needs = self.needs(input);
        Ok(self.push(v, Recorded::UpsampleNearest2x { input }, needs))
    }

    pub fn sum(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).sum();
        let needs = self.needs(a);
        self.push(v, Recorded::Sum { a }, needs)
    }

    pub fn mean(&mut self, a: ValueId) -> ValueId {
        let v = self.value(a).mean();
        let needs = self.needs(a);
        self.push(v, Recorded::Mean { a }, needs)
    }

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// parameter leaf; non-parameters receive no gradient.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        let loss_node = self
            .nodes
            .get(loss)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown value id {loss}")))?;
        if !loss_node.value.is_scalar() {
            return Err(Error::InvalidParameter(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Tensor::scalar(1.0));

        for id in (0..=loss).rev() {
            let Some(grad_out) = grads[id].take() else { continue };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.apply_vjp(id, &grad_out, &mut grads);
            // keep gradients only for leaves; interior grads are consumed
            if matches!(self.nodes[id].op, Recorded::Leaf { .. }) {
                grads[id] = Some(grad_out);
            }
        }

        // expose parameter gradients only
        for (id, slot) in grads.iter_mut().enumerate() {
            if !matches!(self.nodes[id].op, Recorded::Leaf { parameter: true }) {
                *slot = None;
            }
        }
        Ok(Gradients { by_id: grads })
    }

    fn apply_vjp(&self, id: ValueId, grad_out: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Recorded::Leaf { .. } => {}
            Recorded::Add { a, b } => {
                self.accumulate(*a, grad_out.clone(), grads);
                self.accumulate_broadcast(*b, grad_out, 1.0, grads);
            }
            Recorded::Sub { a, b } => {
                self.accumulate(*a, grad_out.clone(), grads);
                self.accumulate_broadcast(*b, grad_out, -1.0, grads);
            }
            Recorded::Mul { a, b } => {
                if self.needs(*a) {
                    let da = grad_out.mul(self.value(*b)).expect("recorded shapes");
                    self.accumulate(*a, da, grads);
                }
                if self.needs(*b) {
                    let prod = grad_out.mul(self.value(*a)).expect("recorded shapes");
                    if self.value(*b).is_scalar() && !grad_out.is_scalar() {
                        self.accumulate(*b, prod.sum(), grads);
                    } else {
                        self.accumulate(*b, prod, grads);
                    }
                }
            }
            Recorded::Exp { a } => {
                let da = grad_out.mul(self.value(id)).expect("same shape");
                self.accumulate(*a, da, grads);
            }
            Recorded::Silu { a } => {
                let x = self.value(*a);
                let vals = grad_out
                    .values()
                    .iter()
                    .zip(x.values())
                    .map(|(&g, &xv)| g * silu_derivative(xv))
                    .collect();
                let da = Tensor::from_vec(x.shape().to_vec(), vals).expect("same shape");
                self.accumulate(*a, da, grads);
            }
            Recorded::Conv2d { input, kernel, bias, stride, padding } => {
                let d = conv_dims(self.value(*input), self.value(*kernel), *stride, *padding)
                    .expect("recorded shapes");
                if self.needs(*input) {
                    let dx = conv2d_backward_input(self.value(*kernel), grad_out, d);
                    self.accumulate(*input, dx, grads);
                }
                if self.needs(*kernel) {
                    let dk = conv2d_backward_kernel(self.value(*input), grad_out, d);
                    self.accumulate(*kernel, dk, grads);
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        let db = conv2d_backward_bias(grad_out, d);
                        self.accumulate(*b, db, grads);
                    }
                }
            }
            Recorded::Dense { input, weight, bias } => {
                let (dx, dw, db) = dense_backward(self.value(*input), self.value(*weight), grad_out);
                if self.needs(*input) {
                    self.accumulate(*input, dx, grads);
                }
                if self.needs(*weight) {
                    self.accumulate(*weight, dw, grads);
                }
                if self.needs(*bias) {
                    self.accumulate(*bias, db, grads);
                }
            }
            Recorded::GroupNorm { input, gain, bias, groups, saved } => {
                let (dx, dgain, dbias) =
                    group_norm_backward(self.value(*input), self.value(*gain), *groups, saved, grad_out);
                if self.needs(*input) {
                    self.accumulate(*input, dx, grads);
                }
                if self.needs(*gain) {
                    self.accumulate(*gain, dgain, grads);
                }
                if self.needs(*bias) {
                    self.accumulate(*bias, dbias, grads);
                }
            }
            Recorded::AddChannelBias { input, bias } => {
                if self.needs(*input) {
                    self.accumulate(*input, grad_out.clone(), grads);
                }
                if self.needs(*bias) {
                    let db = add_channel_bias_backward_bias(grad_out);
                    self.accumulate(*bias, db, grads);
                }
            }
            Recorded::UpsampleNearest2x { input } => {
                let dx = upsample_nearest_2x_backward(grad_out);
                self.accumulate(*input, dx, grads);
            }
            Recorded::Sum { a } => {
                let g = grad_out.item();
                let da = Tensor::full(self.value(*a).shape(), g);
                self.accumulate(*a, da, grads);
            }
            Recorded::Mean { a } => {
                let n = self.value(*a).len() as f32;
                let da = Tensor::full(self.value(*a).shape(), grad_out.item() / n);
                self.accumulate(*a, da, grads);
            }
        }
    }

    fn accumulate(&self, id: ValueId, grad: Tensor, grads: &mut [Option<Tensor>]) {
        if !self.needs(id) {
            return;
        }
        grads[id] = Some(match grads[id].take() {
            Some(existing) => existing.add(&grad).expect("gradient shapes agree"),
            None => grad,
        });
    }

    /// Accumulate into `id` a gradient that may need reduction to a scalar
    /// (the broadcast case of add/sub), with a sign factor.
    fn accumulate_broadcast(&self, id: ValueId, grad_out: &Tensor, sign: f32, grads: &mut [Option<Tensor>]) {
        if !self.needs(id) {
            return;
        }
        let target_scalar = self.value(id).is_scalar() && !grad_out.is_scalar();
        let g = if target_scalar {
            Tensor::scalar((grad_out.sum_f64() * sign as f64) as f32)
        } else if sign == 1.0 {
            grad_out.clone()
        } else {
            grad_out.scale(sign)
        };
        self.accumulate(id, g, grads);
    }

    /// Re-execute every recorded op from the leaf values. The rebuilt tape
    /// must hold bit-identical values; callers can assert that to verify
    /// replay determinism.
    pub fn replay(&self) -> Result<Tape> {
        let mut out = Tape::new();
        for node in &self.nodes {
            match &node.op {
                Recorded::Leaf { parameter: true } => {
                    out.parameter(node.value.clone());
                }
                Recorded::Leaf { parameter: false } => {
                    out.constant(node.value.clone());
                }
                Recorded::Add { a, b } => {
                    out.add(*a, *b)?;
                }
                Recorded::Sub { a, b } => {
                    out.sub(*a, *b)?;
                }
                Recorded::Mul { a, b } => {
                    out.mul(*a, *b)?;
                }
                Recorded::Exp { a } => {
                    out.exp(*a);
                }
                Recorded::Silu { a } => {
                    out.silu(*a);
                }
                Recorded::Conv2d { input, kernel, bias, stride, padding } => {
                    out.conv2d(*input, *kernel, *bias, *stride, *padding)?;
                }
                Recorded::Dense { input, weight, bias } => {
                    out.dense(*input, *weight, *bias)?;
                }
                Recorded::GroupNorm { input, gain, bias, groups, .. } => {
                    out.group_norm(*input, *gain, *bias, *groups)?;
                }
                Recorded::AddChannelBias { input, bias } => {
                    out.add_channel_bias(*input, *bias)?;
                }
                Recorded::UpsampleNearest2x { input } => {
                    out.upsample_nearest_2x(*input)?;
                }
                Recorded::Sum { a } => {
                    out.sum(*a);
                }
                Recorded::Mean { a } => {
                    out.mean(*a);
                }
            }
        }
        Ok(out)
    }

    /// Bitwise comparison of all node values against another tape.
    pub fn values_identical(&self, other: &Tape) -> bool {
        self.nodes.len() == other.nodes.len()
            && self
                .nodes
                .iter()
                .zip(&other.nodes)
                .all(|(a, b)| a.value.values() == b.value.values() && a.value.shape() == b.value.shape())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let p = tape.parameter(Tensor::from_vec(vec![2, 3], vec![1.0; 6]).unwrap());
        let loss = tape.sum(p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().values(), &[1.0; 6]);
    }

    #[test]
    fn square_gradient() {
        // loss = sum(p .* p), p = [3] -> gradient [6]
        let mut tape = Tape::new();
        let p = tape.parameter(Tensor::from_vec(vec![1], vec![3.0]).unwrap());
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().values(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.parameter(Tensor::zeros(&[2]));
        assert!(tape.backward(p).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap());
        let p = tape.parameter(Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap());
        let prod = tape.mul(c, p).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().values(), &[1.0, 2.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(p + p): gradient 2 per element
        let mut tape = Tape::new();
        let p = tape.parameter(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let two_p = tape.add(p, p).unwrap();
        let loss = tape.sum(two_p);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().values(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn scalar_broadcast_gradient_reduces() {
        // loss = sum(x * s) with scalar parameter s: ds = sum(x)
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = tape.parameter(Tensor::scalar(0.5));
        let prod = tape.mul(x, s).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(s).unwrap().values(), &[6.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut tape = Tape::new();
        let p = tape.parameter(Tensor::from_vec(vec![4], vec![0.1, -0.7, 2.3, 0.9]).unwrap());
        let e = tape.exp(p);
        let s = tape.silu(e);
        let m = tape.mul(s, p).unwrap();
        let _loss = tape.mean(m);
        let replayed = tape.replay().unwrap();
        assert!(tape.values_identical(&replayed));
    }
}
