//! Reverse-mode differentiation over a recorded, topologically ordered tape.
//!
//! Every op evaluates eagerly when recorded and keeps its output value on the
//! tape; [`Tape::backward`] then walks the nodes once in reverse order.

use std::collections::BTreeMap;

use super::kernels::{conv2d, conv2d_backward, upsample2x, upsample2x_backward};
use super::{ParamId, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par::ExecMode;

/// A linear map usable as a tape op; the backward pass applies the adjoint.
pub trait LinearOperator<T: Scalar>: Sync {
    fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
    fn apply_adjoint(&self, y: &Tensor<T>) -> Result<Tensor<T>>;
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a, T: Scalar> {
    Constant,
    Param(ParamId),
    Conv { input: usize, weight: ParamId, bias: ParamId, stride: usize },
    Upsample(usize),
    Sigmoid(usize),
    LeakyRelu(usize, T),
    Hadamard(usize, usize),
    Add(usize, usize),
    Concat(usize, usize),
    Sum(usize),
    Linear(usize, &'a dyn LinearOperator<T>),
    L1Distance(usize, &'a Tensor<T>),
}

struct Node<'a, T: Scalar> {
    op: Op<'a, T>,
    value: Tensor<T>,
    needs_grad: bool,
}

pub struct Tape<'a, T: Scalar> {
    params: &'a ParamStore<T>,
    nodes: Vec<Node<'a, T>>,
    mode: ExecMode,
}

/// Gradients of a scalar with respect to the parameters it depends on.
#[derive(Clone, Debug, Default)]
pub struct GradientSet<T> {
    grads: BTreeMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> GradientSet<T> {
    pub fn get(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.grads.get(&id)
    }

    /// The gradient, or zeros shaped like the parameter when it is disconnected.
    pub fn get_or_zero(&self, id: ParamId, params: &ParamStore<T>) -> Tensor<T> {
        self.grads
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params.get(id).dims().to_vec()))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.grads.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().map(|(k, v)| (*k, v))
    }

    #[cfg(test)]
    pub(crate) fn accumulate_for_test(&mut self, id: ParamId, g: Tensor<T>) {
        self.accumulate(id, g)
    }

    fn accumulate(&mut self, id: ParamId, g: Tensor<T>) {
        match self.grads.get_mut(&id) {
            Some(acc) => add_assign(acc, &g),
            None => {
                self.grads.insert(id, g);
            }
        }
    }
}

fn add_assign<T: Scalar>(acc: &mut Tensor<T>, g: &Tensor<T>) {
    acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b);
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.dims().to_vec(), data).expect("zip_map on equal shapes")
}

fn sigmoid<T: Scalar>(x: T) -> T {
    // split on sign so exp never overflows
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'a, T: Scalar> Tape<'a, T> {
    pub fn new(params: &'a ParamStore<T>) -> Self {
        Self::with_mode(params, ExecMode::default())
    }

    pub fn with_mode(params: &'a ParamStore<T>, mode: ExecMode) -> Self {
        Tape { params, nodes: Vec::new(), mode }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<'a, T>, value: Tensor<T>, what: &str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(what.to_string()));
        }
        let needs_grad = match &op {
            Op::Constant => false,
            Op::Param(_) | Op::Conv { .. } => true,
            Op::Upsample(a) | Op::Sigmoid(a) | Op::LeakyRelu(a, _) | Op::Sum(a) => {
                self.nodes[*a].needs_grad
            }
            Op::Linear(a, _) | Op::L1Distance(a, _) => self.nodes[*a].needs_grad,
            Op::Hadamard(a, b) | Op::Add(a, b) | Op::Concat(a, b) => {
                self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
            }
        };
        self.nodes.push(Node { op, value, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Result<Var> {
        value.chw()?;
        self.push(Op::Constant, value, "constant input")
    }

    /// A rank-3 parameter used directly as a node.
    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        let value = self.params.get(id).clone();
        value.chw()?;
        self.push(Op::Param(id), value, "parameter")
    }

    pub fn conv2d(&mut self, x: Var, weight: ParamId, bias: ParamId, stride: usize) -> Result<Var> {
        let value = conv2d(
            &self.nodes[x.0].value,
            self.params.get(weight),
            self.params.get(bias),
            stride,
            self.mode,
        )?;
        let what = format!("conv2d `{}`", self.params.name(weight));
        self.push(Op::Conv { input: x.0, weight, bias, stride }, value, &what)
    }

    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let value = upsample2x(&self.nodes[x.0].value)?;
        self.push(Op::Upsample(x.0), value, "upsample2x")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.nodes[x.0].value.map(sigmoid);
        self.push(Op::Sigmoid(x.0), value, "sigmoid")
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Result<Var> {
        let value = self.nodes[x.0].value.map(|v| if v > T::zero() { v } else { v * slope });
        self.push(Op::LeakyRelu(x.0, slope), value, "leaky_relu")
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        va.same_dims(vb, "hadamard")?;
        let value = zip_map(va, vb, |x, y| x * y);
        self.push(Op::Hadamard(a.0, b.0), value, "hadamard")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        va.same_dims(vb, "add")?;
        let value = zip_map(va, vb, |x, y| x + y);
        self.push(Op::Add(a.0, b.0), value, "add")
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ca, ha, wa) = self.nodes[a.0].value.chw()?;
        let (cb, hb, wb) = self.nodes[b.0].value.chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(format!("concat of {ha}x{wa} and {hb}x{wb} maps")));
        }
        let mut data = self.nodes[a.0].value.data().to_vec();
        data.extend_from_slice(self.nodes[b.0].value.data());
        let value = Tensor::from_chw(ca + cb, ha, wa, data)?;
        self.push(Op::Concat(a.0, b.0), value, "concat")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.nodes[x.0].value.sum());
        self.push(Op::Sum(x.0), value, "sum")
    }

    pub fn linear(&mut self, x: Var, op: &'a dyn LinearOperator<T>) -> Result<Var> {
        let value = op.apply(&self.nodes[x.0].value)?;
        self.push(Op::Linear(x.0, op), value, "linear operator")
    }

    /// `sum |target - x|`, with subgradient 0 where the residual is exactly 0.
    pub fn l1_distance(&mut self, x: Var, target: &'a Tensor<T>) -> Result<Var> {
        let vx = &self.nodes[x.0].value;
        vx.same_dims(target, "l1 distance")?;
        let total = vx
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &t)| (t - a).abs())
            .sum();
        self.push(Op::L1Distance(x.0, target), Tensor::scalar(total), "l1 distance")
    }

    /// Signs at every non-smooth point on the tape (leaky-relu inputs and
    /// l1 residuals). Two evaluations with equal patterns lie on the same
    /// smooth piece.
    pub fn branch_pattern(&self) -> Vec<i8> {
        let sign = |v: T| {
            if v > T::zero() {
                1
            } else if v < T::zero() {
                -1
            } else {
                0
            }
        };
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.op {
                Op::LeakyRelu(a, _) => out.extend(self.nodes[*a].value.data().iter().map(|&v| sign(v))),
                Op::L1Distance(a, t) => out.extend(
                    self.nodes[*a].value.data().iter().zip(t.data()).map(|(&v, &t)| sign(t - v)),
                ),
                _ => {}
            }
        }
        out
    }

    pub fn backward(&self, loss: Var) -> Result<GradientSet<T>> {
        let root = &self.nodes[loss.0].value;
        if root.len() != 1 {
            return Err(Error::NonScalarLoss(root.dims().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(root.dims().to_vec(), T::one()));
        let mut out = GradientSet::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::Conv { input, weight, bias, stride } => {
                    let want_input = self.nodes[*input].needs_grad;
                    let cg = conv2d_backward(
                        &self.nodes[*input].value,
                        self.params.get(*weight),
                        *stride,
                        &g,
                        want_input,
                        self.mode,
                    )?;
                    out.accumulate(*weight, cg.kernel);
                    out.accumulate(*bias, cg.bias);
                    if let Some(gi) = cg.input {
                        self.send(&mut grads, *input, gi);
                    }
                }
                Op::Upsample(a) => {
                    let (_, h, w) = self.nodes[*a].value.chw()?;
                    self.send(&mut grads, *a, upsample2x_backward(&g, h, w)?);
                }
                Op::Sigmoid(a) => {
                    let gi = zip_map(&g, &node.value, |gy, y| gy * y * (T::one() - y));
                    self.send(&mut grads, *a, gi);
                }
                Op::LeakyRelu(a, slope) => {
                    let slope = *slope;
                    let gi = zip_map(&g, &self.nodes[*a].value, |gy, x| {
                        if x > T::zero() {
                            gy
                        } else {
                            gy * slope
                        }
                    });
                    self.send(&mut grads, *a, gi);
                }
                Op::Hadamard(a, b) => {
                    let ga = zip_map(&g, &self.nodes[*b].value, |gy, y| gy * y);
                    let gb = zip_map(&g, &self.nodes[*a].value, |gy, x| gy * x);
                    self.send(&mut grads, *a, ga);
                    self.send(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    self.send(&mut grads, *a, g.clone());
                    self.send(&mut grads, *b, g);
                }
                Op::Concat(a, b) => {
                    let ca = self.nodes[*a].value.channels();
                    let total = g.channels();
                    self.send(&mut grads, *a, g.slice_channels(0, ca)?);
                    self.send(&mut grads, *b, g.slice_channels(ca, total)?);
                }
                Op::Sum(a) => {
                    let dims = self.nodes[*a].value.dims().to_vec();
                    self.send(&mut grads, *a, Tensor::full(dims, g.data()[0]));
                }
                Op::Linear(a, op) => self.send(&mut grads, *a, op.apply_adjoint(&g)?),
                Op::L1Distance(a, t) => {
                    let up = g.data()[0];
                    let gi = zip_map(&self.nodes[*a].value, t, |x, t| {
                        let r = t - x;
                        if r > T::zero() {
                            -up
                        } else if r < T::zero() {
                            up
                        } else {
                            T::zero()
                        }
                    });
                    self.send(&mut grads, *a, gi);
                }
            }
        }
        Ok(out)
    }

    fn send(&self, grads: &mut [Option<Tensor<T>>], to: usize, g: Tensor<T>) {
        if !self.nodes[to].needs_grad {
            return;
        }
        match &mut grads[to] {
            Some(acc) => add_assign(acc, &g),
            slot @ None => *slot = Some(g),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(x: Tensor<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.register("x", x).unwrap();
        (s, id)
    }

    #[test]
    fn gradient_of_sum_is_ones() {
        let (s, id) = store_with(Tensor::from_chw(2, 2, 2, (0..8).map(|v| v as f64).collect()).unwrap());
        let mut tape = Tape::new(&s);
        let x = tape.param(id).unwrap();
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.get(id).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn gradient_of_sum_of_squares_is_two_x() {
        let data: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect();
        let (s, id) = store_with(Tensor::from_chw(1, 2, 3, data.clone()).unwrap());
        let mut tape = Tape::new(&s);
        let x = tape.param(id).unwrap();
        let sq = tape.hadamard(x, x).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        for (gv, xv) in g.get(id).unwrap().data().iter().zip(&data) {
            assert_eq!(*gv, 2.0 * xv);
        }
    }

    #[test]
    fn pointwise_examples() {
        let (s, id) = store_with(Tensor::from_chw(1, 1, 2, vec![-1.0, 2.0]).unwrap());
        let mut tape = Tape::new(&s);
        let x = tape.param(id).unwrap();
        let lr = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(lr).data(), &[-0.2, 2.0]);
        let zero = tape.constant(Tensor::zeros(vec![1, 1, 2])).unwrap();
        let sg = tape.sigmoid(zero).unwrap();
        assert_eq!(tape.value(sg).data(), &[0.5, 0.5]);
        let ones = tape.constant(Tensor::full(vec![1, 1, 2], 1.0)).unwrap();
        let h = tape.hadamard(x, ones).unwrap();
        assert_eq!(tape.value(h), tape.value(x));
    }

    #[test]
    fn concat_then_slice_recovers_inputs() {
        let s = ParamStore::<f32>::new();
        let mut tape = Tape::new(&s);
        let a = Tensor::from_chw(2, 2, 2, (0..8).map(|v| v as f32).collect()).unwrap();
        let b = Tensor::from_chw(1, 2, 2, vec![9.0, 8.0, 7.0, 6.0]).unwrap();
        let va = tape.constant(a.clone()).unwrap();
        let vb = tape.constant(b.clone()).unwrap();
        let c = tape.concat_channels(va, vb).unwrap();
        assert_eq!(tape.value(c).chw().unwrap(), (3, 2, 2));
        assert_eq!(tape.value(c).slice_channels(0, 2).unwrap(), a);
        assert_eq!(tape.value(c).slice_channels(2, 3).unwrap(), b);
    }

    #[test]
    fn shape_errors() {
        let s = ParamStore::<f32>::new();
        let mut tape = Tape::new(&s);
        let a = tape.constant(Tensor::zeros(vec![1, 2, 2])).unwrap();
        let b = tape.constant(Tensor::zeros(vec![1, 2, 3])).unwrap();
        assert!(tape.add(a, b).is_err());
        assert!(tape.hadamard(a, b).is_err());
        assert!(tape.concat_channels(a, b).is_err());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let s = ParamStore::<f32>::new();
        let mut tape = Tape::new(&s);
        let a = tape.constant(Tensor::zeros(vec![1, 2, 2])).unwrap();
        assert!(matches!(tape.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let s = ParamStore::<f32>::new();
        let mut tape = Tape::new(&s);
        assert!(matches!(
            tape.constant(Tensor::full(vec![1, 1, 1], f32::NAN)),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn unreachable_params_get_no_entry() {
        let mut s = ParamStore::<f64>::new();
        let used = s.register("used", Tensor::full(vec![1, 1, 2], 1.0)).unwrap();
        let unused = s.register("unused", Tensor::full(vec![1, 1, 2], 1.0)).unwrap();
        let mut tape = Tape::new(&s);
        let u = tape.param(used).unwrap();
        let _ = tape.param(unused).unwrap();
        let l = tape.sum(u).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.ids().collect::<Vec<_>>(), vec![used]);
        assert_eq!(g.get_or_zero(unused, &s).data(), &[0.0, 0.0]);
    }

    #[test]
    fn l1_subgradient_is_zero_at_exact_match() {
        let (s, id) = store_with(Tensor::from_chw(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap());
        let target = Tensor::from_chw(1, 1, 3, vec![1.0, 0.0, 5.0]).unwrap();
        let mut tape = Tape::new(&s);
        let x = tape.param(id).unwrap();
        let l = tape.l1_distance(x, &target).unwrap();
        assert_eq!(tape.value(l).data()[0], 4.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(id).unwrap().data(), &[0.0, 1.0, -1.0]);
    }
}
