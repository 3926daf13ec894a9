//! Recorded computation graph with reverse-mode adjoint accumulation.

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Sigmoid,
    /// Negative-side slope, in (0, 1).
    LeakyRelu(f64),
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { input: Var, kernel: Var, geom: ConvGeometry },
    AddBias { input: Var, bias: Var },
    Activation { input: Var, kind: Activation },
    MaxPool2 { input: Var, argmax: Vec<usize> },
    Softmax { input: Var },
    Warp { input: Var, transform: Var },
    ReduceMax { input: Var, offset: usize },
    LogSumExp { input: Var, temperature: T },
    Slice { input: Var, axis: usize, start: usize },
    Reshape { input: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale { input: Var, factor: T },
    Exp { input: Var },
    Abs { input: Var },
    Norm2Last { input: Var },
    Clip { input: Var, lo: T, hi: T },
    Sum { input: Var },
    Select { input: Var, offset: usize },
}

#[derive(Clone, Debug)]
struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Ordered op records. Each op evaluates eagerly and caches its value for
/// the backward pass, which visits nodes in exact reverse order.
#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of leaf nodes produced by [`Graph::backward`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for a leaf, or `None` if it was not on any path to the output.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, zero-filled when the leaf did not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: operand shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Row-major index of the first maximum.
fn argmax_first<T: Scalar>(data: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in data.iter().enumerate().skip(1) {
        if v > data[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Leaf treated as a constant (no adjoint is propagated into it).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { op: Op::Leaf, value, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (value, geom) = kernels::conv2d_forward(self.value(input), self.value(kernel), stride, padding)?;
        Ok(self.push(Op::Conv2d { input, kernel, geom }, value, &[input, kernel]))
    }

    /// Adds a per-channel bias (length = last dimension of `input`).
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias);
        let c = *x.shape().last().unwrap_or(&1);
        if b.len() != c {
            return Err(Error::shape(format!("bias of length {} for {c} channels", b.len())));
        }
        let bd = b.data();
        let data = x.data().chunks(c).flat_map(|px| px.iter().zip(bd).map(|(&v, &bv)| v + bv)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(Op::AddBias { input, bias }, value, &[input, bias]))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Result<Var> {
        let value = match kind {
            Activation::Sigmoid => self.value(input).map(sigmoid),
            Activation::LeakyRelu(alpha) => {
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(Error::invalid(format!("leaky_relu slope {alpha} outside (0,1)")));
                }
                let a = T::lit(alpha);
                self.value(input).map(|x| if x > T::zero() { x } else { a * x })
            }
        };
        Ok(self.push(Op::Activation { input, kind }, value, &[input]))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid).expect("sigmoid is total")
    }

    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let (value, argmax) = kernels::maxpool2_forward(self.value(input))?;
        Ok(self.push(Op::MaxPool2 { input, argmax }, value, &[input]))
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let c = *x.shape().last().unwrap_or(&1);
        let mut data = Vec::with_capacity(x.len());
        for row in x.data().chunks(c) {
            let m = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let start = data.len();
            let mut total = T::zero();
            for &v in row {
                let e = (v - m).exp();
                total += e;
                data.push(e);
            }
            for e in &mut data[start..] {
                *e /= total;
            }
        }
        let value = Tensor::new(x.shape().to_vec(), data).expect("softmax keeps shape");
        self.push(Op::Softmax { input }, value, &[input])
    }

    /// Bilinear warp of an HxWxC image by a forward affine given as a 6-vector
    /// (or 2x3 tensor) `[a, b, tx, c, d, ty]` in pixel coordinates.
    pub fn warp(&mut self, input: Var, transform: Var) -> Result<Var> {
        let value = kernels::warp_forward(self.value(input), self.value(transform).data())?;
        Ok(self.push(Op::Warp { input, transform }, value, &[input, transform]))
    }

    /// Maximum element (first in row-major order on ties) as a scalar node,
    /// together with its multi-index.
    pub fn reduce_max(&mut self, input: Var) -> (Var, Vec<usize>) {
        let x = self.value(input);
        let offset = argmax_first(x.data());
        let index = x.unravel(offset);
        let value = Tensor::scalar(x.data()[offset]);
        (self.push(Op::ReduceMax { input, offset }, value, &[input]), index)
    }

    /// Smooth maximum `temperature * ln(sum(exp(x / temperature)))`.
    pub fn log_sum_exp(&mut self, input: Var, temperature: T) -> Result<Var> {
        if !(temperature > T::zero()) {
            return Err(Error::invalid("log_sum_exp temperature must be positive"));
        }
        let x = self.value(input).data();
        let m = x.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let total = x.iter().fold(T::zero(), |acc, &v| acc + ((v - m) / temperature).exp());
        let value = Tensor::scalar(m + temperature * total.ln());
        Ok(self.push(Op::LogSumExp { input, temperature }, value, &[input]))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(input);
        let shape = x.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::shape(format!(
                "slice axis {axis} [{start}, {}) out of bounds for {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let dim = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let value = Tensor::new(out_shape, data)?;
        Ok(self.push(Op::Slice { input, axis, start }, value, &[input]))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape.to_vec())?;
        Ok(self.push(Op::Reshape { input }, value, &[input]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(Op::Add(a, b), value, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(Op::Sub(a, b), value, &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(Op::Mul(a, b), value, &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|x| x * factor);
        self.push(Op::Scale { input, factor }, value, &[input])
    }

    pub fn neg(&mut self, input: Var) -> Var {
        self.scale(input, -T::one())
    }

    pub fn exp(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| x.exp());
        self.push(Op::Exp { input }, value, &[input])
    }

    /// `|x|`, with subgradient 0 at 0.
    pub fn abs(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| x.abs());
        self.push(Op::Abs { input }, value, &[input])
    }

    /// Euclidean norm over the last axis, keeping it as size 1.
    pub fn norm2_last(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let c = *x.shape().last().unwrap_or(&1);
        let data = x.data().chunks(c).map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt()).collect();
        let mut shape = x.shape().to_vec();
        match shape.last_mut() {
            Some(last) => *last = 1,
            None => shape.push(1),
        }
        let value = Tensor::new(shape, data).expect("norm keeps outer shape");
        self.push(Op::Norm2Last { input }, value, &[input])
    }

    /// Clamp to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clip(&mut self, input: Var, lo: T, hi: T) -> Var {
        let value = self.value(input).map(|x| x.max(lo).min(hi));
        self.push(Op::Clip { input, lo, hi }, value, &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        self.push(Op::Sum { input }, value, &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let n = self.value(input).len();
        let s = self.sum(input);
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Single element at a multi-index, as a scalar node.
    pub fn select(&mut self, input: Var, index: &[usize]) -> Result<Var> {
        let x = self.value(input);
        let offset = x.offset(index)?;
        let value = Tensor::scalar(x.data()[offset]);
        Ok(self.push(Op::Select { input, offset }, value, &[input]))
    }

    /// Reverse-mode sweep from a scalar `output`. Returns adjoints for every
    /// leaf created with [`Graph::param`] that lies on a path to `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out_value = self.value(output);
        if out_value.len() != 1 {
            return Err(Error::NotScalar { shape: out_value.shape().to_vec() });
        }
        let n = output.0 + 1;
        let mut adj: Vec<Option<Vec<T>>> = vec![None; n];
        adj[output.0] = Some(vec![T::one()]);
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];

        for i in (0..n).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[i] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.propagate(node, &g, &mut adj)?;
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<T>, g: &[T], adj: &mut [Option<Vec<T>>]) -> Result<()> {
        let y = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if self.nodes[v.0].needs_grad {
                let len = self.nodes[v.0].value.len();
                let buf = adj[v.0].get_or_insert_with(|| vec![T::zero(); len]);
                f(buf);
            }
        };
        let add_into = |dst: &mut [T], src: &[T]| {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, geom } => {
                let (di, dk) = kernels::conv2d_backward(
                    geom,
                    self.value(*input),
                    self.value(*kernel),
                    g,
                    self.wants(*input),
                    self.wants(*kernel),
                );
                if let Some(di) = di {
                    acc(*input, &mut |buf| add_into(buf, &di));
                }
                if let Some(dk) = dk {
                    acc(*kernel, &mut |buf| add_into(buf, &dk));
                }
            }
            Op::AddBias { input, bias } => {
                acc(*input, &mut |buf| add_into(buf, g));
                let c = self.value(*bias).len();
                acc(*bias, &mut |buf| {
                    for px in g.chunks(c) {
                        add_into(buf, px);
                    }
                });
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input).data();
                match *kind {
                    Activation::Sigmoid => acc(*input, &mut |buf| {
                        for ((d, &gv), &yv) in buf.iter_mut().zip(g).zip(y) {
                            *d += gv * yv * (T::one() - yv);
                        }
                    }),
                    Activation::LeakyRelu(alpha) => {
                        let a = T::lit(alpha);
                        acc(*input, &mut |buf| {
                            for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                                *d += if xv > T::zero() { gv } else { a * gv };
                            }
                        })
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => acc(*input, &mut |buf| {
                for (&src, &gv) in argmax.iter().zip(g) {
                    buf[src] += gv;
                }
            }),
            Op::Softmax { input } => {
                let c = *node.value.shape().last().unwrap_or(&1);
                acc(*input, &mut |buf| {
                    for ((drow, grow), yrow) in buf.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let dot = grow.iter().zip(yrow).fold(T::zero(), |s, (&gv, &yv)| s + gv * yv);
                        for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += yv * (gv - dot);
                        }
                    }
                })
            }
            Op::Warp { input, transform } => {
                let (di, dt) = kernels::warp_backward(
                    self.value(*input),
                    self.value(*transform).data(),
                    g,
                    self.wants(*input),
                    self.wants(*transform),
                )?;
                if let Some(di) = di {
                    acc(*input, &mut |buf| add_into(buf, &di));
                }
                if let Some(dt) = dt {
                    acc(*transform, &mut |buf| add_into(buf, &dt));
                }
            }
            Op::ReduceMax { input, offset } | Op::Select { input, offset } => {
                acc(*input, &mut |buf| buf[*offset] += g[0])
            }
            Op::LogSumExp { input, temperature } => {
                let x = self.value(*input).data();
                let m = y[0];
                acc(*input, &mut |buf| {
                    for (d, &xv) in buf.iter_mut().zip(x) {
                        *d += g[0] * ((xv - m) / *temperature).exp();
                    }
                })
            }
            Op::Slice { input, axis, start } => {
                let in_shape = self.value(*input).shape();
                let outer: usize = in_shape[..*axis].iter().product();
                let inner: usize = in_shape[axis + 1..].iter().product();
                let dim = in_shape[*axis];
                let len = node.value.shape()[*axis];
                acc(*input, &mut |buf| {
                    for o in 0..outer {
                        let base = (o * dim + start) * inner;
                        add_into(&mut buf[base..base + len * inner], &g[o * len * inner..(o + 1) * len * inner]);
                    }
                })
            }
            Op::Reshape { input } => acc(*input, &mut |buf| add_into(buf, g)),
            Op::Add(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| add_into(buf, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |buf| add_into(buf, g));
                acc(*b, &mut |buf| {
                    for (d, &gv) in buf.iter_mut().zip(g) {
                        *d -= gv;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |buf| {
                    for ((d, &gv), &o) in buf.iter_mut().zip(g).zip(bv) {
                        *d += gv * o;
                    }
                });
                acc(*b, &mut |buf| {
                    for ((d, &gv), &o) in buf.iter_mut().zip(g).zip(av) {
                        *d += gv * o;
                    }
                });
            }
            Op::Scale { input, factor } => acc(*input, &mut |buf| {
                for (d, &gv) in buf.iter_mut().zip(g) {
                    *d += gv * *factor;
                }
            }),
            Op::Exp { input } => acc(*input, &mut |buf| {
                for ((d, &gv), &yv) in buf.iter_mut().zip(g).zip(y) {
                    *d += gv * yv;
                }
            }),
            Op::Abs { input } => {
                let x = self.value(*input).data();
                acc(*input, &mut |buf| {
                    for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                        if xv > T::zero() {
                            *d += gv;
                        } else if xv < T::zero() {
                            *d -= gv;
                        }
                    }
                })
            }
            Op::Norm2Last { input } => {
                let x = self.value(*input).data();
                let c = x.len() / y.len();
                acc(*input, &mut |buf| {
                    for (((drow, xrow), &norm), &gv) in buf.chunks_mut(c).zip(x.chunks(c)).zip(y).zip(g) {
                        if norm > T::zero() {
                            for (d, &xv) in drow.iter_mut().zip(xrow) {
                                *d += gv * xv / norm;
                            }
                        }
                    }
                })
            }
            Op::Clip { input, lo, hi } => {
                let x = self.value(*input).data();
                acc(*input, &mut |buf| {
                    for ((d, &gv), &xv) in buf.iter_mut().zip(g).zip(x) {
                        if xv >= *lo && xv <= *hi {
                            *d += gv;
                        }
                    }
                })
            }
            Op::Sum { input } => acc(*input, &mut |buf| {
                for d in buf.iter_mut() {
                    *d += g[0];
                }
            }),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn reused_leaf_accumulates_both_paths() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.5, -2.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[3.0, -4.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NotScalar { .. })));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(t(&[1], &[2.0]));
        let x = g.param(t(&[1], &[3.0]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.wrt(x).data(), &[2.0]);
    }

    #[test]
    fn reduce_max_routes_to_first_maximum() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2, 2], &[0.5, 0.9, 0.9, 0.1]));
        let (m, idx) = g.reduce_max(x);
        assert_eq!(idx, vec![0, 1]);
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[2, 3], &[1.0, 2.0, 3.0, -1.0, 0.0, 1000.0]));
        let y = g.softmax(x);
        for row in g.value(y).data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_and_abs_subgradients() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[4], &[-2.0, 0.0, 0.5, 3.0]));
        let c = g.clip(x, -1.0, 1.0);
        let a = g.abs(c);
        let s = g.sum(a);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).data(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn slice_rejects_out_of_range() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros([2, 3]));
        assert!(g.slice(x, 1, 2, 2).is_err());
        assert!(g.slice(x, 2, 0, 1).is_err());
        let s = g.slice(x, 1, 1, 2).unwrap();
        assert_eq!(g.shape(s), &[2, 2]);
    }
}
