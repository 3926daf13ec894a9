//! Differentiable tensor core: eager ops recorded on a [`Graph`], reverse-mode
//! adjoints, and a finite-difference checker.
//!
//! Everything is generic over [`Scalar`](crate::Scalar); the rest of the crate
//! instantiates it at `f64` through the aliases in the crate root.

mod check;
mod gemm;
mod graph;
mod kernels;
mod tensor;

pub use check::{grad_check, GradCheck};
pub use graph::{Activation, Gradients, Graph, Var};
pub use kernels::Affine2;
pub use tensor::Tensor;

use crate::error::Result;
use crate::scalar::Scalar;

/// Convolution of an HxWxCin image with a kxkxCinxCout kernel.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Tensor<T>> {
    kernels::conv2d_forward(input, kernel, stride, padding).map(|(t, _)| t)
}

pub fn activation<T: Scalar>(input: &Tensor<T>, kind: Activation) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.activation(x, kind)?;
    Ok(g.value(y).clone())
}

/// Softmax over the last axis.
pub fn softmax_channels<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let y = g.softmax(x);
    g.value(y).clone()
}

pub fn bilinear_warp<T: Scalar>(input: &Tensor<T>, transform: &Affine2) -> Result<Tensor<T>> {
    let m: Vec<T> = transform.m.iter().map(|&v| T::lit(v)).collect();
    kernels::warp_forward(input, &m)
}

/// Maximum value and the row-major-first multi-index attaining it.
pub fn reduce_max_indexed<T: Scalar>(input: &Tensor<T>) -> (T, Vec<usize>) {
    let data = input.data();
    let mut best = 0;
    for (i, &v) in data.iter().enumerate().skip(1) {
        if v > data[best] {
            best = i;
        }
    }
    (data[best], input.unravel(best))
}

pub fn affine_tensor<T: Scalar>(transform: &Affine2) -> Tensor<T> {
    Tensor::new([2, 3], transform.m.iter().map(|&v| T::lit(v)).collect()).expect("2x3")
}
