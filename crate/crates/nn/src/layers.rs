//! Stateless activations and normalisation, each with an explicit backward.

use rand::Rng;

use crate::param::{Module, Param};
use crate::{NnError, Result, Scalar, Tensor};

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of `relu` given its output.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    dy.with_data(data)
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>, slope: f64) -> Tensor<T> {
    let a = T::of(slope);
    x.map(|v| if v > T::zero() { v } else { a * v })
}

/// Gradient of `leaky_relu` given its input.
pub fn leaky_relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, slope: f64) -> Tensor<T> {
    let a = T::of(slope);
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| if v > T::zero() { g } else { a * g })
        .collect();
    dy.with_data(data)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

/// Gradient of `tanh` given its output.
pub fn tanh_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let data = y
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&o, &g)| g * (T::one() - o * o))
        .collect();
    dy.with_data(data)
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel statistics saved by [`instance_norm`].
#[derive(Debug, Clone)]
pub struct InstanceNormCache<T> {
    y: Tensor<T>,
    inv_std: Vec<T>,
}

/// Instance normalisation without affine parameters.
pub fn instance_norm<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, InstanceNormCache<T>) {
    let n = x.plane();
    let nf = T::of(n as f64);
    let mut y = x.clone();
    let mut inv_std = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let ch = &mut y.data[c * n..(c + 1) * n];
        let mean = ch.iter().copied().sum::<T>() / nf;
        let var = ch.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let is = T::one() / (var + T::of(INSTANCE_NORM_EPS)).sqrt();
        ch.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv_std.push(is);
    }
    let cache = InstanceNormCache { y: y.clone(), inv_std };
    (y, cache)
}

pub fn instance_norm_backward<T: Scalar>(cache: &InstanceNormCache<T>, dy: &Tensor<T>) -> Tensor<T> {
    let y = &cache.y;
    let n = y.plane();
    let nf = T::of(n as f64);
    let mut dx = dy.clone();
    for c in 0..y.channels {
        let ys = &y.data[c * n..(c + 1) * n];
        let gs = &dy.data[c * n..(c + 1) * n];
        let sum_g = gs.iter().copied().sum::<T>();
        let sum_gy = gs.iter().zip(ys).map(|(&g, &v)| g * v).sum::<T>();
        let is = cache.inv_std[c];
        for ((d, &g), &v) in dx.data[c * n..(c + 1) * n].iter_mut().zip(gs).zip(ys) {
            *d = is / nf * (nf * g - sum_g - v * sum_gy);
        }
    }
    dx
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.height, x.width);
    let mut y = Tensor::zeros(x.channels, 2 * h, 2 * w);
    for c in 0..x.channels {
        for yy in 0..2 * h {
            let src = &x.data[(c * h + yy / 2) * w..(c * h + yy / 2 + 1) * w];
            let dst = &mut y.data[(c * 2 * h + yy) * 2 * w..(c * 2 * h + yy + 1) * 2 * w];
            for (xx, d) in dst.iter_mut().enumerate() {
                *d = src[xx / 2];
            }
        }
    }
    y
}

pub fn upsample2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.height / 2, dy.width / 2);
    let mut dx = Tensor::zeros(dy.channels, h, w);
    for c in 0..dy.channels {
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dx.data[(c * h + yy / 2) * w + xx / 2] += dy.data[(c * 2 * h + yy) * 2 * w + xx];
            }
        }
    }
    dx
}

/// Fully connected layer over row-major batches (`rows x in`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out, in]`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn normal<R: Rng + ?Sized>(inputs: usize, outputs: usize, std: f64, rng: &mut R) -> Self {
        Self {
            inputs,
            outputs,
            weight: Param::normal(&[outputs, inputs], std, true, rng),
            bias: Param::zeros(&[outputs], false),
        }
    }

    pub fn he<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self::normal(inputs, outputs, (2.0 / inputs as f64).sqrt(), rng)
    }

    pub fn forward(&self, rows: usize, x: &[T]) -> Result<Vec<T>> {
        if x.len() != rows * self.inputs {
            return Err(NnError::Shape(format!(
                "linear layer expects {rows}x{} inputs, got {} values",
                self.inputs,
                x.len()
            )));
        }
        let mut y = Vec::with_capacity(rows * self.outputs);
        for _ in 0..rows {
            y.extend_from_slice(&self.bias.value);
        }
        T::gemm(
            rows,
            self.inputs,
            self.outputs,
            T::one(),
            x,
            (self.inputs as isize, 1),
            &self.weight.value,
            (1, self.inputs as isize),
            T::one(),
            &mut y,
            (self.outputs as isize, 1),
        );
        Ok(y)
    }

    /// `x` is the forward input; returns `dx` when requested.
    pub fn backward(&mut self, rows: usize, x: &[T], dy: &[T], need_input_grad: bool) -> Option<Vec<T>> {
        let (i, o) = (self.inputs, self.outputs);
        // dW[o, i] += dy^T x
        T::gemm(
            o,
            rows,
            i,
            T::one(),
            dy,
            (1, o as isize),
            x,
            (i as isize, 1),
            T::one(),
            &mut self.weight.grad,
            (i as isize, 1),
        );
        for r in 0..rows {
            for (g, &d) in self.bias.grad.iter_mut().zip(&dy[r * o..(r + 1) * o]) {
                *g += d;
            }
        }
        if !need_input_grad {
            return None;
        }
        let mut dx = vec![T::zero(); rows * i];
        T::gemm(
            rows,
            o,
            i,
            T::one(),
            dy,
            (o as isize, 1),
            &self.weight.value,
            (i as isize, 1),
            T::zero(),
            &mut dx,
            (i as isize, 1),
        );
        Some(dx)
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}
