use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::Scalar;

/// A trainable buffer and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    /// Whether weight decay applies (false for biases).
    pub decay: bool,
}

impl<T: Scalar> Param<T> {
    pub fn zeros(shape: &[usize], decay: bool) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            value: vec![T::zero(); n],
            grad: vec![T::zero(); n],
            decay,
        }
    }

    /// Gaussian initialisation with the given standard deviation.
    pub fn normal<R: Rng + ?Sized>(shape: &[usize], std: f64, decay: bool, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape, decay);
        if std > 0.0 {
            let dist = Normal::new(0.0, std).expect("finite std");
            for v in &mut p.value {
                *v = T::of(dist.sample(rng));
            }
        }
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn cast<U: Scalar>(&self) -> Param<U> {
        let conv = |v: &T| U::of(v.to_f64().unwrap_or(0.0));
        Param {
            shape: self.shape.clone(),
            value: self.value.iter().map(conv).collect(),
            grad: self.grad.iter().map(conv).collect(),
            decay: self.decay,
        }
    }
}

/// Anything that owns parameters, visited in a fixed order.
///
/// The order is part of the checkpoint format and of optimizer state, so
/// implementations must never reorder it.
pub trait Module<T: Scalar> {
    fn params(&self) -> Vec<(String, &Param<T>)>;
    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)>;

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }
}

/// Prefixes every parameter name of a sub-module.
pub fn scoped<'a, T: Scalar>(
    prefix: &str,
    items: Vec<(String, &'a Param<T>)>,
) -> impl Iterator<Item = (String, &'a Param<T>)> + use<'a, T> {
    let prefix = prefix.to_string();
    items
        .into_iter()
        .map(move |(n, p)| (format!("{prefix}.{n}"), p))
}

pub fn scoped_mut<'a, T: Scalar>(
    prefix: &str,
    items: Vec<(String, &'a mut Param<T>)>,
) -> impl Iterator<Item = (String, &'a mut Param<T>)> + use<'a, T> {
    let prefix = prefix.to_string();
    items
        .into_iter()
        .map(move |(n, p)| (format!("{prefix}.{n}"), p))
}
