//! Generator and discriminator networks of the learned translator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sixchan_nn::layers::{
    instance_norm, instance_norm_backward, leaky_relu, leaky_relu_backward, relu, relu_backward, tanh, tanh_backward,
    upsample2, upsample2_backward, InstanceNormCache,
};
use sixchan_nn::param::{scoped, scoped_mut};
use sixchan_nn::{Conv2d, ConvCache, ConvSpec, Module, Param, Scalar, Tensor};

use crate::Result;

const INIT_STD: f64 = 0.02;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Activation {
    Relu,
    Leaky,
    Tanh,
    Identity,
}

/// Optional 2x upsample, convolution, optional instance norm, activation.
#[derive(Debug, Clone, PartialEq)]
struct Block<T> {
    conv: Conv2d<T>,
    upsample: bool,
    norm: bool,
    act: Activation,
}

struct BlockCache<T> {
    conv: ConvCache<T>,
    norm: Option<InstanceNormCache<T>>,
    /// Activation input, needed by leaky ReLU.
    pre: Tensor<T>,
    /// Activation output, needed by ReLU and tanh.
    out: Tensor<T>,
}

impl<T: Scalar> Block<T> {
    fn new<R: Rng + ?Sized>(spec: ConvSpec, upsample: bool, norm: bool, act: Activation, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::normal(spec, INIT_STD, rng),
            upsample,
            norm,
            act,
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let up;
        let input = if self.upsample {
            up = upsample2(x);
            &up
        } else {
            x
        };
        let (mut y, conv) = self.conv.forward_train(input)?;
        let norm = if self.norm {
            let (n, cache) = instance_norm(&y);
            y = n;
            Some(cache)
        } else {
            None
        };
        let out = match self.act {
            Activation::Relu => relu(&y),
            Activation::Leaky => leaky_relu(&y, LEAKY_SLOPE),
            Activation::Tanh => tanh(&y),
            Activation::Identity => y.clone(),
        };
        Ok((
            out.clone(),
            BlockCache {
                conv,
                norm,
                pre: y,
                out,
            },
        ))
    }

    fn backward(&mut self, cache: &BlockCache<T>, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let mut g = match self.act {
            Activation::Relu => relu_backward(&cache.out, dy),
            Activation::Leaky => leaky_relu_backward(&cache.pre, dy, LEAKY_SLOPE),
            Activation::Tanh => tanh_backward(&cache.out, dy),
            Activation::Identity => dy.clone(),
        };
        if let Some(n) = &cache.norm {
            g = instance_norm_backward(n, &g);
        }
        let dx = self.conv.backward(&cache.conv, &g, need_input_grad)?;
        if self.norm {
            self.conv.bias.grad.fill(T::zero());
        }
        Ok(match dx {
            Some(d) if self.upsample => Some(upsample2_backward(&d)),
            other => other,
        })
    }
}

/// Image-to-image generator: two stride-2 downsampling blocks, residual
/// blocks, two upsampling blocks and a tanh output in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    down: Vec<Block<T>>,
    res: Vec<(Block<T>, Block<T>)>,
    up: Vec<Block<T>>,
}

pub struct GeneratorCache<T> {
    down: Vec<BlockCache<T>>,
    res: Vec<(BlockCache<T>, BlockCache<T>)>,
    up: Vec<BlockCache<T>>,
}

impl<T: Scalar> Generator<T> {
    pub fn new<R: Rng + ?Sized>(base_filters: usize, residual_blocks: usize, rng: &mut R) -> Self {
        let f = base_filters;
        let down = vec![
            Block::new(ConvSpec::new(3, f, 3, 2, 1), false, true, Activation::Relu, rng),
            Block::new(ConvSpec::new(f, 2 * f, 3, 2, 1), false, true, Activation::Relu, rng),
        ];
        let res = (0..residual_blocks)
            .map(|_| {
                (
                    Block::new(ConvSpec::new(2 * f, 2 * f, 3, 1, 1), false, true, Activation::Relu, rng),
                    Block::new(ConvSpec::new(2 * f, 2 * f, 3, 1, 1), false, true, Activation::Identity, rng),
                )
            })
            .collect();
        let up = vec![
            Block::new(ConvSpec::new(2 * f, f, 3, 1, 1), true, true, Activation::Relu, rng),
            Block::new(ConvSpec::new(f, 3, 3, 1, 1), true, false, Activation::Tanh, rng),
        ];
        Self { down, res, up }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.0)
    }

    /// Input height and width must be multiples of 4.
    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, GeneratorCache<T>)> {
        if !x.height.is_multiple_of(4) || !x.width.is_multiple_of(4) {
            return Err(crate::Error::Dimension(format!(
                "generator input {}x{} is not a multiple of 4",
                x.height, x.width
            )));
        }
        let mut h = x.clone();
        let mut cache = GeneratorCache {
            down: Vec::new(),
            res: Vec::new(),
            up: Vec::new(),
        };
        for b in &self.down {
            let (y, c) = b.forward(&h)?;
            cache.down.push(c);
            h = y;
        }
        for (a, b) in &self.res {
            let (y1, c1) = a.forward(&h)?;
            let (y2, c2) = b.forward(&y1)?;
            h = h.add(&y2)?;
            cache.res.push((c1, c2));
        }
        for b in &self.up {
            let (y, c) = b.forward(&h)?;
            cache.up.push(c);
            h = y;
        }
        Ok((h, cache))
    }

    pub fn backward(&mut self, cache: &GeneratorCache<T>, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let mut g = dy.clone();
        for (b, c) in self.up.iter_mut().zip(&cache.up).rev() {
            g = b.backward(c, &g, true)?.expect("input gradient requested");
        }
        for ((a, b), (c1, c2)) in self.res.iter_mut().zip(&cache.res).rev() {
            let inner = b.backward(c2, &g, true)?.expect("input gradient requested");
            let inner = a.backward(c1, &inner, true)?.expect("input gradient requested");
            g = g.add(&inner)?;
        }
        for (i, (b, c)) in self.down.iter_mut().zip(&cache.down).enumerate().rev() {
            match b.backward(c, &g, i > 0 || need_input_grad)? {
                Some(d) => g = d,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn cast<U: Scalar>(&self) -> Generator<U> {
        Generator {
            down: self.down.iter().map(cast_block).collect(),
            res: self.res.iter().map(|(a, b)| (cast_block(a), cast_block(b))).collect(),
            up: self.up.iter().map(cast_block).collect(),
        }
    }
}

fn cast_block<T: Scalar, U: Scalar>(b: &Block<T>) -> Block<U> {
    Block {
        conv: Conv2d {
            spec: b.conv.spec,
            weight: b.conv.weight.cast(),
            bias: b.conv.bias.cast(),
        },
        upsample: b.upsample,
        norm: b.norm,
        act: b.act,
    }
}

/// Biases of normalized blocks are left out: instance norm cancels them.
fn block_params<'a, T: Scalar>(name: &str, b: &'a Block<T>, out: &mut Vec<(String, &'a Param<T>)>) {
    let mut params = vec![("weight".into(), &b.conv.weight)];
    if !b.norm {
        params.push(("bias".into(), &b.conv.bias));
    }
    out.extend(scoped(name, params));
}

fn block_params_mut<'a, T: Scalar>(name: &str, b: &'a mut Block<T>, out: &mut Vec<(String, &'a mut Param<T>)>) {
    let mut params = vec![("weight".into(), &mut b.conv.weight)];
    if !b.norm {
        params.push(("bias".into(), &mut b.conv.bias));
    }
    out.extend(scoped_mut(name, params));
}

impl<T: Scalar> Module<T> for Generator<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.down.iter().enumerate() {
            block_params(&format!("down{i}"), b, &mut out);
        }
        for (i, (a, b)) in self.res.iter().enumerate() {
            block_params(&format!("res{i}.a"), a, &mut out);
            block_params(&format!("res{i}.b"), b, &mut out);
        }
        for (i, b) in self.up.iter().enumerate() {
            block_params(&format!("up{i}"), b, &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.down.iter_mut().enumerate() {
            block_params_mut(&format!("down{i}"), b, &mut out);
        }
        for (i, (a, b)) in self.res.iter_mut().enumerate() {
            block_params_mut(&format!("res{i}.a"), a, &mut out);
            block_params_mut(&format!("res{i}.b"), b, &mut out);
        }
        for (i, b) in self.up.iter_mut().enumerate() {
            block_params_mut(&format!("up{i}"), b, &mut out);
        }
        out
    }
}

/// Patch discriminator producing one real/fake score per receptive field.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator<T> {
    layers: Vec<Block<T>>,
}

pub struct DiscriminatorCache<T> {
    layers: Vec<BlockCache<T>>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(base_filters: usize, rng: &mut R) -> Self {
        let f = base_filters;
        Self {
            layers: vec![
                Block::new(ConvSpec::new(3, f, 4, 2, 1), false, false, Activation::Leaky, rng),
                Block::new(ConvSpec::new(f, 2 * f, 4, 2, 1), false, true, Activation::Leaky, rng),
                Block::new(ConvSpec::new(2 * f, 1, 4, 1, 1), false, false, Activation::Identity, rng),
            ],
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, DiscriminatorCache<T>)> {
        let mut h = x.clone();
        let mut layers = Vec::with_capacity(self.layers.len());
        for b in &self.layers {
            let (y, c) = b.forward(&h)?;
            layers.push(c);
            h = y;
        }
        Ok((h, DiscriminatorCache { layers }))
    }

    pub fn backward(&mut self, cache: &DiscriminatorCache<T>, dy: &Tensor<T>, need_input_grad: bool) -> Result<Option<Tensor<T>>> {
        let mut g = dy.clone();
        for (i, (b, c)) in self.layers.iter_mut().zip(&cache.layers).enumerate().rev() {
            match b.backward(c, &g, i > 0 || need_input_grad)? {
                Some(d) => g = d,
                None => return Ok(None),
            }
        }
        Ok(Some(g))
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            layers: self.layers.iter().map(cast_block).collect(),
        }
    }
}

impl<T: Scalar> Module<T> for Discriminator<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.layers.iter().enumerate() {
            block_params(&format!("layer{i}"), b, &mut out);
        }
        out
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut out = Vec::new();
        for (i, b) in self.layers.iter_mut().enumerate() {
            block_params_mut(&format!("layer{i}"), b, &mut out);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sixchan_nn::gradcheck::check_module;

    fn input(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn generator_preserves_shape_and_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Generator::<f32>::new(4, 2, &mut rng);
        let x = input(3, 16, 12, &mut rng).cast::<f32>();
        let y = g.forward(&x).unwrap();
        assert_eq!(y.shape(), (3, 16, 12));
        assert!(y.data.iter().all(|v| v.abs() <= 1.0));
        assert!(g.forward(&input(3, 10, 12, &mut rng).cast::<f32>()).is_err());
    }

    #[test]
    fn discriminator_patch_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = Discriminator::<f32>::new(4, &mut rng);
        let y = d.forward(&input(3, 64, 64, &mut rng).cast()).unwrap();
        assert_eq!(y.shape(), (1, 15, 15));
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Generator::<f64>::new(2, 1, &mut rng);
        let x = input(3, 8, 8, &mut rng);
        let target = input(3, 8, 8, &mut rng);
        let loss = |g: &Generator<f64>| {
            let y = g.forward(&x).unwrap();
            y.data.iter().zip(&target.data).map(|(a, b)| a * b).sum::<f64>()
        };
        let report = check_module(
            &mut g,
            |g| {
                g.zero_grad();
                let (y, cache) = g.forward_train(&x).unwrap();
                let dx = g.backward(&cache, &target, true).unwrap().unwrap();
                assert_eq!(dx.shape(), x.shape());
                y.data.iter().zip(&target.data).map(|(a, b)| a * b).sum::<f64>()
            },
            loss,
            150,
            1e-5,
            &mut rng,
        );
        assert!(report.max_rel_error() < 1e-3, "{:?}", report.failures(1e-3));
    }

    #[test]
    fn discriminator_input_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Discriminator::<f64>::new(2, &mut rng);
        let x = input(3, 16, 16, &mut rng);
        let (y, cache) = d.forward_train(&x).unwrap();
        let w = input(y.channels, y.height, y.width, &mut rng);
        let dx = d.backward(&cache, &w, true).unwrap().unwrap();
        let f = |x: &Tensor<f64>| {
            let y = d.forward(x).unwrap();
            y.data.iter().zip(&w.data).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in [0, 17, 300, 767] {
            let mut up = x.clone();
            up.data[i] += 1e-6;
            let mut down = x.clone();
            down.data[i] -= 1e-6;
            let numeric = (f(&up) - f(&down)) / 2e-6;
            assert!((numeric - dx.data[i]).abs() < 1e-6 * (1.0 + numeric.abs()), "{i}: {numeric} vs {}", dx.data[i]);
        }
    }
}
