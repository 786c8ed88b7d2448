use rand::Rng;

use crate::param::{Module, Param};
use crate::{NnError, Result, Scalar, Tensor};

/// Geometry of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            dilation: 1,
        }
    }

    pub fn dilated(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn output_size(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let ph = height + 2 * self.padding;
        let pw = width + 2 * self.padding;
        if ph < span || pw < span {
            return Err(NnError::Shape(format!(
                "input {height}x{width} smaller than kernel span {span}"
            )));
        }
        Ok(((ph - span) / self.stride + 1, (pw - span) / self.stride + 1))
    }

    /// Rows of the unfolded input matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Convolution weights laid out `[out, in, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

/// Saved activations for one `forward_train` call.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_hw: (usize, usize),
    out_hw: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    pub fn zeros(spec: ConvSpec) -> Self {
        let k = spec.kernel;
        Self {
            spec,
            weight: Param::zeros(&[spec.out_channels, spec.in_channels, k, k], true),
            bias: Param::zeros(&[spec.out_channels], false),
        }
    }

    /// Variance-scaled (He) initialisation, zero bias.
    pub fn he<R: Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Self {
        let fan_in = spec.patch_len() as f64;
        Self::normal(spec, (2.0 / fan_in).sqrt(), rng)
    }

    pub fn normal<R: Rng + ?Sized>(spec: ConvSpec, std: f64, rng: &mut R) -> Self {
        let k = spec.kernel;
        Self {
            spec,
            weight: Param::normal(&[spec.out_channels, spec.in_channels, k, k], std, true, rng),
            bias: Param::zeros(&[spec.out_channels], false),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        if x.channels != self.spec.in_channels {
            return Err(NnError::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.spec.in_channels, x.channels
            )));
        }
        self.spec.output_size(x.height, x.width)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_train(x)?.0)
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvCache<T>)> {
        let (oh, ow) = self.check_input(x)?;
        let cols = if self.spec.is_pointwise() {
            x.data.clone()
        } else {
            im2col(x, &self.spec, oh, ow)
        };
        let n = oh * ow;
        let k = self.spec.patch_len();
        let oc = self.spec.out_channels;
        let mut out = Vec::with_capacity(oc * n);
        for &b in &self.bias.value {
            out.extend(std::iter::repeat_n(b, n));
        }
        T::gemm(
            oc,
            k,
            n,
            T::one(),
            &self.weight.value,
            (k as isize, 1),
            &cols,
            (n as isize, 1),
            T::one(),
            &mut out,
            (n as isize, 1),
        );
        let y = Tensor::from_vec(oc, oh, ow, out)?;
        Ok((
            y,
            ConvCache {
                cols,
                in_hw: (x.height, x.width),
                out_hw: (oh, ow),
            },
        ))
    }

    /// Accumulates parameter gradients and returns the input gradient when
    /// `need_input_grad` is set.
    pub fn backward(
        &mut self,
        cache: &ConvCache<T>,
        dy: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<Option<Tensor<T>>> {
        let (oh, ow) = cache.out_hw;
        let oc = self.spec.out_channels;
        if dy.shape() != (oc, oh, ow) {
            return Err(NnError::Shape(format!(
                "convolution gradient has shape {:?}, expected {:?}",
                dy.shape(),
                (oc, oh, ow)
            )));
        }
        let n = oh * ow;
        let k = self.spec.patch_len();
        // dW += dY * cols^T
        T::gemm(
            oc,
            n,
            k,
            T::one(),
            &dy.data,
            (n as isize, 1),
            &cache.cols,
            (1, n as isize),
            T::one(),
            &mut self.weight.grad,
            (k as isize, 1),
        );
        for (o, g) in self.bias.grad.iter_mut().enumerate() {
            *g += dy.data[o * n..(o + 1) * n].iter().copied().sum::<T>();
        }
        if !need_input_grad {
            return Ok(None);
        }
        // dcols = W^T * dY
        let mut dcols = vec![T::zero(); k * n];
        T::gemm(
            k,
            oc,
            n,
            T::one(),
            &self.weight.value,
            (1, k as isize),
            &dy.data,
            (n as isize, 1),
            T::zero(),
            &mut dcols,
            (n as isize, 1),
        );
        let (h, w) = cache.in_hw;
        let dx = if self.spec.is_pointwise() {
            Tensor::from_vec(self.spec.in_channels, h, w, dcols)?
        } else {
            col2im(&dcols, &self.spec, h, w, oh, ow)
        };
        Ok(Some(dx))
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

fn im2col<T: Scalar>(x: &Tensor<T>, spec: &ConvSpec, oh: usize, ow: usize) -> Vec<T> {
    let (h, w) = (x.height as isize, x.width as isize);
    let k = spec.kernel;
    let (s, p, d) = (spec.stride as isize, spec.padding as isize, spec.dilation as isize);
    let n = oh * ow;
    let mut cols = vec![T::zero(); spec.patch_len() * n];
    for c in 0..spec.in_channels {
        let plane = x.channel(c);
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                let dy = ki as isize * d - p;
                let dx = kj as isize * d - p;
                for oy in 0..oh {
                    let iy = oy as isize * s + dy;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &plane[(iy * w) as usize..((iy + 1) * w) as usize];
                    let out = &mut dst[oy * ow..(oy + 1) * ow];
                    if s == 1 {
                        // contiguous run of valid columns
                        let lo = (-dx).clamp(0, ow as isize) as usize;
                        let hi = (w - dx).clamp(0, ow as isize) as usize;
                        if lo < hi {
                            let start = (lo as isize + dx) as usize;
                            out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        }
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = ox as isize * s + dx;
                            if ix >= 0 && ix < w {
                                *o = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Scalar>(cols: &[T], spec: &ConvSpec, h: usize, w: usize, oh: usize, ow: usize) -> Tensor<T> {
    let mut dx = Tensor::zeros(spec.in_channels, h, w);
    let (hi, wi) = (h as isize, w as isize);
    let k = spec.kernel;
    let (s, p, d) = (spec.stride as isize, spec.padding as isize, spec.dilation as isize);
    let n = oh * ow;
    for c in 0..spec.in_channels {
        let plane = &mut dx.data[c * h * w..(c + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * n..(row + 1) * n];
                let offy = ki as isize * d - p;
                let offx = kj as isize * d - p;
                for oy in 0..oh {
                    let iy = oy as isize * s + offy;
                    if iy < 0 || iy >= hi {
                        continue;
                    }
                    let dst = &mut plane[(iy * wi) as usize..((iy + 1) * wi) as usize];
                    for ox in 0..ow {
                        let ix = ox as isize * s + offx;
                        if ix >= 0 && ix < wi {
                            dst[ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct seven-loop convolution.
    fn naive(conv: &Conv2d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let s = conv.spec;
        let (oh, ow) = s.output_size(x.height, x.width).unwrap();
        let mut y = Tensor::zeros(s.out_channels, oh, ow);
        for o in 0..s.out_channels {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = conv.bias.value[o];
                    for c in 0..s.in_channels {
                        for ki in 0..s.kernel {
                            for kj in 0..s.kernel {
                                let iy = (oy * s.stride + ki * s.dilation) as isize - s.padding as isize;
                                let ix = (ox * s.stride + kj * s.dilation) as isize - s.padding as isize;
                                if iy < 0 || ix < 0 || iy >= x.height as isize || ix >= x.width as isize {
                                    continue;
                                }
                                let wv = conv.weight.value
                                    [((o * s.in_channels + c) * s.kernel + ki) * s.kernel + kj];
                                acc += wv * x.at(c, iy as usize, ix as usize);
                            }
                        }
                    }
                    y.data[(o * oh + oy) * ow + ox] = acc;
                }
            }
        }
        y
    }

    fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for spec in [
            ConvSpec::new(3, 4, 3, 1, 1),
            ConvSpec::new(2, 5, 3, 2, 1),
            ConvSpec::new(3, 2, 4, 2, 1),
            ConvSpec::new(4, 3, 1, 1, 0),
            ConvSpec::new(2, 2, 3, 1, 2).dilated(2),
        ] {
            let mut conv = Conv2d::<f64>::he(spec, &mut rng);
            conv.bias = Param::normal(&[spec.out_channels], 0.5, false, &mut rng);
            let x = random_tensor(&mut rng, spec.in_channels, 9, 7);
            let fast = conv.forward(&x).unwrap();
            let slow = naive(&conv, &x);
            assert_eq!(fast.shape(), slow.shape());
            for (a, b) in fast.data.iter().zip(&slow.data) {
                assert!((a - b).abs() < 1e-12, "{spec:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [ConvSpec::new(2, 3, 3, 2, 1), ConvSpec::new(2, 2, 3, 1, 2).dilated(2)] {
            let mut conv = Conv2d::<f64>::he(spec, &mut rng);
            let x = random_tensor(&mut rng, 2, 6, 5);
            let (y, cache) = conv.forward_train(&x).unwrap();
            let proj = random_tensor(&mut rng, y.channels, y.height, y.width);
            let loss = |c: &Conv2d<f64>, x: &Tensor<f64>| -> f64 {
                c.forward(x).unwrap().data.iter().zip(&proj.data).map(|(a, b)| a * b).sum()
            };
            let dx = conv.backward(&cache, &proj, true).unwrap().unwrap();
            let h = 1e-6;
            for i in 0..x.data.len() {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let num = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * h);
                assert!((num - dx.data[i]).abs() < 1e-6);
            }
            for i in 0..conv.weight.len() {
                let mut c2 = conv.clone();
                c2.weight.value[i] += h;
                let up = loss(&c2, &x);
                c2.weight.value[i] -= 2.0 * h;
                let num = (up - loss(&c2, &x)) / (2.0 * h);
                assert!((num - conv.weight.grad[i]).abs() < 1e-6);
            }
        }
    }
}
