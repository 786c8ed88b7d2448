use crate::param::Param;
use crate::Scalar;

/// SGD with heavy-ball momentum and decoupled-from-bias weight decay,
/// following the usual `v = m v + (g + wd p); p -= lr v` update.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<(String, &mut Param<T>)>, lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        }
        assert_eq!(self.velocity.len(), params.len(), "parameter set changed between steps");
        let (m, wd, lr) = (T::of(self.momentum), T::of(self.weight_decay), T::of(lr));
        for ((_, p), v) in params.into_iter().zip(&mut self.velocity) {
            let decay = if p.decay { wd } else { T::zero() };
            for ((w, &g), vel) in p.value.iter_mut().zip(&p.grad).zip(v.iter_mut()) {
                *vel = m * *vel + g + decay * *w;
                *w -= lr * *vel;
            }
        }
    }
}

/// Adam, bias-corrected.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    steps: i32,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<(String, &mut Param<T>)>, lr: f64) {
        if self.first.is_empty() {
            self.first = params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        assert_eq!(self.first.len(), params.len(), "parameter set changed between steps");
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (one, eps) = (T::one(), T::of(self.eps));
        let step = T::of(lr / c1);
        let c2s = T::of(c2.sqrt());
        for (((_, p), m), v) in params.into_iter().zip(&mut self.first).zip(&mut self.second) {
            for (((w, &g), mi), vi) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                *w -= step * *mi / (vi.sqrt() / c2s + eps);
            }
        }
    }
}
