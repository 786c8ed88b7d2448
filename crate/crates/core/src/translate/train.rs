//! Unpaired cycle-consistent adversarial training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sixchan_nn::loss::{l1, mse_to};
use sixchan_nn::optim::Adam;
use sixchan_nn::param::{scoped, scoped_mut};
use sixchan_nn::{Module, Param, Scalar, Tensor};

use super::gan::{Discriminator, Generator};
use super::GanHyperparams;
use crate::dataset::{DatasetSplit, ValueRange};
use crate::{Error, Result};

/// Both generators and both discriminators.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleGan<T> {
    /// A to B.
    pub g_ab: Generator<T>,
    /// B to A.
    pub g_ba: Generator<T>,
    /// Judges domain A images.
    pub d_a: Discriminator<T>,
    /// Judges domain B images.
    pub d_b: Discriminator<T>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorLosses {
    pub adversarial: f64,
    pub cycle: f64,
    pub identity: f64,
    pub total: f64,
}

/// Output of one generator pass, reused by the discriminator update.
pub struct Fakes<T> {
    pub fake_a: Tensor<T>,
    pub fake_b: Tensor<T>,
}

impl<T: Scalar> CycleGan<T> {
    pub fn new<R: Rng + ?Sized>(base_filters: usize, residual_blocks: usize, rng: &mut R) -> Self {
        Self {
            g_ab: Generator::new(base_filters, residual_blocks, rng),
            g_ba: Generator::new(base_filters, residual_blocks, rng),
            d_a: Discriminator::new(base_filters, rng),
            d_b: Discriminator::new(base_filters, rng),
        }
    }

    pub fn cast<U: Scalar>(&self) -> CycleGan<U> {
        CycleGan {
            g_ab: self.g_ab.cast(),
            g_ba: self.g_ba.cast(),
            d_a: self.d_a.cast(),
            d_b: self.d_b.cast(),
        }
    }

    /// Generator objective value without gradients.
    pub fn generator_loss(&self, a: &Tensor<T>, b: &Tensor<T>, hp: &GanHyperparams) -> Result<GeneratorLosses> {
        let fake_b = self.g_ab.forward(a)?;
        let fake_a = self.g_ba.forward(b)?;
        let rec_a = self.g_ba.forward(&fake_b)?;
        let rec_b = self.g_ab.forward(&fake_a)?;
        let idt_b = self.g_ab.forward(b)?;
        let idt_a = self.g_ba.forward(a)?;
        let adv = mse_to(&self.d_b.forward(&fake_b)?.data, 1.0).0 + mse_to(&self.d_a.forward(&fake_a)?.data, 1.0).0;
        let cyc = l1(&rec_a.data, &a.data).0 + l1(&rec_b.data, &b.data).0;
        let idt = l1(&idt_b.data, &b.data).0 + l1(&idt_a.data, &a.data).0;
        Ok(Self::combine(adv, cyc, idt, hp))
    }

    fn combine(adv: T, cyc: T, idt: T, hp: &GanHyperparams) -> GeneratorLosses {
        let (adv, cyc, idt) = (to_f64(adv), to_f64(cyc), to_f64(idt));
        GeneratorLosses {
            adversarial: adv,
            cycle: cyc,
            identity: idt,
            total: adv + hp.lambda_cycle * cyc + hp.lambda_identity * idt,
        }
    }

    /// Generator objective with gradients accumulated into all four
    /// networks (discriminator gradients included; callers discard them).
    pub fn generator_backward(&mut self, a: &Tensor<T>, b: &Tensor<T>, hp: &GanHyperparams) -> Result<(GeneratorLosses, Fakes<T>)> {
        let (fake_b, c_fake_b) = self.g_ab.forward_train(a)?;
        let (fake_a, c_fake_a) = self.g_ba.forward_train(b)?;
        let (rec_a, c_rec_a) = self.g_ba.forward_train(&fake_b)?;
        let (rec_b, c_rec_b) = self.g_ab.forward_train(&fake_a)?;
        let (idt_b, c_idt_b) = self.g_ab.forward_train(b)?;
        let (idt_a, c_idt_a) = self.g_ba.forward_train(a)?;
        let (pb, c_pb) = self.d_b.forward_train(&fake_b)?;
        let (pa, c_pa) = self.d_a.forward_train(&fake_a)?;

        let (adv_b, g_pb) = mse_to(&pb.data, 1.0);
        let (adv_a, g_pa) = mse_to(&pa.data, 1.0);
        let (cyc_a, g_rec_a) = l1(&rec_a.data, &a.data);
        let (cyc_b, g_rec_b) = l1(&rec_b.data, &b.data);
        let (idt_lb, g_idt_b) = l1(&idt_b.data, &b.data);
        let (idt_la, g_idt_a) = l1(&idt_a.data, &a.data);
        let losses = Self::combine(adv_a + adv_b, cyc_a + cyc_b, idt_la + idt_lb, hp);

        let lc = T::of(hp.lambda_cycle);
        let li = T::of(hp.lambda_identity);
        let scaled = |g: Vec<T>, s: T, like: &Tensor<T>| Tensor::from_vec(like.channels, like.height, like.width, g.into_iter().map(|v| v * s).collect());

        let mut d_fake_b = self.d_b.backward(&c_pb, &scaled(g_pb, T::one(), &pb)?, true)?.expect("input grad");
        let mut d_fake_a = self.d_a.backward(&c_pa, &scaled(g_pa, T::one(), &pa)?, true)?.expect("input grad");
        let back_rec_a = self.g_ba.backward(&c_rec_a, &scaled(g_rec_a, lc, &rec_a)?, true)?.expect("input grad");
        let back_rec_b = self.g_ab.backward(&c_rec_b, &scaled(g_rec_b, lc, &rec_b)?, true)?.expect("input grad");
        d_fake_b = d_fake_b.add(&back_rec_a)?;
        d_fake_a = d_fake_a.add(&back_rec_b)?;
        self.g_ab.backward(&c_fake_b, &d_fake_b, false)?;
        self.g_ba.backward(&c_fake_a, &d_fake_a, false)?;
        self.g_ab.backward(&c_idt_b, &scaled(g_idt_b, li, &idt_b)?, false)?;
        self.g_ba.backward(&c_idt_a, &scaled(g_idt_a, li, &idt_a)?, false)?;
        Ok((losses, Fakes { fake_a, fake_b }))
    }

    /// Least-squares discriminator objective for fixed fakes, value only.
    pub fn discriminator_loss(&self, a: &Tensor<T>, b: &Tensor<T>, fakes: &Fakes<T>) -> Result<f64> {
        let half = T::of(0.5);
        let da = half * (mse_to(&self.d_a.forward(a)?.data, 1.0).0 + mse_to(&self.d_a.forward(&fakes.fake_a)?.data, 0.0).0);
        let db = half * (mse_to(&self.d_b.forward(b)?.data, 1.0).0 + mse_to(&self.d_b.forward(&fakes.fake_b)?.data, 0.0).0);
        Ok(to_f64(da + db))
    }

    /// Discriminator objective with gradients into the two discriminators.
    pub fn discriminator_backward(&mut self, a: &Tensor<T>, b: &Tensor<T>, fakes: &Fakes<T>) -> Result<f64> {
        let half = T::of(0.5);
        let mut total = T::zero();
        for (d, real, fake) in [(&mut self.d_a, a, &fakes.fake_a), (&mut self.d_b, b, &fakes.fake_b)] {
            for (x, target) in [(real, 1.0), (fake, 0.0)] {
                let (p, cache) = d.forward_train(x)?;
                let (l, g) = mse_to(&p.data, target);
                total += half * l;
                let g = Tensor::from_vec(p.channels, p.height, p.width, g.into_iter().map(|v| v * half).collect())?;
                d.backward(&cache, &g, false)?;
            }
        }
        Ok(to_f64(total))
    }

    fn generator_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v: Vec<_> = scoped_mut("g_ab", self.g_ab.params_mut()).collect();
        v.extend(scoped_mut("g_ba", self.g_ba.params_mut()));
        v
    }

    fn discriminator_params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v: Vec<_> = scoped_mut("d_a", self.d_a.params_mut()).collect();
        v.extend(scoped_mut("d_b", self.d_b.params_mut()));
        v
    }
}

impl<T: Scalar> Module<T> for CycleGan<T> {
    fn params(&self) -> Vec<(String, &Param<T>)> {
        let mut v: Vec<_> = scoped("g_ab", self.g_ab.params()).collect();
        v.extend(scoped("g_ba", self.g_ba.params()));
        v.extend(scoped("d_a", self.d_a.params()));
        v.extend(scoped("d_b", self.d_b.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<(String, &mut Param<T>)> {
        let mut v: Vec<_> = scoped_mut("g_ab", self.g_ab.params_mut()).collect();
        v.extend(scoped_mut("g_ba", self.g_ba.params_mut()));
        v.extend(scoped_mut("d_a", self.d_a.params_mut()));
        v.extend(scoped_mut("d_b", self.d_b.params_mut()));
        v
    }
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TranslatorEpoch {
    pub epoch: usize,
    pub generator: GeneratorLosses,
    pub discriminator: f64,
}

/// Random square crop in `[-1, 1]`.
fn random_crop<R: Rng + ?Sized>(split: &DatasetSplit, index: usize, size: usize, rng: &mut R) -> Result<Tensor<f32>> {
    let img = split.samples[index].image.to_range(ValueRange::Sym11);
    let (h, w) = (img.height(), img.width());
    if img.channels() != 3 {
        return Err(Error::Dimension(format!("translator expects 3 channels, got {}", img.channels())));
    }
    let t = img.to_tensor();
    if size == 0 || size >= h.min(w) {
        let (h4, w4) = (h - h % 4, w - w % 4);
        return Ok(t.crop(0, 0, h4, w4)?);
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    Ok(t.crop(top, left, size, size)?)
}

/// Trains both directions on unpaired batches of one image each.
pub fn train_cycle_gan(
    domain_a: &DatasetSplit,
    domain_b: &DatasetSplit,
    hp: &GanHyperparams,
) -> Result<(CycleGan<f32>, Vec<TranslatorEpoch>)> {
    hp.validate()?;
    if domain_a.is_empty() || domain_b.is_empty() {
        return Err(Error::Config("translator training needs images in both domains".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut gan = CycleGan::<f32>::new(hp.base_filters, hp.residual_blocks, &mut rng);
    let mut opt_g = Adam::new(hp.beta1, hp.beta2);
    let mut opt_d = Adam::new(hp.beta1, hp.beta2);
    let steps = hp.steps_per_epoch.unwrap_or(domain_a.len().max(domain_b.len()));
    let mut history = Vec::with_capacity(hp.epochs);
    for epoch in 1..=hp.epochs {
        let mut order_a: Vec<usize> = (0..domain_a.len()).collect();
        let mut order_b: Vec<usize> = (0..domain_b.len()).collect();
        order_a.shuffle(&mut rng);
        order_b.shuffle(&mut rng);
        let mut sum = TranslatorEpoch {
            epoch,
            ..Default::default()
        };
        for s in 0..steps {
            let a = random_crop(domain_a, order_a[s % order_a.len()], hp.crop_size, &mut rng)?;
            let b = random_crop(domain_b, order_b[s % order_b.len()], hp.crop_size, &mut rng)?;
            gan.zero_grad();
            let (g, fakes) = gan.generator_backward(&a, &b, hp)?;
            opt_g.step(gan.generator_params_mut(), hp.learning_rate);
            gan.zero_grad();
            let d = gan.discriminator_backward(&a, &b, &fakes)?;
            opt_d.step(gan.discriminator_params_mut(), hp.learning_rate);
            if !g.total.is_finite() || !d.is_finite() {
                return Err(Error::NumericDomain(format!("translator loss diverged at epoch {epoch}, step {s}")));
            }
            sum.generator.adversarial += g.adversarial;
            sum.generator.cycle += g.cycle;
            sum.generator.identity += g.identity;
            sum.generator.total += g.total;
            sum.discriminator += d;
        }
        let n = steps.max(1) as f64;
        sum.generator.adversarial /= n;
        sum.generator.cycle /= n;
        sum.generator.identity /= n;
        sum.generator.total /= n;
        sum.discriminator /= n;
        log::info!(
            "translator epoch {epoch}: G {:.4} (adv {:.4}, cycle {:.4}, identity {:.4}), D {:.4}",
            sum.generator.total,
            sum.generator.adversarial,
            sum.generator.cycle,
            sum.generator.identity,
            sum.discriminator
        );
        history.push(sum);
    }
    Ok((gan, history))
}
