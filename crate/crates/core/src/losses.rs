//! Training objectives and the loss-variant selector.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::manifest::Manifest;
use crate::networks::PerceptualEncoder;
use crate::nn::{grad, Float, ParamSet, Tensor};

/// The trained model variants. Each one fixes the generator family and the
/// set of active loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    CnnVgg,
    Wgan,
    Perceptual,
    WganVgg,
    WganMaP,
}

/// A term of the generator objective.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Term {
    Adversarial,
    Perceptual,
    Vgg,
}

impl Term {
    fn name(self) -> &'static str {
        match self {
            Term::Adversarial => "adversarial",
            Term::Perceptual => "perceptual",
            Term::Vgg => "vgg",
        }
    }
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CnnVgg,
        Variant::Wgan,
        Variant::Perceptual,
        Variant::WganVgg,
        Variant::WganMaP,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CnnVgg => "CNN-VGG",
            Variant::Wgan => "WGAN",
            Variant::Perceptual => "Perceptual",
            Variant::WganVgg => "WGAN-VGG",
            Variant::WganMaP => "WGAN-MA-P",
        }
    }

    pub fn terms(self) -> &'static [Term] {
        match self {
            Variant::CnnVgg => &[Term::Vgg],
            Variant::Wgan => &[Term::Adversarial],
            Variant::Perceptual => &[Term::Perceptual],
            Variant::WganVgg => &[Term::Adversarial, Term::Vgg],
            Variant::WganMaP => &[Term::Adversarial, Term::Perceptual],
        }
    }

    pub fn is_adversarial(self) -> bool {
        self.terms().contains(&Term::Adversarial)
    }

    /// Whether the generator uses the attention blocks.
    pub fn uses_attention(self) -> bool {
        matches!(self, Variant::Perceptual | Variant::WganMaP)
    }

    /// Whether a feature encoder of either kind is needed.
    pub fn needs_encoder(self) -> bool {
        self.terms().iter().any(|t| matches!(t, Term::Perceptual | Term::Vgg))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown variant `{s}`, expected one of CNN-VGG, WGAN, Perceptual, WGAN-VGG, WGAN-MA-P"
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub variant: Variant,
    /// Weight of the feature-space term when combined with the adversarial one.
    pub beta: f64,
    pub lambda_gp: f64,
    /// Critic updates per generator update.
    pub critic_steps: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            variant: Variant::WganMaP,
            beta: 0.1,
            lambda_gp: 10.0,
            critic_steps: 5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.lambda_gp >= 0.0 && self.lambda_gp.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_gp must be >= 0, got {}", self.lambda_gp)));
        }
        if self.critic_steps == 0 {
            return Err(Error::InvalidConfig("critic_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("variant", self.variant);
        m.set("beta", self.beta);
        m.set("lambda_gp", self.lambda_gp);
        m.set("critic_steps", self.critic_steps);
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let d = LossConfig::default();
        let cfg = LossConfig {
            variant: m.parse_or("variant", d.variant)?,
            beta: m.parse_or("beta", d.beta)?,
            lambda_gp: m.parse_or("lambda_gp", d.lambda_gp)?,
            critic_steps: m.parse_or("critic_steps", d.critic_steps)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn same_shape<T: Float>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse_loss<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b, "mse_loss")?;
    Ok(a.sub(b).square().mean())
}

/// Maps an image batch to a feature batch.
pub trait FeatureExtractor<T: Float> {
    fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

/// A perceptual encoder with frozen weights.
#[derive(Clone)]
pub struct FrozenEncoder<T: Float = f32> {
    pub encoder: PerceptualEncoder,
    params: ParamSet<T>,
}

impl<T: Float> FrozenEncoder<T> {
    pub fn new(encoder: PerceptualEncoder, mut params: ParamSet<T>) -> Self {
        params.set_trainable(false);
        FrozenEncoder { encoder, params }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }
}

impl<T: Float> FeatureExtractor<T> for FrozenEncoder<T> {
    fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.encoder.forward(x, &self.params)
    }
}

/// Squared feature distance divided by the feature map size `D * H * W`,
/// averaged over the batch.
pub fn perceptual_loss<T: Float>(fx: &dyn FeatureExtractor<T>, sr: &Tensor<T>, hr: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(sr, hr, "perceptual_loss")?;
    let target = fx.features(&hr.detach())?;
    mse_loss(&fx.features(sr)?, &target)
}

/// [`perceptual_loss`] on two images of the same range.
pub fn perceptual_loss_images(fx: &dyn FeatureExtractor<f32>, sr: &Image, hr: &Image) -> Result<f64> {
    if sr.range() != hr.range() {
        return Err(Error::RangeTagMismatch(format!(
            "{} vs {}",
            sr.range().name(),
            hr.range().name()
        )));
    }
    if sr.shape() != hr.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", sr.shape(), hr.shape())));
    }
    let (h, w) = sr.shape();
    let a = Tensor::constant(sr.pixels().to_vec(), &[1, 1, h, w]);
    let b = Tensor::constant(hr.pixels().to_vec(), &[1, 1, h, w]);
    Ok(perceptual_loss(fx, &a, &b)?.item().as_f64())
}

/// A critic as a function from a `[B, ...]` batch to `[B, 1]` scores.
pub trait Score<T: Float> {
    fn score(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Float, F: Fn(&Tensor<T>) -> Result<Tensor<T>>> Score<T> for F {
    fn score(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self(x)
    }
}

/// Mixing weights for the gradient penalty, one per batch element.
pub fn sample_epsilon<R: Rng + ?Sized>(rng: &mut R, batch: usize) -> Vec<f64> {
    (0..batch).map(|_| rng.gen_range(0.0..=1.0)).collect()
}

#[derive(Clone)]
pub struct CriticLoss<T: Float = f32> {
    /// Objective the critic minimises.
    pub total: Tensor<T>,
    /// `mean d(real) - mean d(fake)`.
    pub wasserstein: f64,
    /// The weighted penalty term, already multiplied by lambda.
    pub penalty: Tensor<T>,
}

fn per_sample_shape<T: Float>(x: &Tensor<T>) -> Vec<usize> {
    let mut s = vec![1; x.rank()];
    s[0] = x.dim(0);
    s
}

/// `lambda * mean((|grad d(x_hat)| - 1)^2)` at `x_hat = eps * real + (1 - eps) * fake`.
///
/// The input gradient is recorded with its own graph, so the result can be
/// differentiated with respect to the critic's parameters.
pub fn gradient_penalty<T: Float>(
    critic: &dyn Score<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda: f64,
    eps: &[f64],
) -> Result<Tensor<T>> {
    same_shape(real, fake, "gradient_penalty")?;
    if eps.len() != real.dim(0) {
        return Err(Error::ShapeMismatch(format!(
            "{} mixing weights for a batch of {}",
            eps.len(),
            real.dim(0)
        )));
    }
    let shape = per_sample_shape(real);
    let e = Tensor::constant(eps.iter().map(|&v| T::lit(v)).collect(), &shape);
    let one_minus = Tensor::constant(eps.iter().map(|&v| T::lit(1.0 - v)).collect(), &shape);
    let x_hat = e.mul(&real.detach()).add(&one_minus.mul(&fake.detach())).detach_leaf();
    let out = critic.score(&x_hat)?.sum();
    let g = if out.requires_grad() {
        grad(&out, std::slice::from_ref(&x_hat), true)?.remove(0)
    } else {
        Tensor::zeros(x_hat.shape())
    };
    let norm = g.square().sum_to(&shape).sqrt();
    Ok(norm.add_scalar(-T::one()).square().mean().mul_scalar(T::lit(lambda)))
}

/// `-mean d(real) + mean d(fake) + penalty`.
pub fn critic_loss<T: Float>(
    critic: &dyn Score<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda: f64,
    eps: &[f64],
) -> Result<CriticLoss<T>> {
    same_shape(real, fake, "critic_loss")?;
    let d_real = critic.score(real)?.mean();
    let d_fake = critic.score(&fake.detach())?.mean();
    let wasserstein = d_real.item().as_f64() - d_fake.item().as_f64();
    let penalty = if lambda == 0.0 {
        Tensor::scalar(T::zero())
    } else {
        gradient_penalty(critic, real, fake, lambda, eps)?
    };
    let total = d_fake.sub(&d_real).add(&penalty);
    Ok(CriticLoss {
        total,
        wasserstein,
        penalty,
    })
}

/// `-mean d(fake)`.
pub fn generator_adv_loss<T: Float>(critic: &dyn Score<T>, fake: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(critic.score(fake)?.mean().neg())
}

/// Generator loss terms computed for one step.
#[derive(Clone, Default)]
pub struct LossParts<T: Float = f32> {
    pub adversarial: Option<Tensor<T>>,
    pub perceptual: Option<Tensor<T>>,
    pub vgg: Option<Tensor<T>>,
}

impl<T: Float> LossParts<T> {
    fn get(&self, term: Term) -> Option<&Tensor<T>> {
        match term {
            Term::Adversarial => self.adversarial.as_ref(),
            Term::Perceptual => self.perceptual.as_ref(),
            Term::Vgg => self.vgg.as_ref(),
        }
    }
}

/// Combines exactly the terms the variant activates. Adversarial variants
/// add `beta` times their feature term; non-adversarial variants use the
/// feature term alone.
pub fn total_generator_loss<T: Float>(cfg: &LossConfig, parts: &LossParts<T>) -> Result<Tensor<T>> {
    let active = cfg.variant.terms();
    for term in [Term::Adversarial, Term::Perceptual, Term::Vgg] {
        match (active.contains(&term), parts.get(term).is_some()) {
            (true, false) => {
                return Err(Error::VariantTermMismatch {
                    variant: cfg.variant.to_string(),
                    problem: format!("missing {} term", term.name()),
                })
            }
            (false, true) => {
                return Err(Error::VariantTermMismatch {
                    variant: cfg.variant.to_string(),
                    problem: format!("unexpected {} term", term.name()),
                })
            }
            _ => {}
        }
    }
    let feature = parts.perceptual.as_ref().or(parts.vgg.as_ref());
    Ok(match (&parts.adversarial, feature) {
        (Some(adv), Some(f)) => adv.add(&f.mul_scalar(T::lit(cfg.beta))),
        (Some(adv), None) => adv.clone(),
        (None, Some(f)) => f.clone(),
        (None, None) => unreachable!("every variant has at least one term"),
    })
}
