use super::{conv, Network};
use crate::attention::{SelfAttention, DEFAULT_REDUCTION, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::nn::{Float, Initializer, ParamSet, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub base_width: usize,
    /// Stride-2 convolution stages; stage `i` has `base_width * 2^i` channels.
    pub n_stages: usize,
    /// Stage index after which the self-attention block sits.
    pub attention_stage: usize,
    pub in_channels: usize,
    pub k: usize,
    pub attention: bool,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            base_width: 32,
            n_stages: 4,
            attention_stage: 2,
            in_channels: 1,
            k: DEFAULT_REDUCTION,
            attention: true,
        }
    }
}

impl CriticConfig {
    pub fn stage_width(&self, i: usize) -> usize {
        self.base_width << i
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_stages == 0 || self.base_width == 0 || self.in_channels == 0 {
            return Err(Error::InvalidConfig(
                "critic needs at least one stage and positive widths".into(),
            ));
        }
        if self.attention {
            if self.attention_stage >= self.n_stages {
                return Err(Error::InvalidConfig(format!(
                    "critic attention_stage {} must be below n_stages {}",
                    self.attention_stage, self.n_stages
                )));
            }
            SelfAttention::new("check", self.stage_width(self.attention_stage), self.k)?;
        }
        Ok(())
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("base_width", self.base_width);
        m.set("n_stages", self.n_stages);
        m.set("attention_stage", self.attention_stage);
        m.set("in_channels", self.in_channels);
        m.set("k", self.k);
        m.set("attention", self.attention);
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let d = CriticConfig::default();
        let cfg = CriticConfig {
            base_width: m.parse_or("base_width", d.base_width)?,
            n_stages: m.parse_or("n_stages", d.n_stages)?,
            attention_stage: m.parse_or("attention_stage", d.attention_stage)?,
            in_channels: m.parse_or("in_channels", d.in_channels)?,
            k: m.parse_or("k", d.k)?,
            attention: m.parse_or("attention", d.attention)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Wasserstein critic: strided conv stages, global average, affine score.
/// There is no squashing at the end.
#[derive(Clone, Debug)]
pub struct Critic {
    cfg: CriticConfig,
    attn: Option<SelfAttention>,
}

impl Critic {
    pub fn new(cfg: CriticConfig) -> Result<Self> {
        cfg.validate()?;
        let attn = cfg
            .attention
            .then(|| SelfAttention::new("attn", cfg.stage_width(cfg.attention_stage), cfg.k))
            .transpose()?;
        Ok(Critic { cfg, attn })
    }

    pub fn config(&self) -> &CriticConfig {
        &self.cfg
    }

    pub fn init<T: Float>(&self, seed: u64) -> ParamSet<T> {
        let init = Initializer::new(seed);
        let mut ps = ParamSet::new();
        let mut ci = self.cfg.in_channels;
        for i in 0..self.cfg.n_stages {
            let co = self.cfg.stage_width(i);
            init.conv(&mut ps, &format!("stage{i}"), ci, co, 3, true);
            ci = co;
        }
        if let Some(a) = &self.attn {
            a.init(&mut ps, &init);
        }
        let w = init.he_normal("score.weight", &[1, ci, 1], ci);
        ps.insert("score.weight", &[1, ci, 1], w);
        ps.insert("score.bias", &[1, 1], vec![T::zero()]);
        ps
    }

    /// Scores a `[B, C, H, W]` batch; returns `[B, 1]`.
    pub fn forward<T: Float>(&self, x: &Tensor<T>, params: &ParamSet<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(1) != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "critic expects [B,{},H,W], got {:?}",
                self.cfg.in_channels,
                x.shape()
            )));
        }
        let need = 1usize << self.cfg.n_stages;
        if x.dim(2) < need || x.dim(3) < need {
            return Err(Error::InputTooSmall(format!(
                "critic with {} stages needs at least {need}x{need}, got {}x{}",
                self.cfg.n_stages,
                x.dim(2),
                x.dim(3)
            )));
        }
        let mut h = x.clone();
        for i in 0..self.cfg.n_stages {
            h = conv(&h, params, &format!("stage{i}"), 2)?.leaky_relu(T::lit(LEAKY_SLOPE));
            if i == self.cfg.attention_stage {
                if let Some(a) = &self.attn {
                    h = a.forward(&h, params)?;
                }
            }
        }
        let (b, c) = (h.dim(0), h.dim(1));
        let area = T::lit((h.dim(2) * h.dim(3)) as f64);
        let pooled = h.sum_to(&[b, c, 1, 1]).mul_scalar(T::one() / area).reshape(&[1, b, c]);
        let score = pooled.bmm(&params.get("score.weight")?, false, false)?;
        Ok(score.reshape(&[b, 1]).add(&params.get("score.bias")?))
    }
}

impl Network for Critic {
    fn forward(&self, x: &Tensor<f32>, params: &ParamSet<f32>) -> Result<Tensor<f32>> {
        Critic::forward(self, x, params)
    }
}
