use super::{conv, Network, PipelineMode};
use crate::attention::{SelfAttention, UpsampleAttention, DEFAULT_REDUCTION, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::nn::{Float, Initializer, InterpolationMode, ParamSet, ScaleFactor, Tensor};
use crate::wavelet::{dwt2_haar, idwt2_haar, SubbandSet};

/// Shape of the subband predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub base_width: usize,
    /// Number of attention residual blocks.
    pub rho: usize,
    /// Channel reduction inside self-attention.
    pub k: usize,
    pub mode: PipelineMode,
    pub scale: usize,
    /// `false` builds the plain convolutional generator: no self-attention
    /// in the residual blocks and no mask in the upsample block.
    pub attention: bool,
    /// Start the tail convolution at zero so the initial output equals the
    /// input subbands.
    pub zero_tail: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            base_width: 64,
            rho: 4,
            k: DEFAULT_REDUCTION,
            mode: PipelineMode::PreInterpolated,
            scale: 2,
            attention: true,
            zero_tail: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rho == 0 {
            return Err(Error::InvalidConfig("rho must be at least 1".into()));
        }
        if !matches!(self.scale, 2 | 4) {
            return Err(Error::InvalidConfig(format!("scale must be 2 or 4, got {}", self.scale)));
        }
        if self.base_width == 0 {
            return Err(Error::InvalidConfig("base_width must be positive".into()));
        }
        if self.attention {
            SelfAttention::new("check", self.base_width, self.k)?;
        }
        Ok(())
    }

    /// Resize factor of the upsample-attention block.
    pub fn upsample_factor(&self) -> ScaleFactor {
        match self.mode {
            PipelineMode::PreInterpolated => ScaleFactor::integer(1),
            PipelineMode::Progressive => ScaleFactor::integer(self.scale),
        }
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        m.set("base_width", self.base_width);
        m.set("rho", self.rho);
        m.set("k", self.k);
        m.set("mode", self.mode);
        m.set("scale", self.scale);
        m.set("attention", self.attention);
        m.set("zero_tail", self.zero_tail);
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let d = GeneratorConfig::default();
        let cfg = GeneratorConfig {
            base_width: m.parse_or("base_width", d.base_width)?,
            rho: m.parse_or("rho", d.rho)?,
            k: m.parse_or("k", d.k)?,
            mode: m.parse_or("mode", d.mode)?,
            scale: m.parse_or("scale", d.scale)?,
            attention: m.parse_or("attention", d.attention)?,
            zero_tail: m.parse_or("zero_tail", d.zero_tail)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Predicts high-resolution subbands from a 4-channel subband stack.
///
/// Head 3x3 conv to `C` channels, `rho` residual blocks (conv, leaky ReLU,
/// conv, self-attention, skip), one upsample-attention block, tail 3x3 conv
/// back to 4 channels, and a global skip from the (resampled) input.
#[derive(Clone, Debug)]
pub struct Generator {
    cfg: GeneratorConfig,
    blocks: Vec<Option<SelfAttention>>,
    up: UpsampleAttention,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.rho)
            .map(|i| {
                cfg.attention
                    .then(|| SelfAttention::new(&format!("block{i}.attn"), cfg.base_width, cfg.k))
                    .transpose()
            })
            .collect::<Result<_>>()?;
        let up = UpsampleAttention::new("up", cfg.base_width, cfg.upsample_factor());
        Ok(Generator { cfg, blocks, up })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn init<T: Float>(&self, seed: u64) -> ParamSet<T> {
        let init = Initializer::new(seed);
        let c = self.cfg.base_width;
        let mut ps = ParamSet::new();
        init.conv(&mut ps, "head", 4, c, 3, true);
        for (i, attn) in self.blocks.iter().enumerate() {
            init.conv(&mut ps, &format!("block{i}.conv1"), c, c, 3, true);
            init.conv(&mut ps, &format!("block{i}.conv2"), c, c, 3, true);
            if let Some(a) = attn {
                a.init(&mut ps, &init);
            }
        }
        if self.cfg.attention {
            self.up.init(&mut ps, &init);
        } else {
            init.conv(&mut ps, "up.body", c, c, 3, true);
        }
        init.conv(&mut ps, "tail", c, 4, 3, true);
        if self.cfg.zero_tail {
            ps.set_values("tail.weight", vec![T::zero(); 4 * c * 9]).expect("tail exists");
        }
        ps
    }

    /// Expected output subband size for input subbands of `h x w`.
    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let f = self.cfg.upsample_factor();
        Ok((f.apply(h)?, f.apply(w)?))
    }

    /// The global-skip path: input subbands on the output grid.
    pub fn base<T: Float>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.interpolate(self.cfg.upsample_factor(), InterpolationMode::Bicubic)
    }

    /// Forward pass on `[B, 4, h, w]` subband stacks.
    pub fn forward<T: Float>(&self, x: &Tensor<T>, params: &ParamSet<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(1) != 4 {
            return Err(Error::ShapeMismatch(format!(
                "generator expects [B,4,h,w] subbands, got {:?}",
                x.shape()
            )));
        }
        let slope = T::lit(LEAKY_SLOPE);
        let mut feat = conv(x, params, "head", 1)?;
        for (i, attn) in self.blocks.iter().enumerate() {
            let r = conv(&feat, params, &format!("block{i}.conv1"), 1)?.leaky_relu(slope);
            let mut r = conv(&r, params, &format!("block{i}.conv2"), 1)?;
            if let Some(a) = attn {
                r = a.forward(&r, params)?;
            }
            feat = feat.add(&r);
        }
        let up = if self.cfg.attention {
            self.up.forward(&feat, params)?
        } else {
            let u = feat.interpolate(self.cfg.upsample_factor(), InterpolationMode::Nearest)?;
            conv(&u, params, "up.body", 1)?.leaky_relu(slope)
        };
        let residual = conv(&up, params, "tail", 1)?;
        Ok(self.base(x)?.add(&residual))
    }

    /// Predicts the subbands of one image.
    pub fn forward_subbands(&self, subbands: &SubbandSet<f32>, params: &ParamSet<f32>) -> Result<SubbandSet<f32>> {
        let y = self.forward(&subbands.to_tensor()?, params)?;
        SubbandSet::from_tensor(&y, 0, subbands.range)
    }

    /// Full pipeline on one image that is already at the network's input
    /// resolution: decompose, predict, reconstruct.
    pub fn enhance(&self, input: &crate::image::Image<f32>, params: &ParamSet<f32>) -> Result<crate::image::Image<f32>> {
        let sb = dwt2_haar(input)?;
        let out = crate::nn::no_grad(|| self.forward_subbands(&sb, params))?;
        idwt2_haar(&out)
    }
}

impl Network for Generator {
    fn forward(&self, x: &Tensor<f32>, params: &ParamSet<f32>) -> Result<Tensor<f32>> {
        Generator::forward(self, x, params)
    }
}
