use super::{conv, Network};
use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::nn::{Float, Initializer, ParamSet, Tensor};

/// Filters of the six encoder convolutions.
pub const ENCODER_FILTERS: [usize; 6] = [32, 32, 64, 64, 128, 128];

/// Encoder layers followed by a 2x2 max pool.
const POOL_AFTER: [usize; 2] = [1, 3];

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualEncoderConfig {
    pub filters: [usize; 6],
    pub in_channels: usize,
}

impl Default for PerceptualEncoderConfig {
    fn default() -> Self {
        PerceptualEncoderConfig {
            filters: ENCODER_FILTERS,
            in_channels: 1,
        }
    }
}

impl PerceptualEncoderConfig {
    pub fn out_channels(&self) -> usize {
        self.filters[5]
    }

    pub fn to_manifest(&self) -> Manifest {
        let mut m = Manifest::new();
        let f: Vec<String> = self.filters.iter().map(usize::to_string).collect();
        m.set("filters", f.join(","));
        m.set("in_channels", self.in_channels);
        m
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let mut cfg = PerceptualEncoderConfig {
            in_channels: m.parse_or("in_channels", 1)?,
            ..Default::default()
        };
        if let Some(raw) = m.get("filters") {
            let parsed: Vec<usize> = raw
                .split(',')
                .map(|v| v.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidConfig(format!("bad encoder filters `{raw}`: {e}")))?;
            cfg.filters = parsed
                .try_into()
                .map_err(|_| Error::InvalidConfig(format!("encoder needs exactly six filters, got `{raw}`")))?;
        }
        Ok(cfg)
    }
}

/// Six 3x3 convolutions with ReLU, max pooling after the second and fourth.
#[derive(Clone, Debug)]
pub struct PerceptualEncoder {
    cfg: PerceptualEncoderConfig,
}

impl PerceptualEncoder {
    pub fn new(cfg: PerceptualEncoderConfig) -> Self {
        PerceptualEncoder { cfg }
    }

    pub fn config(&self) -> &PerceptualEncoderConfig {
        &self.cfg
    }

    pub fn init<T: Float>(&self, seed: u64) -> ParamSet<T> {
        let init = Initializer::new(seed);
        let mut ps = ParamSet::new();
        let mut ci = self.cfg.in_channels;
        for (i, &co) in self.cfg.filters.iter().enumerate() {
            init.conv(&mut ps, &format!("enc{i}"), ci, co, 3, true);
            ci = co;
        }
        ps
    }

    /// `[B, 1, H, W]` to `[B, 128, H/4, W/4]`.
    pub fn forward<T: Float>(&self, x: &Tensor<T>, params: &ParamSet<T>) -> Result<Tensor<T>> {
        if x.rank() != 4 || x.dim(1) != self.cfg.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects [B,{},H,W], got {:?}",
                self.cfg.in_channels,
                x.shape()
            )));
        }
        if x.dim(2) < 4 || x.dim(3) < 4 {
            return Err(Error::InputTooSmall(format!(
                "encoder needs at least 4x4 input, got {}x{}",
                x.dim(2),
                x.dim(3)
            )));
        }
        let mut h = x.clone();
        for i in 0..self.cfg.filters.len() {
            h = conv(&h, params, &format!("enc{i}"), 1)?.relu();
            if POOL_AFTER.contains(&i) {
                h = h.max_pool2d()?;
            }
        }
        Ok(h)
    }
}

impl Network for PerceptualEncoder {
    fn forward(&self, x: &Tensor<f32>, params: &ParamSet<f32>) -> Result<Tensor<f32>> {
        PerceptualEncoder::forward(self, x, params)
    }
}

/// Mirror of the encoder used only for autoencoder pretraining: six 3x3
/// convolutions with nearest upsampling where the encoder pooled, ReLU on
/// all but the last layer.
#[derive(Clone, Debug)]
pub struct Decoder {
    widths: Vec<(usize, usize)>,
    upsample_before: [usize; 2],
}

impl Decoder {
    pub fn mirror(cfg: &PerceptualEncoderConfig) -> Self {
        let f = cfg.filters;
        let widths = vec![
            (f[5], f[4]),
            (f[4], f[3]),
            (f[3], f[2]),
            (f[2], f[1]),
            (f[1], f[0]),
            (f[0], cfg.in_channels),
        ];
        Decoder {
            widths,
            upsample_before: [2, 4],
        }
    }

    pub fn init<T: Float>(&self, seed: u64) -> ParamSet<T> {
        let init = Initializer::new(seed ^ 0x00de_c0de);
        let mut ps = ParamSet::new();
        for (i, &(ci, co)) in self.widths.iter().enumerate() {
            init.conv(&mut ps, &format!("dec{i}"), ci, co, 3, true);
        }
        ps
    }

    pub fn forward<T: Float>(&self, z: &Tensor<T>, params: &ParamSet<T>) -> Result<Tensor<T>> {
        let mut h = z.clone();
        let last = self.widths.len() - 1;
        for i in 0..self.widths.len() {
            if self.upsample_before.contains(&i) {
                h = h.upsample_nearest(2);
            }
            h = conv(&h, params, &format!("dec{i}"), 1)?;
            if i != last {
                h = h.relu();
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_shapes_and_guards() {
        let enc = PerceptualEncoder::new(PerceptualEncoderConfig::default());
        let ps = enc.init::<f32>(3);
        assert_eq!(ps.len(), 12);
        let x = Tensor::full(&[1, 1, 56, 56], 0.5f32);
        let z = enc.forward(&x, &ps).unwrap();
        assert_eq!(z.shape(), &[1, 128, 14, 14]);
        assert_eq!(enc.forward(&x, &ps).unwrap().data(), z.data());
        let tiny = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(enc.forward(&tiny, &ps), Err(Error::InputTooSmall(_))));

        let dec = Decoder::mirror(enc.config());
        let dps = dec.init::<f32>(3);
        assert_eq!(dec.forward(&z, &dps).unwrap().shape(), &[1, 1, 56, 56]);
    }

    #[test]
    fn config_manifest() {
        let cfg = PerceptualEncoderConfig::default();
        assert_eq!(PerceptualEncoderConfig::from_manifest(&cfg.to_manifest()).unwrap(), cfg);
        let mut m = Manifest::new();
        m.set("filters", "1,2,3");
        assert!(PerceptualEncoderConfig::from_manifest(&m).is_err());
    }
}
