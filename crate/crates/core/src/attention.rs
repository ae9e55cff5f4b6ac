//! Self-attention over spatial positions and the upsample-attention block.

use crate::error::{Error, Result};
use crate::nn::{Float, Initializer, InterpolationMode, Padding, ParamSet, ScaleFactor, Tensor};

/// Upper bound on `H * W` for self-attention; the affinity matrix is N x N.
pub const MAX_ATTENTION_POSITIONS: usize = 4096;

/// Default channel reduction for the query/key/value projections.
pub const DEFAULT_REDUCTION: usize = 8;

/// Negative slope of the leaky ReLU used throughout the networks.
pub const LEAKY_SLOPE: f64 = 0.2;

const REDUCTIONS: [usize; 4] = [1, 2, 4, 8];

/// Weights of one self-attention block, borrowed from a [`ParamSet`].
///
/// `w_f`, `w_g`, `w_h` are `[L, C, 1, 1]`, `w_v` is `[C, L, 1, 1]` and
/// `alpha` is `[1, 1, 1, 1]`.
#[derive(Clone)]
pub struct SelfAttentionParams<T: Float = f32> {
    pub w_f: Tensor<T>,
    pub w_g: Tensor<T>,
    pub w_h: Tensor<T>,
    pub w_v: Tensor<T>,
    pub alpha: Tensor<T>,
}

fn positions<T: Float>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch(format!("attention expects [B,C,H,W], got {:?}", x.shape())));
    }
    let n = x.dim(2) * x.dim(3);
    if n > MAX_ATTENTION_POSITIONS {
        return Err(Error::AttentionTooLarge(n));
    }
    Ok((x.dim(0), x.dim(1), n))
}

fn project<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: usize, n: usize) -> Result<Tensor<T>> {
    let y = x.conv2d(w, 1, Padding::Same)?;
    Ok(y.reshape(&[b, w.dim(0), n]))
}

/// Attention weights `[B, N, N]`; entry `(i, j)` is how much output
/// position `j` draws from position `i`, so every column sums to one.
pub fn attention_map<T: Float>(x: &Tensor<T>, p: &SelfAttentionParams<T>) -> Result<Tensor<T>> {
    let (b, _, n) = positions(x)?;
    let f = project(x, &p.w_f, b, n)?;
    let g = project(x, &p.w_g, b, n)?;
    // softmax over the attending index i, which is axis 1 of f^T g
    Ok(f.bmm(&g, true, false)?.softmax(1))
}

/// `y = alpha * w_v(sum_i beta[i, j] * h_i) + x`.
pub fn self_attention_forward<T: Float>(x: &Tensor<T>, p: &SelfAttentionParams<T>) -> Result<Tensor<T>> {
    let (b, c, n) = positions(x)?;
    if p.w_v.dim(0) != c {
        return Err(Error::ChannelMismatch { expected: p.w_v.dim(0), got: c });
    }
    let beta = attention_map(x, p)?;
    let h = project(x, &p.w_h, b, n)?;
    let o = h.bmm(&beta, false, false)?.reshape(&[b, p.w_h.dim(0), x.dim(2), x.dim(3)]);
    let v = o.conv2d(&p.w_v, 1, Padding::Same)?;
    Ok(v.mul(&p.alpha).add(x))
}

/// A self-attention block whose weights live under `prefix` in a parameter set.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    prefix: String,
    channels: usize,
    reduced: usize,
}

impl SelfAttention {
    pub fn new(prefix: &str, channels: usize, k: usize) -> Result<Self> {
        if !REDUCTIONS.contains(&k) {
            return Err(Error::InvalidConfig(format!("attention reduction k must be one of {REDUCTIONS:?}, got {k}")));
        }
        if channels % k != 0 {
            return Err(Error::DivisibilityError { channels, k });
        }
        Ok(SelfAttention {
            prefix: prefix.to_string(),
            channels,
            reduced: channels / k,
        })
    }

    pub fn reduced_channels(&self) -> usize {
        self.reduced
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    /// He-initialised projections and `alpha = 0`.
    pub fn init<T: Float>(&self, params: &mut ParamSet<T>, init: &Initializer) {
        let (c, l) = (self.channels, self.reduced);
        for part in ["w_f", "w_g", "w_h"] {
            init.conv(params, &self.name(part), c, l, 1, false);
        }
        init.conv(params, &self.name("w_v"), l, c, 1, false);
        params.insert(&self.name("alpha"), &[1, 1, 1, 1], vec![T::zero()]);
    }

    pub fn params<T: Float>(&self, params: &ParamSet<T>) -> Result<SelfAttentionParams<T>> {
        Ok(SelfAttentionParams {
            w_f: params.get(&self.name("w_f.weight"))?,
            w_g: params.get(&self.name("w_g.weight"))?,
            w_h: params.get(&self.name("w_h.weight"))?,
            w_v: params.get(&self.name("w_v.weight"))?,
            alpha: params.get(&self.name("alpha"))?,
        })
    }

    pub fn forward<T: Float>(&self, x: &Tensor<T>, params: &ParamSet<T>) -> Result<Tensor<T>> {
        self_attention_forward(x, &self.params(params)?)
    }
}

/// Weights of an upsample-attention block.
#[derive(Clone)]
pub struct UpsampleAttentionParams<T: Float = f32> {
    /// `[C, C, 3, 3]`
    pub body_kernel: Tensor<T>,
    /// `[1, C, 1, 1]`
    pub body_bias: Tensor<T>,
    /// `[1, C, 1, 1]`
    pub mask_kernel: Tensor<T>,
    /// `[1, 1, 1, 1]`
    pub mask_bias: Tensor<T>,
    pub factor: ScaleFactor,
}

/// Sigmoid mask `[B, 1, H', W']` and gated features `[B, C, H', W']`.
pub fn upsample_attention_parts<T: Float>(
    x: &Tensor<T>,
    p: &UpsampleAttentionParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let u = x.interpolate(p.factor, InterpolationMode::Nearest)?;
    let b = u
        .conv2d(&p.body_kernel, 1, Padding::Same)?
        .add(&p.body_bias)
        .leaky_relu(T::lit(LEAKY_SLOPE));
    let mask = b.conv2d(&p.mask_kernel, 1, Padding::Same)?.add(&p.mask_bias).sigmoid();
    let out = b.mul(&mask);
    Ok((mask, out))
}

/// Nearest resize, 3x3 conv with leaky ReLU, then gating by a one-channel
/// sigmoid mask computed from the features themselves.
pub fn upsample_attention_forward<T: Float>(x: &Tensor<T>, p: &UpsampleAttentionParams<T>) -> Result<Tensor<T>> {
    Ok(upsample_attention_parts(x, p)?.1)
}

#[derive(Clone, Debug)]
pub struct UpsampleAttention {
    prefix: String,
    channels: usize,
    factor: ScaleFactor,
}

impl UpsampleAttention {
    pub fn new(prefix: &str, channels: usize, factor: ScaleFactor) -> Self {
        UpsampleAttention {
            prefix: prefix.to_string(),
            channels,
            factor,
        }
    }

    pub fn factor(&self) -> ScaleFactor {
        self.factor
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init<T: Float>(&self, params: &mut ParamSet<T>, init: &Initializer) {
        init.conv(params, &self.name("body"), self.channels, self.channels, 3, true);
        init.conv(params, &self.name("mask"), self.channels, 1, 1, true);
    }

    pub fn params<T: Float>(&self, params: &ParamSet<T>) -> Result<UpsampleAttentionParams<T>> {
        Ok(UpsampleAttentionParams {
            body_kernel: params.get(&self.name("body.weight"))?,
            body_bias: params.get(&self.name("body.bias"))?,
            mask_kernel: params.get(&self.name("mask.weight"))?,
            mask_bias: params.get(&self.name("mask.bias"))?,
            factor: self.factor,
        })
    }

    pub fn forward<T: Float>(&self, x: &Tensor<T>, params: &ParamSet<T>) -> Result<Tensor<T>> {
        upsample_attention_forward(x, &self.params(params)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradients, FD_STEP};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::constant((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect(), shape)
    }

    fn random_params(rng: &mut ChaCha8Rng, c: usize, l: usize, alpha: f64) -> SelfAttentionParams<f64> {
        SelfAttentionParams {
            w_f: random(rng, &[l, c, 1, 1]),
            w_g: random(rng, &[l, c, 1, 1]),
            w_h: random(rng, &[l, c, 1, 1]),
            w_v: random(rng, &[c, l, 1, 1]),
            alpha: Tensor::constant(vec![alpha], &[1, 1, 1, 1]),
        }
    }

    /// Direct double loop over all (i, j) pairs.
    fn brute_force(x: &[f64], c: usize, n: usize, p: &SelfAttentionParams<f64>) -> Vec<f64> {
        let l = p.w_f.dim(0);
        let proj = |w: &[f64], rows: usize, cols: usize, v: &[f64], pos: usize| -> Vec<f64> {
            (0..rows).map(|r| (0..cols).map(|k| w[r * cols + k] * v[k * n + pos]).sum()).collect()
        };
        let f: Vec<Vec<f64>> = (0..n).map(|i| proj(p.w_f.data(), l, c, x, i)).collect();
        let g: Vec<Vec<f64>> = (0..n).map(|i| proj(p.w_g.data(), l, c, x, i)).collect();
        let h: Vec<Vec<f64>> = (0..n).map(|i| proj(p.w_h.data(), l, c, x, i)).collect();
        let alpha = p.alpha.item();
        let mut y = x.to_vec();
        for j in 0..n {
            let s: Vec<f64> = (0..n).map(|i| f[i].iter().zip(&g[j]).map(|(a, b)| a * b).sum()).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = s.iter().map(|v| (v - m).exp()).sum();
            let mut mixed = vec![0.0; l];
            for i in 0..n {
                let beta = (s[i] - m).exp() / z;
                for r in 0..l {
                    mixed[r] += beta * h[i][r];
                }
            }
            for ch in 0..c {
                let o: f64 = (0..l).map(|r| p.w_v.data()[ch * l + r] * mixed[r]).sum();
                y[ch * n + j] += alpha * o;
            }
        }
        y
    }

    #[test]
    fn two_position_example() {
        let x = Tensor::constant(vec![1.0f64, 2.0], &[1, 1, 1, 2]);
        let one = || Tensor::constant(vec![1.0], &[1, 1, 1, 1]);
        let p = SelfAttentionParams {
            w_f: one(),
            w_g: one(),
            w_h: one(),
            w_v: one(),
            alpha: one(),
        };
        let y = self_attention_forward(&x, &p).unwrap();
        let e = std::f64::consts::E;
        let o0 = (e + 2.0 * e * e) / (e + e * e);
        let o1 = (e * e + 2.0 * e.powi(4)) / (e * e + e.powi(4));
        assert!((o0 - 1.73106).abs() < 1e-5 && (o1 - 1.88079).abs() < 1e-5);
        assert!((y.data()[0] - (1.0 + o0)).abs() < 1e-12);
        assert!((y.data()[1] - (2.0 + o1)).abs() < 1e-12);
        assert_eq!(brute_force(x.data(), 1, 2, &p), y.to_vec());
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (c, l, h, w) in [(4, 2, 3, 5), (8, 1, 8, 8), (2, 2, 1, 7)] {
            let x = random(&mut rng, &[1, c, h, w]);
            let p = random_params(&mut rng, c, l, 0.7);
            let y = self_attention_forward(&x, &p).unwrap();
            let oracle = brute_force(x.data(), c, h * w, &p);
            for (a, b) in y.data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn zero_alpha_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let block = SelfAttention::new("sa", 8, 8).unwrap();
        let mut ps = ParamSet::<f32>::new();
        block.init(&mut ps, &Initializer::new(1));
        for _ in 0..10 {
            let x: Tensor<f32> = random(&mut rng, &[2, 8, 5, 6]).cast();
            assert_eq!(block.forward(&x, &ps).unwrap().data(), x.data());
        }
    }

    #[test]
    fn columns_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[2, 4, 4, 4]);
        let beta = attention_map(&x, &random_params(&mut rng, 4, 2, 1.0)).unwrap();
        let sums = beta.sum_axis_keep(1);
        assert!(sums.data().iter().all(|s| (s - 1.0).abs() < 1e-6));
        assert!(beta.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn guards() {
        let x = Tensor::<f32>::zeros(&[1, 8, 70, 70]);
        let block = SelfAttention::new("sa", 8, 8).unwrap();
        let mut ps = ParamSet::new();
        block.init(&mut ps, &Initializer::new(0));
        assert!(matches!(block.forward(&x, &ps), Err(Error::AttentionTooLarge(4900))));
        assert!(matches!(SelfAttention::new("sa", 12, 8), Err(Error::DivisibilityError { channels: 12, k: 8 })));
        assert!(SelfAttention::new("sa", 12, 3).is_err());
    }

    fn zero_mask(c: usize, factor: ScaleFactor, identity_body: bool) -> UpsampleAttentionParams<f64> {
        let mut body = vec![0.0; c * c * 9];
        if identity_body {
            for ch in 0..c {
                body[(ch * c + ch) * 9 + 4] = 1.0;
            }
        }
        UpsampleAttentionParams {
            body_kernel: Tensor::constant(body, &[c, c, 3, 3]),
            body_bias: Tensor::zeros(&[1, c, 1, 1]),
            mask_kernel: Tensor::zeros(&[1, c, 1, 1]),
            mask_bias: Tensor::zeros(&[1, 1, 1, 1]),
            factor,
        }
    }

    #[test]
    fn upsample_examples() {
        let x = Tensor::constant(vec![2.0f64], &[1, 1, 1, 1]);
        let y = upsample_attention_forward(&x, &zero_mask(1, ScaleFactor::integer(2), true)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1.0; 4]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[1, 3, 4, 4]);
        let mut p = zero_mask(3, ScaleFactor::integer(1), false);
        p.body_kernel = random(&mut rng, &[3, 3, 3, 3]);
        let (mask, out) = upsample_attention_parts(&x, &p).unwrap();
        assert!(mask.data().iter().all(|&m| m == 0.5));
        let b = x.conv2d(&p.body_kernel, 1, Padding::Same).unwrap().leaky_relu(0.2);
        for (o, v) in out.data().iter().zip(b.data()) {
            assert_eq!(*o, 0.5 * v);
        }
    }

    #[test]
    fn mask_is_open_interval_and_output_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random(&mut rng, &[2, 2, 3, 3]);
        let p = UpsampleAttentionParams {
            body_kernel: random(&mut rng, &[2, 2, 3, 3]),
            body_bias: random(&mut rng, &[1, 2, 1, 1]),
            mask_kernel: random(&mut rng, &[1, 2, 1, 1]).mul_scalar(5.0),
            mask_bias: random(&mut rng, &[1, 1, 1, 1]),
            factor: ScaleFactor::integer(2),
        };
        let (mask, out) = upsample_attention_parts(&x, &p).unwrap();
        assert!(mask.data().iter().all(|&m| m > 0.0 && m < 1.0));
        let b = x
            .interpolate(p.factor, InterpolationMode::Nearest)
            .unwrap()
            .conv2d(&p.body_kernel, 1, Padding::Same)
            .unwrap()
            .add(&p.body_bias)
            .leaky_relu(0.2);
        let bound = b.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(out.data().iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_params(&mut rng, 4, 2, 0.8);
        let x = random(&mut rng, &[2, 4, 2, 3]);
        let inputs = [x, p.w_f, p.w_g, p.w_h, p.w_v, p.alpha];
        let report = check_gradients(
            &inputs,
            |t| {
                let q = SelfAttentionParams {
                    w_f: t[1].clone(),
                    w_g: t[2].clone(),
                    w_h: t[3].clone(),
                    w_v: t[4].clone(),
                    alpha: t[5].clone(),
                };
                Ok(self_attention_forward(&t[0], &q)?.square().sum())
            },
            FD_STEP,
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-4, "{report:?}");

        let inputs = [
            random(&mut rng, &[1, 2, 2, 2]),
            random(&mut rng, &[2, 2, 3, 3]),
            random(&mut rng, &[1, 2, 1, 1]),
            random(&mut rng, &[1, 2, 1, 1]),
            random(&mut rng, &[1, 1, 1, 1]),
        ];
        let report = check_gradients(
            &inputs,
            |t| {
                let q = UpsampleAttentionParams {
                    body_kernel: t[1].clone(),
                    body_bias: t[2].clone(),
                    mask_kernel: t[3].clone(),
                    mask_bias: t[4].clone(),
                    factor: ScaleFactor::integer(2),
                };
                Ok(upsample_attention_forward(&t[0], &q)?.square().sum())
            },
            FD_STEP,
        )
        .unwrap();
        assert!(report.max_rel_error() <= 1e-4, "{report:?}");
    }
}
