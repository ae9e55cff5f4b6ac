//! Separable spatial resampling: nearest neighbour and Catmull-Rom bicubic.
//!
//! Both modes are linear, so a resize is `M_h * X * M_w^T` per channel plane
//! with fixed weight matrices, and its adjoint uses the transposed matrices.

use std::fmt;
use std::rc::Rc;

use super::float::Float;
use super::tensor::{Backward, Tensor};
use crate::error::{Error, Result};

/// Cubic convolution coefficient of the Catmull-Rom kernel.
pub const CUBIC_A: f64 = -0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InterpolationMode {
    Nearest,
    Bicubic,
}

/// Positive rational resize factor, kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ScaleFactor {
    num: usize,
    den: usize,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl ScaleFactor {
    pub fn new(num: usize, den: usize) -> Self {
        assert!(num > 0 && den > 0, "scale factor must be positive");
        let g = gcd(num, den);
        ScaleFactor {
            num: num / g,
            den: den / g,
        }
    }

    pub fn integer(n: usize) -> Self {
        Self::new(n, 1)
    }

    pub fn num(&self) -> usize {
        self.num
    }

    pub fn den(&self) -> usize {
        self.den
    }

    pub fn is_identity(&self) -> bool {
        self.num == self.den
    }

    /// Output size for an input of `size`, if it is integral.
    pub fn apply(&self, size: usize) -> Result<usize> {
        let scaled = size * self.num;
        if scaled % self.den != 0 || scaled == 0 {
            return Err(Error::NonIntegralOutput {
                size,
                num: self.num,
                den: self.den,
            });
        }
        Ok(scaled / self.den)
    }
}

impl fmt::Display for ScaleFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

fn cubic(t: f64) -> f64 {
    let a = CUBIC_A;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Row-major `out_len x in_len` resampling matrix.
///
/// Pixel centres are aligned (`src = (dst + 0.5) * in / out - 0.5`). When
/// shrinking, the bicubic kernel is widened by the shrink ratio so the
/// result is antialiased. Borders replicate the edge pixel. Every row sums
/// to one, so constants are preserved.
pub fn resample_weights(in_len: usize, out_len: usize, mode: InterpolationMode) -> Vec<f64> {
    let mut m = vec![0.0; out_len * in_len];
    let ratio = in_len as f64 / out_len as f64;
    for i in 0..out_len {
        let row = &mut m[i * in_len..(i + 1) * in_len];
        match mode {
            InterpolationMode::Nearest => {
                let src = ((i * in_len) / out_len).min(in_len - 1);
                row[src] = 1.0;
            }
            InterpolationMode::Bicubic => {
                let center = (i as f64 + 0.5) * ratio - 0.5;
                let widen = ratio.max(1.0);
                let support = 2.0 * widen;
                let lo = (center - support).floor() as isize;
                let hi = (center + support).ceil() as isize;
                let mut total = 0.0;
                for k in lo..=hi {
                    let w = cubic((center - k as f64) / widen);
                    if w == 0.0 {
                        continue;
                    }
                    let idx = k.clamp(0, in_len as isize - 1) as usize;
                    row[idx] += w;
                    total += w;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
        }
    }
    m
}

fn transpose(m: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; m.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = m[r * cols + c];
        }
    }
    t
}

/// Applies `mh` (`oh x h`) and `mw` (`ow x w`) to every plane of a
/// `planes x h x w` buffer.
fn apply_separable<T: Float>(src: &[T], planes: usize, h: usize, w: usize, mh: &[T], oh: usize, mw: &[T], ow: usize) -> Vec<T> {
    let mut tmp = vec![T::zero(); h * ow];
    let mut out = vec![T::zero(); planes * oh * ow];
    for p in 0..planes {
        let x = &src[p * h * w..(p + 1) * h * w];
        // tmp = x * mw^T
        T::gemm(h, w, ow, T::one(), x, (w as isize, 1), mw, (1, w as isize), T::zero(), &mut tmp, (ow as isize, 1));
        T::gemm(
            oh,
            h,
            ow,
            T::one(),
            mh,
            (h as isize, 1),
            &tmp,
            (ow as isize, 1),
            T::zero(),
            &mut out[p * oh * ow..(p + 1) * oh * ow],
            (ow as isize, 1),
        );
    }
    out
}

/// Resizes a single `h x w` plane without recording a graph.
pub fn resize_plane(src: &[f32], h: usize, w: usize, oh: usize, ow: usize, mode: InterpolationMode) -> Vec<f32> {
    if (h, w) == (oh, ow) && mode == InterpolationMode::Bicubic {
        return src.to_vec();
    }
    let src64: Vec<f64> = src.iter().map(|&v| v as f64).collect();
    let mh = resample_weights(h, oh, mode);
    let mw = resample_weights(w, ow, mode);
    apply_separable(&src64, 1, h, w, &mh, oh, &mw, ow)
        .into_iter()
        .map(|v| v as f32)
        .collect()
}

#[derive(Clone)]
struct Weights {
    mh: Rc<Vec<f64>>,
    mw: Rc<Vec<f64>>,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Weights {
    fn transposed(&self) -> Weights {
        Weights {
            mh: Rc::new(transpose(&self.mh, self.oh, self.h)),
            mw: Rc::new(transpose(&self.mw, self.ow, self.w)),
            h: self.oh,
            w: self.ow,
            oh: self.h,
            ow: self.w,
        }
    }
}

struct Resample(Weights);

impl<T: Float> Backward<T> for Resample {
    fn name(&self) -> &'static str {
        "resample"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.resample(self.0.transposed()))]
    }
}

impl<T: Float> Tensor<T> {
    fn resample(&self, wts: Weights) -> Tensor<T> {
        let (b, c) = (self.dim(0), self.dim(1));
        let mh: Vec<T> = wts.mh.iter().map(|&v| T::lit(v)).collect();
        let mw: Vec<T> = wts.mw.iter().map(|&v| T::lit(v)).collect();
        let out = apply_separable(self.data(), b * c, wts.h, wts.w, &mh, wts.oh, &mw, wts.ow);
        let shape = vec![b, c, wts.oh, wts.ow];
        Tensor::from_op(out, shape, vec![self.clone()], Resample(wts))
    }

    /// Spatial resize of a `[B, C, H, W]` tensor by a rational factor.
    pub fn interpolate(&self, factor: ScaleFactor, mode: InterpolationMode) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "interpolate expects [B,C,H,W], got {:?}",
                self.shape()
            )));
        }
        let (h, w) = (self.dim(2), self.dim(3));
        let (oh, ow) = (factor.apply(h)?, factor.apply(w)?);
        if factor.is_identity() {
            return Ok(self.clone());
        }
        if mode == InterpolationMode::Nearest && factor.den() == 1 {
            return Ok(self.upsample_nearest(factor.num()));
        }
        Ok(self.resample(Weights {
            mh: Rc::new(resample_weights(h, oh, mode)),
            mw: Rc::new(resample_weights(w, ow, mode)),
            h,
            w,
            oh,
            ow,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catmull_rom_kernel_values() {
        assert_eq!(cubic(0.0), 1.0);
        assert_eq!(cubic(1.0), 0.0);
        assert_eq!(cubic(2.0), 0.0);
        assert!((cubic(0.5) - 0.5625).abs() < 1e-12);
        assert!((cubic(1.5) + 0.0625).abs() < 1e-12);
    }

    #[test]
    fn rows_sum_to_one() {
        for (i, o) in [(8, 16), (16, 8), (7, 3), (5, 5), (28, 56)] {
            let m = resample_weights(i, o, InterpolationMode::Bicubic);
            for r in 0..o {
                let s: f64 = m[r * i..(r + 1) * i].iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let x = Tensor::constant(vec![2.0f64], &[1, 1, 1, 1]);
        let y = x.interpolate(ScaleFactor::integer(2), InterpolationMode::Nearest).unwrap();
        assert_eq!(y.data(), &[2.0; 4]);

        let c = Tensor::full(&[1, 1, 6, 6], 0.3f64);
        for f in [ScaleFactor::integer(2), ScaleFactor::new(1, 2), ScaleFactor::new(2, 3), ScaleFactor::integer(3)] {
            let y = c.interpolate(f, InterpolationMode::Bicubic).unwrap();
            assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-12));
        }

        let r = Tensor::constant((0..16).map(|v| (v * v) as f64).collect(), &[1, 1, 4, 4]);
        let weights = resample_weights(4, 4, InterpolationMode::Bicubic);
        let same = Tensor::constant(r.to_vec(), &[1, 1, 4, 4]).resample(Weights {
            mh: Rc::new(weights.clone()),
            mw: Rc::new(weights),
            h: 4,
            w: 4,
            oh: 4,
            ow: 4,
        });
        for (a, b) in same.data().iter().zip(r.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn non_integral_output_is_rejected() {
        let x = Tensor::<f32>::zeros(&[1, 1, 5, 4]);
        let err = x.interpolate(ScaleFactor::new(1, 2), InterpolationMode::Bicubic).unwrap_err();
        assert!(matches!(err, Error::NonIntegralOutput { size: 5, num: 1, den: 2 }));
    }
}
