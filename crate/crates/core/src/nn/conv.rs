//! 2-D cross-correlation and its two adjoints.
//!
//! The three operations are partial contractions of the same trilinear form
//! `sum y[b,o,i,j] * w[o,c,p,q] * x[b,c,i*s+p-pad,j*s+q-pad]`, so the backward
//! rule of each one is expressed with the other two. That keeps convolution
//! differentiable to any order.

use super::float::Float;
use super::tensor::{Backward, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2`; output size `ceil(n / stride)`.
    Same,
    /// No padding.
    Valid,
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    ci: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.ci * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    fn macs(&self) -> usize {
        self.batch * self.co * self.patch() * self.ho * self.wo
    }
}

fn im2col<T: Float>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let npos = g.ho * g.wo;
    for c in 0..g.ci {
        for p in 0..g.kh {
            for q in 0..g.kw {
                let row = (c * g.kh + p) * g.kw + q;
                let dst = &mut cols[row * npos..(row + 1) * npos];
                for i in 0..g.ho {
                    let y = (i * g.stride + p) as isize - g.ph as isize;
                    let line = &mut dst[i * g.wo..(i + 1) * g.wo];
                    if y < 0 || y >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + y as usize) * g.w..(c * g.h + y as usize + 1) * g.w];
                    for (j, v) in line.iter_mut().enumerate() {
                        let xx = (j * g.stride + q) as isize - g.pw as isize;
                        *v = if xx < 0 || xx >= g.w as isize {
                            T::zero()
                        } else {
                            src[xx as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let npos = g.ho * g.wo;
    for c in 0..g.ci {
        for p in 0..g.kh {
            for q in 0..g.kw {
                let row = (c * g.kh + p) * g.kw + q;
                let src = &cols[row * npos..(row + 1) * npos];
                for i in 0..g.ho {
                    let y = (i * g.stride + p) as isize - g.ph as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + y as usize) * g.w..(c * g.h + y as usize + 1) * g.w];
                    for j in 0..g.wo {
                        let xx = (j * g.stride + q) as isize - g.pw as isize;
                        if xx >= 0 && (xx as usize) < g.w {
                            dst[xx as usize] += src[i * g.wo + j];
                        }
                    }
                }
            }
        }
    }
}

fn forward_conv<T: Float>(x: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    super::flops::record(2 * g.macs());
    let (npos, k) = (g.ho * g.wo, g.patch());
    let mut out = vec![T::zero(); g.batch * g.co * npos];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * npos] };
    for b in 0..g.batch {
        let xb = &x[b * g.ci * g.h * g.w..(b + 1) * g.ci * g.h * g.w];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        T::gemm(
            g.co,
            k,
            npos,
            T::one(),
            w,
            (k as isize, 1),
            cols,
            (npos as isize, 1),
            T::zero(),
            &mut out[b * g.co * npos..(b + 1) * g.co * npos],
            (npos as isize, 1),
        );
    }
    out
}

fn input_grad<T: Float>(gy: &[T], w: &[T], g: &Geometry) -> Vec<T> {
    super::flops::record(2 * g.macs());
    let (npos, k) = (g.ho * g.wo, g.patch());
    let plane = g.ci * g.h * g.w;
    let mut out = vec![T::zero(); g.batch * plane];
    let mut cols = vec![T::zero(); k * npos];
    for b in 0..g.batch {
        let gb = &gy[b * g.co * npos..(b + 1) * g.co * npos];
        let xb = &mut out[b * plane..(b + 1) * plane];
        let target: &mut [T] = if g.is_pointwise() { xb } else { &mut cols };
        T::gemm(
            k,
            g.co,
            npos,
            T::one(),
            w,
            (1, k as isize),
            gb,
            (npos as isize, 1),
            T::zero(),
            target,
            (npos as isize, 1),
        );
        if !g.is_pointwise() {
            col2im(&cols, g, &mut out[b * plane..(b + 1) * plane]);
        }
    }
    out
}

fn weight_grad<T: Float>(x: &[T], gy: &[T], g: &Geometry) -> Vec<T> {
    super::flops::record(2 * g.macs());
    let (npos, k) = (g.ho * g.wo, g.patch());
    let mut out = vec![T::zero(); g.co * k];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); k * npos] };
    for b in 0..g.batch {
        let xb = &x[b * g.ci * g.h * g.w..(b + 1) * g.ci * g.h * g.w];
        let cols: &[T] = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        T::gemm(
            g.co,
            npos,
            k,
            T::one(),
            &gy[b * g.co * npos..(b + 1) * g.co * npos],
            (npos as isize, 1),
            cols,
            (1, npos as isize),
            T::one(),
            &mut out,
            (k as isize, 1),
        );
    }
    out
}

struct Conv(Geometry);
struct ConvInputGrad(Geometry);
struct ConvWeightGrad(Geometry);

impl<T: Float> Backward<T> for Conv {
    fn name(&self) -> &'static str {
        "conv2d"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, gy: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, w) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad().then(|| conv_input_grad(gy, w, self.0)),
            w.requires_grad().then(|| conv_weight_grad(x, gy, self.0)),
        ]
    }
}

impl<T: Float> Backward<T> for ConvInputGrad {
    fn name(&self) -> &'static str {
        "conv2d_input_grad"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, h: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (gy, w) = (&inputs[0], &inputs[1]);
        vec![
            gy.requires_grad().then(|| conv_raw(h, w, self.0)),
            w.requires_grad().then(|| conv_weight_grad(h, gy, self.0)),
        ]
    }
}

impl<T: Float> Backward<T> for ConvWeightGrad {
    fn name(&self) -> &'static str {
        "conv2d_weight_grad"
    }
    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, h: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (x, gy) = (&inputs[0], &inputs[1]);
        vec![
            x.requires_grad().then(|| conv_input_grad(gy, h, self.0)),
            gy.requires_grad().then(|| conv_raw(x, h, self.0)),
        ]
    }
}

fn conv_raw<T: Float>(x: &Tensor<T>, w: &Tensor<T>, g: Geometry) -> Tensor<T> {
    let out = forward_conv(x.data(), w.data(), &g);
    Tensor::from_op(
        out,
        vec![g.batch, g.co, g.ho, g.wo],
        vec![x.clone(), w.clone()],
        Conv(g),
    )
}

fn conv_input_grad<T: Float>(gy: &Tensor<T>, w: &Tensor<T>, g: Geometry) -> Tensor<T> {
    let out = input_grad(gy.data(), w.data(), &g);
    Tensor::from_op(
        out,
        vec![g.batch, g.ci, g.h, g.w],
        vec![gy.clone(), w.clone()],
        ConvInputGrad(g),
    )
}

fn conv_weight_grad<T: Float>(x: &Tensor<T>, gy: &Tensor<T>, g: Geometry) -> Tensor<T> {
    let out = weight_grad(x.data(), gy.data(), &g);
    Tensor::from_op(
        out,
        vec![g.co, g.ci, g.kh, g.kw],
        vec![x.clone(), gy.clone()],
        ConvWeightGrad(g),
    )
}

impl<T: Float> Tensor<T> {
    /// Cross-correlation of `[B, Ci, H, W]` with a `[Co, Ci, kh, kw]` kernel.
    pub fn conv2d(&self, kernel: &Tensor<T>, stride: usize, padding: Padding) -> Result<Tensor<T>> {
        if self.rank() != 4 || kernel.rank() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d expects [B,C,H,W] input and [Co,Ci,kh,kw] kernel, got {:?} and {:?}",
                self.shape(),
                kernel.shape()
            )));
        }
        let (batch, ci, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (co, kci, kh, kw) = (kernel.dim(0), kernel.dim(1), kernel.dim(2), kernel.dim(3));
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::NonOddKernel(kh, kw));
        }
        if kci != ci {
            return Err(Error::ChannelMismatch { expected: kci, got: ci });
        }
        assert!(stride > 0, "stride must be positive");
        let (ph, pw) = match padding {
            Padding::Same => (kh / 2, kw / 2),
            Padding::Valid => (0, 0),
        };
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(Error::InputTooSmall(format!(
                "{h}x{w} input for a {kh}x{kw} kernel without padding"
            )));
        }
        let ho = (h + 2 * ph - kh) / stride + 1;
        let wo = (w + 2 * pw - kw) / stride + 1;
        let g = Geometry {
            batch,
            ci,
            co,
            kh,
            kw,
            stride,
            ph,
            pw,
            h,
            w,
            ho,
            wo,
        };
        Ok(conv_raw(self, kernel, g))
    }
}
