//! Level-1 2-D Haar transform.
//!
//! For every 2x2 block
//!
//! ```text
//! A B
//! C D
//! ```
//!
//! the forward transform produces
//!
//! ```text
//! ll = (A + B + C + D) / 4
//! lh = (A - B + C - D) / 4    column differences
//! hl = (A + B - C - D) / 4    row differences
//! hh = (A - B - C + D) / 4    diagonal
//! ```
//!
//! and the inverse uses unit coefficients, `A = ll + lh + hl + hh`,
//! `B = ll - lh + hl - hh`, `C = ll + lh - hl - hh`, `D = ll - lh - hl + hh`.
//! The 1/4 scaling on the forward side is what makes the unit-coefficient
//! inverse exact. The orthonormal alternative scales both sides by 1/2.

use crate::error::{Error, Result};
use crate::image::{Image, RangeTag};
use crate::nn::{Backward, Float, Tensor};

/// Scaling applied by the forward transform.
pub const FORWARD_NORM: f64 = 0.25;

/// Subband names in channel order.
pub const BAND_NAMES: [&str; 4] = ["LL", "LH", "HL", "HH"];

/// One coefficient array.
#[derive(Clone, Debug, PartialEq)]
pub struct Band<T: Float = f32> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Float> Band<T> {
    pub fn new(height: usize, width: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), height * width, "band data does not match {height}x{width}");
        Band { height, width, data }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Band::new(height, width, vec![T::zero(); height * width])
    }
}

/// The four level-1 components of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct SubbandSet<T: Float = f32> {
    pub ll: Band<T>,
    pub lh: Band<T>,
    pub hl: Band<T>,
    pub hh: Band<T>,
    pub parent_shape: (usize, usize),
    /// Range tag of the image the bands came from, reused on reconstruction.
    pub range: RangeTag,
}

impl<T: Float> SubbandSet<T> {
    pub fn bands(&self) -> [&Band<T>; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    fn check(&self) -> Result<(usize, usize)> {
        let (h, w) = (self.ll.height, self.ll.width);
        for (band, name) in self.bands().into_iter().zip(BAND_NAMES) {
            if (band.height, band.width) != (h, w) || band.data.len() != h * w {
                return Err(Error::ShapeMismatch(format!(
                    "subband {name} is {}x{} with {} values, LL is {h}x{w}",
                    band.height,
                    band.width,
                    band.data.len()
                )));
            }
        }
        if self.parent_shape != (2 * h, 2 * w) {
            return Err(Error::ShapeMismatch(format!(
                "parent shape {:?} does not match {h}x{w} subbands",
                self.parent_shape
            )));
        }
        Ok((h, w))
    }

    /// Stacks the bands into a `[1, 4, h, w]` tensor.
    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        let (h, w) = self.check()?;
        let mut data = Vec::with_capacity(4 * h * w);
        for band in self.bands() {
            data.extend_from_slice(&band.data);
        }
        Ok(Tensor::constant(data, &[1, 4, h, w]))
    }

    /// Inverse of [`SubbandSet::to_tensor`] for item `index` of a
    /// `[B, 4, h, w]` tensor.
    pub fn from_tensor(t: &Tensor<T>, index: usize, range: RangeTag) -> Result<Self> {
        if t.rank() != 4 || t.dim(1) != 4 || index >= t.dim(0) {
            return Err(Error::ShapeMismatch(format!(
                "expected [B,4,h,w] with B > {index}, got {:?}",
                t.shape()
            )));
        }
        let (h, w) = (t.dim(2), t.dim(3));
        let n = h * w;
        let base = &t.data()[index * 4 * n..(index + 1) * 4 * n];
        let band = |k: usize| Band::new(h, w, base[k * n..(k + 1) * n].to_vec());
        Ok(SubbandSet {
            ll: band(0),
            lh: band(1),
            hl: band(2),
            hh: band(3),
            parent_shape: (2 * h, 2 * w),
            range,
        })
    }
}

/// Forward transform of one `h x w` plane into four `h/2 x w/2` outputs.
pub fn dwt_plane<T: Float>(src: &[T], h: usize, w: usize, out: [&mut [T]; 4]) {
    let (h2, w2) = (h / 2, w / 2);
    let q = T::lit(FORWARD_NORM);
    let [ll, lh, hl, hh] = out;
    for i in 0..h2 {
        let top = &src[2 * i * w..(2 * i + 1) * w];
        let bot = &src[(2 * i + 1) * w..(2 * i + 2) * w];
        for j in 0..w2 {
            let (a, b, c, d) = (top[2 * j], top[2 * j + 1], bot[2 * j], bot[2 * j + 1]);
            let (s1, s2, d1, d2) = (a + b, c + d, a - b, c - d);
            let k = i * w2 + j;
            ll[k] = (s1 + s2) * q;
            lh[k] = (d1 + d2) * q;
            hl[k] = (s1 - s2) * q;
            hh[k] = (d1 - d2) * q;
        }
    }
}

/// Inverse transform of four `h2 x w2` planes into one `2*h2 x 2*w2` plane.
pub fn idwt_plane<T: Float>(bands: [&[T]; 4], h2: usize, w2: usize, out: &mut [T]) {
    let [ll, lh, hl, hh] = bands;
    let w = 2 * w2;
    for i in 0..h2 {
        for j in 0..w2 {
            let k = i * w2 + j;
            let (p, m) = (ll[k] + hl[k], ll[k] - hl[k]);
            let (u, v) = (lh[k] + hh[k], lh[k] - hh[k]);
            out[2 * i * w + 2 * j] = p + u;
            out[2 * i * w + 2 * j + 1] = p - u;
            out[(2 * i + 1) * w + 2 * j] = m + v;
            out[(2 * i + 1) * w + 2 * j + 1] = m - v;
        }
    }
}

fn require_even(h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 {
        return Err(Error::OddDimension { what: "height", value: h });
    }
    if w % 2 != 0 {
        return Err(Error::OddDimension { what: "width", value: w });
    }
    Ok(())
}

pub fn dwt2_haar<T: Float>(image: &Image<T>) -> Result<SubbandSet<T>> {
    let (h, w) = image.shape();
    require_even(h, w)?;
    let (h2, w2) = (h / 2, w / 2);
    let mut bands: [Band<T>; 4] = std::array::from_fn(|_| Band::zeros(h2, w2));
    {
        let [a, b, c, d] = &mut bands;
        dwt_plane(image.pixels(), h, w, [&mut a.data, &mut b.data, &mut c.data, &mut d.data]);
    }
    let [ll, lh, hl, hh] = bands;
    Ok(SubbandSet {
        ll,
        lh,
        hl,
        hh,
        parent_shape: (h, w),
        range: image.range(),
    })
}

/// Exact inverse of [`dwt2_haar`]. Values are clamped into the subband set's
/// range tag, which only matters when the bands did not come from a valid
/// image (for example, predicted bands).
pub fn idwt2_haar<T: Float>(subbands: &SubbandSet<T>) -> Result<Image<T>> {
    let (h2, w2) = subbands.check()?;
    let mut out = vec![T::zero(); 4 * h2 * w2];
    idwt_plane(
        [&subbands.ll.data, &subbands.lh.data, &subbands.hl.data, &subbands.hh.data],
        h2,
        w2,
        &mut out,
    );
    Image::clamped(2 * h2, 2 * w2, out, subbands.range)
}

struct HaarDwt;
struct HaarIdwt;

impl<T: Float> Backward<T> for HaarDwt {
    fn name(&self) -> &'static str {
        "haar_dwt"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let inv = g.idwt_raw().mul_scalar(T::lit(FORWARD_NORM));
        vec![Some(inv)]
    }
}

impl<T: Float> Backward<T> for HaarIdwt {
    fn name(&self) -> &'static str {
        "haar_idwt"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let fwd = g.dwt_raw().mul_scalar(T::lit(1.0 / FORWARD_NORM));
        vec![Some(fwd)]
    }
}

impl<T: Float> Tensor<T> {
    fn dwt_raw(&self) -> Tensor<T> {
        let (b, c, h, w) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let (h2, w2) = (h / 2, w / 2);
        let n = h2 * w2;
        let mut out = vec![T::zero(); b * 4 * c * n];
        for p in 0..b * c {
            let src = &self.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * 4 * n..(p + 1) * 4 * n];
            let (ll, rest) = dst.split_at_mut(n);
            let (lh, rest) = rest.split_at_mut(n);
            let (hl, hh) = rest.split_at_mut(n);
            dwt_plane(src, h, w, [ll, lh, hl, hh]);
        }
        Tensor::from_op(out, vec![b, 4 * c, h2, w2], vec![self.clone()], HaarDwt)
    }

    fn idwt_raw(&self) -> Tensor<T> {
        let (b, c4, h2, w2) = (self.dim(0), self.dim(1), self.dim(2), self.dim(3));
        let n = h2 * w2;
        let mut out = vec![T::zero(); b * c4 * n];
        for p in 0..b * c4 / 4 {
            let src = &self.data()[p * 4 * n..(p + 1) * 4 * n];
            let bands = [&src[..n], &src[n..2 * n], &src[2 * n..3 * n], &src[3 * n..]];
            idwt_plane(bands, h2, w2, &mut out[p * 4 * n..(p + 1) * 4 * n]);
        }
        Tensor::from_op(out, vec![b, c4 / 4, 2 * h2, 2 * w2], vec![self.clone()], HaarIdwt)
    }

    /// Differentiable forward transform: `[B, C, H, W]` to `[B, 4C, H/2, W/2]`,
    /// with the four subbands of channel `c` at channels `4c..4c+4`.
    pub fn haar_dwt(&self) -> Result<Tensor<T>> {
        if self.rank() != 4 {
            return Err(Error::ShapeMismatch(format!("haar_dwt expects [B,C,H,W], got {:?}", self.shape())));
        }
        require_even(self.dim(2), self.dim(3))?;
        Ok(self.dwt_raw())
    }

    /// Differentiable inverse of [`Tensor::haar_dwt`].
    pub fn haar_idwt(&self) -> Result<Tensor<T>> {
        if self.rank() != 4 || self.dim(1) % 4 != 0 {
            return Err(Error::ShapeMismatch(format!(
                "haar_idwt expects [B,4C,h,w], got {:?}",
                self.shape()
            )));
        }
        Ok(self.idwt_raw())
    }
}
