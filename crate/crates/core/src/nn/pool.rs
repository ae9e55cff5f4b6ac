use super::float::Float;
use super::tensor::{Backward, Tensor};
use crate::error::{Error, Result};

fn dims4<T: Float>(x: &Tensor<T>, op: &str) -> (usize, usize, usize, usize) {
    assert_eq!(x.rank(), 4, "{op} expects a [B,C,H,W] tensor, got {:?}", x.shape());
    (x.dim(0), x.dim(1), x.dim(2), x.dim(3))
}

struct UpsampleNearest(usize);
struct BlockSum(usize);
struct MaxPool {
    argmax: Tensor<f32>,
}

impl<T: Float> Backward<T> for UpsampleNearest {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.block_sum(self.0))]
    }
}

impl<T: Float> Backward<T> for BlockSum {
    fn name(&self) -> &'static str {
        "block_sum"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.upsample_nearest(self.0))]
    }
}

impl<T: Float> Backward<T> for MaxPool {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let mask: Tensor<T> = self.argmax.cast();
        vec![Some(g.upsample_nearest(2).mask_mul(&mask))]
    }
}

impl<T: Float> Tensor<T> {
    /// Repeats every pixel into a `factor x factor` block.
    pub fn upsample_nearest(&self, factor: usize) -> Tensor<T> {
        let (b, c, h, w) = dims4(self, "upsample_nearest");
        let (ho, wo) = (h * factor, w * factor);
        let src = self.data();
        let mut out = vec![T::zero(); b * c * ho * wo];
        for plane in 0..b * c {
            for i in 0..ho {
                let row = &src[(plane * h + i / factor) * w..(plane * h + i / factor + 1) * w];
                let dst = &mut out[(plane * ho + i) * wo..(plane * ho + i + 1) * wo];
                for (j, v) in dst.iter_mut().enumerate() {
                    *v = row[j / factor];
                }
            }
        }
        Tensor::from_op(out, vec![b, c, ho, wo], vec![self.clone()], UpsampleNearest(factor))
    }

    /// Sums every `factor x factor` block; adjoint of [`Tensor::upsample_nearest`].
    pub fn block_sum(&self, factor: usize) -> Tensor<T> {
        let (b, c, h, w) = dims4(self, "block_sum");
        assert!(h % factor == 0 && w % factor == 0, "block_sum of {h}x{w} by {factor}");
        let (ho, wo) = (h / factor, w / factor);
        let src = self.data();
        let mut out = vec![T::zero(); b * c * ho * wo];
        for plane in 0..b * c {
            for i in 0..h {
                let row = &src[(plane * h + i) * w..(plane * h + i + 1) * w];
                let dst = &mut out[(plane * ho + i / factor) * wo..(plane * ho + i / factor + 1) * wo];
                for (j, &v) in row.iter().enumerate() {
                    dst[j / factor] += v;
                }
            }
        }
        Tensor::from_op(out, vec![b, c, ho, wo], vec![self.clone()], BlockSum(factor))
    }

    /// 2x2 max pooling with stride 2. Ties go to the first position in
    /// row-major order.
    pub fn max_pool2d(&self) -> Result<Tensor<T>> {
        let (b, c, h, w) = dims4(self, "max_pool2d");
        if h % 2 != 0 {
            return Err(Error::OddDimension { what: "height", value: h });
        }
        if w % 2 != 0 {
            return Err(Error::OddDimension { what: "width", value: w });
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.data();
        let mut out = vec![T::zero(); b * c * ho * wo];
        let mut argmax = vec![0.0f32; src.len()];
        for plane in 0..b * c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = (plane * h + 2 * i) * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let at = (plane * h + 2 * i + di) * w + 2 * j + dj;
                        if src[at] > src[best] {
                            best = at;
                        }
                    }
                    out[(plane * ho + i) * wo + j] = src[best];
                    argmax[best] = 1.0;
                }
            }
        }
        Ok(Tensor::from_op(
            out,
            vec![b, c, ho, wo],
            vec![self.clone()],
            MaxPool {
                argmax: Tensor::constant(argmax, &[b, c, h, w]),
            },
        ))
    }
}
