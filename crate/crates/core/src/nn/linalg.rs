use super::float::Float;
use super::tensor::{Backward, Tensor};
use crate::error::{Error, Result};

struct Bmm {
    ta: bool,
    tb: bool,
}

impl<T: Float> Backward<T> for Bmm {
    fn name(&self) -> &'static str {
        "bmm"
    }

    fn backward(&self, inputs: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let call = |x: &Tensor<T>, y: &Tensor<T>, tx, ty| x.bmm(y, tx, ty).expect("bmm backward shapes");
        // gradients of the stored (possibly transposed) operands
        let (ga, gb) = match (self.ta, self.tb) {
            (false, false) => (
                a.requires_grad().then(|| call(g, b, false, true)),
                b.requires_grad().then(|| call(a, g, true, false)),
            ),
            (true, false) => (
                a.requires_grad().then(|| call(b, g, false, true)),
                b.requires_grad().then(|| call(a, g, false, false)),
            ),
            (false, true) => (
                a.requires_grad().then(|| call(g, b, false, false)),
                b.requires_grad().then(|| call(g, a, true, false)),
            ),
            (true, true) => (
                a.requires_grad().then(|| call(b, g, true, true)),
                b.requires_grad().then(|| call(g, a, true, true)),
            ),
        };
        vec![ga, gb]
    }
}

struct Softmax {
    axis: usize,
}

impl<T: Float> Backward<T> for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, _: &[Tensor<T>], y: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        // y * (g - sum_axis(g * y))
        let dot = g.mul(y).sum_axis_keep(self.axis);
        vec![Some(y.mul(&g.sub(&dot)))]
    }
}

impl<T: Float> Tensor<T> {
    /// Batched matrix product of `[B, M, K]` by `[B, K, N]`. The flags read
    /// the stored operand as transposed (`[B, K, M]` and `[B, N, K]`).
    pub fn bmm(&self, other: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>> {
        if self.rank() != 3 || other.rank() != 3 {
            return Err(Error::ShapeMismatch(format!(
                "bmm expects rank-3 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let (batch, a1, a2) = (self.dim(0), self.dim(1), self.dim(2));
        let (b1, b2) = (other.dim(1), other.dim(2));
        let (m, k) = if ta { (a2, a1) } else { (a1, a2) };
        let (k2, n) = if tb { (b2, b1) } else { (b1, b2) };
        if other.dim(0) != batch || k != k2 {
            return Err(Error::ShapeMismatch(format!(
                "bmm {:?}{} x {:?}{}",
                self.shape(),
                if ta { "^T" } else { "" },
                other.shape(),
                if tb { "^T" } else { "" }
            )));
        }
        super::flops::record(2 * batch * m * n * k);
        let mut out = vec![T::zero(); batch * m * n];
        let a_strides = if ta { (1, m as isize) } else { (k as isize, 1) };
        let b_strides = if tb { (1, k as isize) } else { (n as isize, 1) };
        for bi in 0..batch {
            T::gemm(
                m,
                k,
                n,
                T::one(),
                &self.data()[bi * m * k..(bi + 1) * m * k],
                a_strides,
                &other.data()[bi * k * n..(bi + 1) * k * n],
                b_strides,
                T::zero(),
                &mut out[bi * m * n..(bi + 1) * m * n],
                (n as isize, 1),
            );
        }
        Ok(Tensor::from_op(
            out,
            vec![batch, m, n],
            vec![self.clone(), other.clone()],
            Bmm { ta, tb },
        ))
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&self, axis: usize) -> Tensor<T> {
        assert!(axis < self.rank(), "softmax axis {axis} out of range for {:?}", self.shape());
        let shape = self.shape();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let src = self.data();
        let mut out = vec![T::zero(); src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let at = |j: usize| base + j * inner;
                let max = (0..len).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        Tensor::from_op(out, shape.to_vec(), vec![self.clone()], Softmax { axis })
    }
}

/// Softmax of a plain vector.
pub fn softmax_over<T: Float>(logits: &[T]) -> Vec<T> {
    Tensor::constant(logits.to_vec(), &[logits.len()]).softmax(0).to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_over(&[0.0f64; 4]), vec![0.25; 4]);
        let p = softmax_over(&[1.0f64, 2.0]);
        assert!((p[0] - 0.26894).abs() < 1e-5 && (p[1] - 0.73106).abs() < 1e-5);
        let p = softmax_over(&[1000.0f64, 0.0]);
        assert_eq!(p, vec![1.0, 0.0]);
    }

    #[test]
    fn softmax_axis_one_normalizes_columns() {
        let x = Tensor::constant(vec![1.0f64, 2.0, 2.0, 4.0], &[1, 2, 2]);
        let y = x.softmax(1);
        let d = y.data();
        assert!((d[0] + d[2] - 1.0).abs() < 1e-12);
        assert!((d[1] + d[3] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bmm_transpose_flags_agree() {
        let a = Tensor::constant(vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 2, 3]);
        let b = Tensor::constant(vec![1.0f64, 0.0, 2.0, 1.0, 0.0, 3.0], &[1, 3, 2]);
        let plain = a.bmm(&b, false, false).unwrap();
        let at = Tensor::constant(vec![1.0f64, 4.0, 2.0, 5.0, 3.0, 6.0], &[1, 3, 2]);
        let bt = Tensor::constant(vec![1.0f64, 2.0, 0.0, 0.0, 1.0, 3.0], &[1, 2, 3]);
        assert_eq!(plain.data(), at.bmm(&b, true, false).unwrap().data());
        assert_eq!(plain.data(), a.bmm(&bt, false, true).unwrap().data());
        assert_eq!(plain.data(), at.bmm(&bt, true, true).unwrap().data());
        assert!(a.bmm(&a, false, false).is_err());
    }
}
