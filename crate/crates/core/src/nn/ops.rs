//! Elementwise arithmetic with same-rank broadcasting, reductions and
//! reshaping.
//!
//! Broadcasting follows the usual rule restricted to equal ranks: each axis
//! must either match or be 1 on one side. Incompatible shapes are a
//! programming error and panic.

use super::float::Float;
use super::tensor::{numel, Backward, Tensor};

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() != b.len() {
        return None;
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| match (x, y) {
            _ if x == y => Some(x),
            (1, _) => Some(y),
            (_, 1) => Some(x),
            _ => None,
        })
        .collect()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Strides of `src` when viewed at shape `out`; broadcast axes get stride 0.
fn broadcast_strides(src: &[usize], out: &[usize]) -> Vec<usize> {
    let s = strides(src);
    src.iter()
        .zip(out)
        .zip(s)
        .map(|((&d, &o), st)| if d == o { st } else { 0 })
        .collect()
}

/// Walks every index of `out`, handing the matching offsets of two
/// broadcast sources to `f` one contiguous run of the last axis at a time.
fn for_each_run(
    out: &[usize],
    sa: &[usize],
    sb: &[usize],
    mut f: impl FnMut(usize, usize, usize, usize, usize, usize),
) {
    if numel(out) == 0 {
        return;
    }
    if out.is_empty() {
        f(0, 0, 0, 1, 0, 0);
        return;
    }
    let rank = out.len();
    let inner = out[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = &out[..rank - 1];
    let mut idx = vec![0usize; outer.len()];
    let mut o = 0;
    loop {
        let oa: usize = idx.iter().zip(sa).map(|(i, s)| i * s).sum();
        let ob: usize = idx.iter().zip(sb).map(|(i, s)| i * s).sum();
        f(o, oa, ob, inner, ia, ib);
        o += inner;
        let mut axis = outer.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < outer[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

fn zip_broadcast<T: Float>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> (Vec<T>, Vec<usize>) {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return (data, a.shape().to_vec());
    }
    let out = broadcast_shape(a.shape(), b.shape())
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape(), b.shape()));
    let sa = broadcast_strides(a.shape(), &out);
    let sb = broadcast_strides(b.shape(), &out);
    let mut data = vec![T::zero(); numel(&out)];
    let (da, db) = (a.data(), b.data());
    for_each_run(&out, &sa, &sb, |o, oa, ob, n, ia, ib| {
        for k in 0..n {
            data[o + k] = f(da[oa + k * ia], db[ob + k * ib]);
        }
    });
    (data, out)
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

struct BinaryOp(Binary);

impl<T: Float> Backward<T> for BinaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            Binary::Add => "add",
            Binary::Sub => "sub",
            Binary::Mul => "mul",
            Binary::Div => "div",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], output: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let need_a = a.requires_grad();
        let need_b = b.requires_grad();
        let (ga, gb) = match self.0 {
            Binary::Add => (
                need_a.then(|| g.sum_to(a.shape())),
                need_b.then(|| g.sum_to(b.shape())),
            ),
            Binary::Sub => (
                need_a.then(|| g.sum_to(a.shape())),
                need_b.then(|| g.neg().sum_to(b.shape())),
            ),
            Binary::Mul => (
                need_a.then(|| g.mul(b).sum_to(a.shape())),
                need_b.then(|| g.mul(a).sum_to(b.shape())),
            ),
            Binary::Div => (
                need_a.then(|| g.div(b).sum_to(a.shape())),
                need_b.then(|| g.mul(output).div(b).neg().sum_to(b.shape())),
            ),
        };
        vec![ga, gb]
    }
}

#[derive(Clone, Copy)]
enum Unary<T> {
    Neg,
    Scale(T),
    Shift(T),
    Sqrt,
    SafeRecip,
    Sigmoid,
    Exp,
    Ln,
}

struct UnaryOp<T>(Unary<T>);

impl<T: Float> Backward<T> for UnaryOp<T> {
    fn name(&self) -> &'static str {
        match self.0 {
            Unary::Neg => "neg",
            Unary::Scale(_) => "mul_scalar",
            Unary::Shift(_) => "add_scalar",
            Unary::Sqrt => "sqrt",
            Unary::SafeRecip => "safe_recip",
            Unary::Sigmoid => "sigmoid",
            Unary::Exp => "exp",
            Unary::Ln => "ln",
        }
    }

    fn backward(&self, inputs: &[Tensor<T>], y: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        let x = &inputs[0];
        let gx = match self.0 {
            Unary::Neg => g.neg(),
            Unary::Scale(c) => g.mul_scalar(c),
            Unary::Shift(_) => g.clone(),
            // d sqrt(x) = 1 / (2 sqrt(x)); the zero point gets a zero gradient
            Unary::Sqrt => g.mul(&y.safe_recip()).mul_scalar(T::lit(0.5)),
            Unary::SafeRecip => g.mul(&y).mul(&y).neg(),
            Unary::Sigmoid => g.mul(&y.mul(&y.neg().add_scalar(T::one()))),
            Unary::Exp => g.mul(y),
            Unary::Ln => g.div(x),
        };
        vec![Some(gx)]
    }
}

struct SumTo {
    from: Vec<usize>,
}

impl<T: Float> Backward<T> for SumTo {
    fn name(&self) -> &'static str {
        "sum_to"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.expand(&self.from))]
    }
}

struct Expand {
    from: Vec<usize>,
}

impl<T: Float> Backward<T> for Expand {
    fn name(&self) -> &'static str {
        "expand"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.sum_to(&self.from))]
    }
}

struct Reshape {
    from: Vec<usize>,
}

impl<T: Float> Backward<T> for Reshape {
    fn name(&self) -> &'static str {
        "reshape"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.reshape(&self.from))]
    }
}

/// Multiplication by a tensor that is treated as constant (activation masks).
struct MaskMul<T: Float> {
    mask: Tensor<T>,
}

impl<T: Float> Backward<T> for MaskMul<T> {
    fn name(&self) -> &'static str {
        "mask_mul"
    }
    fn backward(&self, _: &[Tensor<T>], _: &Tensor<T>, g: &Tensor<T>) -> Vec<Option<Tensor<T>>> {
        vec![Some(g.mul(&self.mask))]
    }
}

impl<T: Float> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: Binary) -> Tensor<T> {
        let (data, shape) = match kind {
            Binary::Add => zip_broadcast(self, other, |x, y| x + y),
            Binary::Sub => zip_broadcast(self, other, |x, y| x - y),
            Binary::Mul => zip_broadcast(self, other, |x, y| x * y),
            Binary::Div => zip_broadcast(self, other, |x, y| x / y),
        };
        Tensor::from_op(data, shape, vec![self.clone(), other.clone()], BinaryOp(kind))
    }

    pub fn add(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Tensor<T> {
        self.binary(other, Binary::Div)
    }

    fn unary(&self, kind: Unary<T>, f: impl Fn(T) -> T) -> Tensor<T> {
        let data = self.data().iter().map(|&v| f(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], UnaryOp(kind))
    }

    pub fn neg(&self) -> Tensor<T> {
        self.unary(Unary::Neg, |v| -v)
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        self.unary(Unary::Scale(c), |v| v * c)
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        self.unary(Unary::Shift(c), |v| v + c)
    }

    pub fn square(&self) -> Tensor<T> {
        self.mul(self)
    }

    /// Square root whose derivative at exactly zero is taken as zero.
    pub fn sqrt(&self) -> Tensor<T> {
        self.unary(Unary::Sqrt, |v| v.sqrt())
    }

    /// `1 / x`, with `0` mapped to `0`.
    pub fn safe_recip(&self) -> Tensor<T> {
        self.unary(Unary::SafeRecip, |v| if v == T::zero() { T::zero() } else { v.recip() })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(Unary::Sigmoid, |v| {
            // split on sign so exp never overflows
            if v >= T::zero() {
                T::one() / (T::one() + (-v).exp())
            } else {
                let e = v.exp();
                e / (T::one() + e)
            }
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(Unary::Exp, |v| v.exp())
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(Unary::Ln, |v| v.ln())
    }

    /// Elementwise product with `mask`, whose own gradient is never taken.
    pub(crate) fn mask_mul(&self, mask: &Tensor<T>) -> Tensor<T> {
        assert_eq!(self.shape(), mask.shape());
        let data = self.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect();
        Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone()],
            MaskMul { mask: mask.detach() },
        )
    }

    pub fn relu(&self) -> Tensor<T> {
        let mask: Vec<T> = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { T::one() } else { T::zero() })
            .collect();
        self.mask_mul(&Tensor::constant(mask, self.shape()))
    }

    pub fn leaky_relu(&self, slope: T) -> Tensor<T> {
        let mask: Vec<T> = self
            .data()
            .iter()
            .map(|&v| if v > T::zero() { T::one() } else { slope })
            .collect();
        self.mask_mul(&Tensor::constant(mask, self.shape()))
    }

    /// Sums broadcast axes away so the result has shape `target`.
    pub fn sum_to(&self, target: &[usize]) -> Tensor<T> {
        if self.shape() == target {
            return self.clone();
        }
        let ok = target.len() == self.rank()
            && target.iter().zip(self.shape()).all(|(&t, &s)| t == s || t == 1);
        assert!(ok, "cannot sum {:?} down to {:?}", self.shape(), target);
        let zero_strides = vec![0; self.rank()];
        let so = broadcast_strides(target, self.shape());
        let mut out = vec![T::zero(); numel(target)];
        let src = self.data();
        let mut pos = 0;
        for_each_run(self.shape(), &so, &zero_strides, |_, oo, _, n, io, _| {
            for k in 0..n {
                out[oo + k * io] += src[pos + k];
            }
            pos += n;
        });
        Tensor::from_op(
            out,
            target.to_vec(),
            vec![self.clone()],
            SumTo {
                from: self.shape().to_vec(),
            },
        )
    }

    /// Broadcasts to `target` by repeating size-1 axes.
    pub fn expand(&self, target: &[usize]) -> Tensor<T> {
        if self.shape() == target {
            return self.clone();
        }
        let ok = target.len() == self.rank()
            && target.iter().zip(self.shape()).all(|(&t, &s)| t == s || s == 1);
        assert!(ok, "cannot expand {:?} to {:?}", self.shape(), target);
        let si = broadcast_strides(self.shape(), target);
        let zero_strides = vec![0; target.len()];
        let mut out = vec![T::zero(); numel(target)];
        let src = self.data();
        for_each_run(target, &si, &zero_strides, |o, oi, _, n, ii, _| {
            for k in 0..n {
                out[o + k] = src[oi + k * ii];
            }
        });
        Tensor::from_op(
            out,
            target.to_vec(),
            vec![self.clone()],
            Expand {
                from: self.shape().to_vec(),
            },
        )
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let ones = vec![1; self.rank()];
        self.sum_to(&ones).reshape(&[])
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::lit(self.numel() as f64);
        self.sum().mul_scalar(T::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor<T> {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} to {:?}",
            self.shape(),
            shape
        );
        if self.shape() == shape {
            return self.clone();
        }
        Tensor::from_op(
            self.to_vec(),
            shape.to_vec(),
            vec![self.clone()],
            Reshape {
                from: self.shape().to_vec(),
            },
        )
    }

    /// Sum over the given axis, keeping it with size 1.
    pub fn sum_axis_keep(&self, axis: usize) -> Tensor<T> {
        let mut target = self.shape().to_vec();
        target[axis] = 1;
        self.sum_to(&target)
    }
}
