//! Finite-difference checks for every differentiable operation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use waveboost::attention::{self_attention_forward, upsample_attention_forward, SelfAttentionParams, UpsampleAttentionParams};
use waveboost::losses::gradient_penalty;
use waveboost::nn::gradcheck::{check_gradients, FD_STEP};
use waveboost::nn::{grad, InterpolationMode, Padding, ScaleFactor, Tensor};
use waveboost::Result;

pub const TOLERANCE: f64 = 1e-4;

type T = Tensor<f64>;
type Case = (&'static str, Vec<T>, Box<dyn Fn(&[T]) -> Result<T>>);

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> T {
    let n = shape.iter().product();
    Tensor::constant((0..n).map(|_| rng.gen_range(lo..hi)).collect(), shape)
}

/// Values bounded away from zero so kinks are never straddled.
fn off_kink(rng: &mut ChaCha8Rng, shape: &[usize]) -> T {
    let n = shape.iter().product();
    Tensor::constant(
        (0..n)
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect(),
        shape,
    )
}

/// `sum(y * w)` with a fixed random weighting, so every output element
/// contributes differently.
fn weighted(y: T, seed: u64) -> T {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, y.shape(), -1.0, 1.0);
    y.mul(&w).sum()
}

/// Squared norm of the input gradient of `f`, to exercise the backward
/// rules' own derivatives.
fn second_order(f: impl Fn(&T) -> Result<T>, x: &T) -> Result<T> {
    // The numeric side passes constants; promote them so the inner
    // gradient still exists.
    let leaf;
    let x = if x.requires_grad() {
        x
    } else {
        leaf = x.detach_leaf();
        &leaf
    };
    let y = weighted(f(x)?, 99);
    let g = grad(&y, std::slice::from_ref(x), true)?.remove(0);
    Ok(g.square().sum())
}

fn cases() -> Vec<Case> {
    let mut r = ChaCha8Rng::seed_from_u64(2024);
    let r = &mut r;
    let s = [2, 3, 4];
    let mut v: Vec<Case> = Vec::new();
    v.push(("add", vec![random(r, &s, -1.0, 1.0), random(r, &[1, 3, 1], -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].add(&t[1]), 1)))));
    v.push(("sub", vec![random(r, &s, -1.0, 1.0), random(r, &[2, 1, 4], -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].sub(&t[1]), 2)))));
    v.push(("mul", vec![random(r, &s, -1.0, 1.0), random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].mul(&t[1]), 3)))));
    v.push(("div", vec![random(r, &s, -1.0, 1.0), random(r, &s, 0.5, 2.0)], Box::new(|t| Ok(weighted(t[0].div(&t[1]), 4)))));
    v.push(("neg", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].neg(), 5)))));
    v.push(("mul_scalar", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].mul_scalar(-1.7), 6)))));
    v.push(("add_scalar", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].add_scalar(0.3).square(), 7)))));
    v.push(("square", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].square(), 8)))));
    v.push(("sqrt", vec![random(r, &s, 0.2, 2.0)], Box::new(|t| Ok(weighted(t[0].sqrt(), 9)))));
    v.push(("safe_recip", vec![random(r, &s, 0.5, 2.0)], Box::new(|t| Ok(weighted(t[0].safe_recip(), 10)))));
    v.push(("sigmoid", vec![random(r, &s, -3.0, 3.0)], Box::new(|t| Ok(weighted(t[0].sigmoid(), 11)))));
    v.push(("exp", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].exp(), 12)))));
    v.push(("ln", vec![random(r, &s, 0.5, 2.0)], Box::new(|t| Ok(weighted(t[0].ln(), 13)))));
    v.push(("relu", vec![off_kink(r, &s)], Box::new(|t| Ok(weighted(t[0].relu(), 14)))));
    v.push(("leaky_relu", vec![off_kink(r, &s)], Box::new(|t| Ok(weighted(t[0].leaky_relu(0.2), 15)))));
    v.push(("sum_to", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].sum_to(&[2, 1, 4]), 16)))));
    v.push(("expand", vec![random(r, &[2, 1, 4], -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].expand(&[2, 3, 4]), 17)))));
    v.push(("sum", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(t[0].square().sum()))));
    v.push(("mean", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(t[0].square().mean()))));
    v.push(("reshape", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].reshape(&[6, 4]), 18)))));
    v.push(("sum_axis_keep", vec![random(r, &s, -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].sum_axis_keep(1), 19)))));
    v.push(("softmax", vec![random(r, &s, -2.0, 2.0)], Box::new(|t| Ok(weighted(t[0].softmax(1), 20)))));
    for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
        let name = match (ta, tb) {
            (false, false) => "bmm",
            (true, false) => "bmm_ta",
            (false, true) => "bmm_tb",
            _ => "bmm_ta_tb",
        };
        let a = if ta { random(r, &[2, 4, 3], -1.0, 1.0) } else { random(r, &[2, 3, 4], -1.0, 1.0) };
        let b = if tb { random(r, &[2, 5, 4], -1.0, 1.0) } else { random(r, &[2, 4, 5], -1.0, 1.0) };
        v.push((name, vec![a, b], Box::new(move |t| Ok(weighted(t[0].bmm(&t[1], ta, tb)?, 21)))));
    }
    for (stride, pad, name) in [
        (1, Padding::Same, "conv2d_same"),
        (2, Padding::Same, "conv2d_stride2"),
        (1, Padding::Valid, "conv2d_valid"),
    ] {
        v.push((
            name,
            vec![random(r, &[2, 3, 6, 6], -1.0, 1.0), random(r, &[4, 3, 3, 3], -1.0, 1.0)],
            Box::new(move |t| Ok(weighted(t[0].conv2d(&t[1], stride, pad)?, 22))),
        ));
    }
    v.push((
        "conv2d_1x1",
        vec![random(r, &[1, 3, 4, 4], -1.0, 1.0), random(r, &[2, 3, 1, 1], -1.0, 1.0)],
        Box::new(|t| Ok(weighted(t[0].conv2d(&t[1], 1, Padding::Same)?, 23))),
    ));
    // Distinct values per window keep the arg-max stable under perturbation.
    let perm: Vec<f64> = {
        let mut p: Vec<f64> = (0..64).map(|i| i as f64 / 16.0).collect();
        for i in (1..p.len()).rev() {
            p.swap(i, r.gen_range(0..=i));
        }
        p
    };
    v.push(("max_pool2d", vec![Tensor::constant(perm, &[1, 4, 4, 4])], Box::new(|t| Ok(weighted(t[0].max_pool2d()?, 24)))));
    v.push(("upsample_nearest", vec![random(r, &[1, 2, 3, 3], -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].upsample_nearest(2), 25)))));
    v.push(("block_sum", vec![random(r, &[1, 2, 4, 4], -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].block_sum(2), 26)))));
    for (factor, mode, name) in [
        (ScaleFactor::integer(2), InterpolationMode::Bicubic, "interpolate_bicubic_up"),
        (ScaleFactor::new(1, 2), InterpolationMode::Bicubic, "interpolate_bicubic_down"),
        (ScaleFactor::integer(2), InterpolationMode::Nearest, "interpolate_nearest"),
    ] {
        v.push((
            name,
            vec![random(r, &[1, 2, 4, 4], -1.0, 1.0)],
            Box::new(move |t| Ok(weighted(t[0].interpolate(factor, mode)?, 27))),
        ));
    }
    v.push(("haar_dwt", vec![random(r, &[2, 1, 4, 6], 0.0, 1.0)], Box::new(|t| Ok(weighted(t[0].haar_dwt()?, 28)))));
    v.push(("haar_idwt", vec![random(r, &[2, 4, 2, 3], -1.0, 1.0)], Box::new(|t| Ok(weighted(t[0].haar_idwt()?, 29)))));

    let (c, l) = (4, 2);
    v.push((
        "self_attention",
        vec![
            random(r, &[2, c, 3, 3], -1.0, 1.0),
            random(r, &[l, c, 1, 1], -1.0, 1.0),
            random(r, &[l, c, 1, 1], -1.0, 1.0),
            random(r, &[c, c, 1, 1], -1.0, 1.0),
            random(r, &[c, c, 1, 1], -1.0, 1.0),
            Tensor::constant(vec![0.7], &[1, 1, 1, 1]),
        ],
        Box::new(|t| {
            let p = SelfAttentionParams {
                w_f: t[1].clone(),
                w_g: t[2].clone(),
                w_h: t[3].clone(),
                w_v: t[4].clone(),
                alpha: t[5].clone(),
            };
            Ok(weighted(self_attention_forward(&t[0], &p)?, 30))
        }),
    ));
    v.push((
        "upsample_attention",
        vec![
            random(r, &[1, 3, 3, 3], -1.0, 1.0),
            random(r, &[3, 3, 3, 3], -1.0, 1.0),
            random(r, &[1, 3, 1, 1], -0.5, 0.5),
            random(r, &[1, 3, 1, 1], -1.0, 1.0),
            random(r, &[1, 1, 1, 1], -0.5, 0.5),
        ],
        Box::new(|t| {
            let p = UpsampleAttentionParams {
                body_kernel: t[1].clone(),
                body_bias: t[2].clone(),
                mask_kernel: t[3].clone(),
                mask_bias: t[4].clone(),
                factor: ScaleFactor::integer(2),
            };
            Ok(weighted(upsample_attention_forward(&t[0], &p)?, 31))
        }),
    ));

    v.push(("second_order_conv2d", vec![random(r, &[1, 2, 4, 4], -1.0, 1.0)], {
        let k = random(r, &[2, 2, 3, 3], -1.0, 1.0);
        Box::new(move |t| second_order(|x| Ok(x.conv2d(&k, 1, Padding::Same)?.sigmoid()), &t[0]))
    }));
    v.push(("second_order_bmm_softmax", vec![random(r, &[1, 3, 3], -1.0, 1.0)], {
        Box::new(|t| second_order(|x| x.bmm(x, true, false).map(|y| y.softmax(1)), &t[0]))
    }));
    v.push(("second_order_leaky_interpolate", vec![off_kink(r, &[1, 1, 4, 4])], {
        Box::new(|t| {
            second_order(
                |x| Ok(x.mul(x).leaky_relu(0.2).interpolate(ScaleFactor::integer(2), InterpolationMode::Bicubic)?.sqrt()),
                &t[0],
            )
        })
    }));
    v.push(("second_order_haar", vec![random(r, &[1, 1, 4, 4], 0.1, 1.0)], {
        Box::new(|t| second_order(|x| Ok(x.haar_dwt()?.exp().haar_idwt()?.square()), &t[0]))
    }));
    v.push(("gradient_penalty_wrt_critic", vec![random(r, &[1, 2, 3, 3], -1.0, 1.0)], {
        let real = random(r, &[2, 2, 4, 4], 0.0, 1.0);
        let fake = random(r, &[2, 2, 4, 4], 0.0, 1.0);
        Box::new(move |t| {
            let k = t[0].clone();
            let critic = move |x: &T| -> Result<T> {
                let h = x.conv2d(&k, 1, Padding::Same)?.leaky_relu(0.2);
                Ok(h.sum_to(&[x.dim(0), 1, 1, 1]).reshape(&[x.dim(0), 1]))
            };
            gradient_penalty(&critic, &real, &fake, 10.0, &[0.3, 0.8])
        })
    }));
    v
}

/// Relative error of every case, in a fixed order.
pub fn run_all() -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .map(|(name, inputs, f)| {
            let report = check_gradients(&inputs, |t| f(t), FD_STEP).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, report.max_rel_error())
        })
        .collect()
}
