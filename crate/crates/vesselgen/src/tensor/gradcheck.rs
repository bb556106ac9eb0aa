//! Central finite-difference gradient oracle.
//!
//! [`finite_diff_grad`] is the independent check against which the tape's
//! analytic gradients are verified, both per primitive op and end to end
//! through the denoiser. It knows nothing about the tape: it only evaluates
//! a scalar function at perturbed parameter values.
//!
//! The per-primitive suite differences through reference implementations
//! written directly in f64, so the oracle is independent of the production
//! kernels on both the forward and backward side.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_rng, Rng};

use super::tape::{Tape, ValueId};
use super::Tensor;

/// Central differences (f(p+h) - f(p-h)) / (2h) per parameter coordinate.
///
/// The difference quotient divides by the step actually realized in f32
/// storage, not the nominal `h`, so the quotient stays exact when `h` does
/// not round cleanly onto the parameter value. `f` must be deterministic.
pub fn finite_diff_grad<F>(params: &[Tensor], h: f64, f: F) -> Result<Vec<Tensor>>
where
    F: Fn(&[Tensor]) -> Result<f64> + Sync,
{
    if h <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "finite difference step must be positive, got {h}"
        )));
    }
    params
        .iter()
        .enumerate()
        .map(|(pi, p)| {
            let grad: Result<Vec<f32>> = (0..p.len())
                .into_par_iter()
                .map(|ci| {
                    let mut work: Vec<Tensor> = params.to_vec();
                    let orig = p.values()[ci];
                    let plus = (orig as f64 + h) as f32;
                    let minus = (orig as f64 - h) as f32;
                    work[pi].values_mut()[ci] = plus;
                    let fp = f(&work)?;
                    work[pi].values_mut()[ci] = minus;
                    let fm = f(&work)?;
                    let denom = plus as f64 - minus as f64;
                    Ok(((fp - fm) / denom) as f32)
                })
                .collect();
            Tensor::from_vec(p.shape().to_vec(), grad?)
        })
        .collect()
}

/// |a - b| / max(|a|, |b|, floor).
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst absolute deviation between two gradient tensors, relative to the
/// larger vector's infinity norm. Individual coordinates may legitimately
/// cancel to zero; the vector scale is the meaningful yardstick there.
pub fn gradient_deviation(analytic: &Tensor, fd: &Tensor) -> f64 {
    let scale = analytic
        .values()
        .iter()
        .chain(fd.values())
        .fold(0.0f64, |m, &v| m.max(v.abs() as f64))
        .max(1e-9);
    analytic
        .values()
        .iter()
        .zip(fd.values())
        .fold(0.0f64, |m, (&a, &b)| m.max((a as f64 - b as f64).abs()))
        / scale
}

/// Result of checking one primitive op's analytic gradient against the
/// finite-difference oracle over many random seeds.
#[derive(Debug, Clone)]
pub struct OpGradientCheck {
    pub op: &'static str,
    pub seeds: u32,
    pub max_rel_err: f64,
}

impl OpGradientCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

const PRIMITIVE_STEP: f64 = 1e-3;

/// Tolerance the primitive suite is expected to meet.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-4;

/// Run the analytic-vs-finite-difference check for every primitive op,
/// reporting the worst gradient deviation seen per op.
pub fn run_primitive_gradient_suite(num_seeds: u32) -> Result<Vec<OpGradientCheck>> {
    let mut out = Vec::new();
    for (name, check) in primitive_checks() {
        let mut max_rel = 0.0f64;
        for seed in 0..num_seeds {
            let rel = check(&mut derive_rng(0xC0FFEE, seed as u64))?;
            max_rel = max_rel.max(rel);
        }
        out.push(OpGradientCheck { op: name, seeds: num_seeds, max_rel_err: max_rel });
    }
    Ok(out)
}

type PrimitiveCheck = Box<dyn Fn(&mut Rng) -> Result<f64>>;

fn primitive_checks() -> Vec<(&'static str, PrimitiveCheck)> {
    vec![
        ("add", Box::new(|rng| binary_case(rng, BinaryKind::Add))),
        ("sub", Box::new(|rng| binary_case(rng, BinaryKind::Sub))),
        ("mul", Box::new(|rng| binary_case(rng, BinaryKind::Mul))),
        ("mul_scalar", Box::new(mul_scalar_case)),
        ("exp", Box::new(|rng| unary_case(rng, UnaryKind::Exp))),
        ("silu", Box::new(|rng| unary_case(rng, UnaryKind::Silu))),
        ("conv2d_s1p1", Box::new(|rng| conv_case(rng, 1, 1))),
        ("conv2d_s2p1", Box::new(|rng| conv_case(rng, 2, 1))),
        ("conv2d_s1p0", Box::new(|rng| conv_case(rng, 1, 0))),
        ("dense", Box::new(dense_case)),
        ("group_norm", Box::new(group_norm_case)),
        ("add_channel_bias", Box::new(add_channel_bias_case)),
        ("upsample_nearest_2x", Box::new(upsample_case)),
        ("sum", Box::new(|rng| reduction_case(rng, true))),
        ("mean", Box::new(|rng| reduction_case(rng, false))),
    ]
}

/// Random value with magnitude in [0.25, 1.5].
fn unit_scale(rng: &mut Rng, positive_only: bool) -> f32 {
    use rand::RngExt;
    let mag = 0.25 + 1.25 * rng.random::<f32>();
    if positive_only || rng.random::<bool>() {
        mag
    } else {
        -mag
    }
}

fn unit_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| unit_scale(rng, false)).collect();
    Tensor::from_vec(shape.to_vec(), values).expect("static shape")
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.values().iter().map(|&v| v as f64).collect()
}

fn weighted_sum(weights: &Tensor, y: &[f64]) -> f64 {
    weights.values().iter().zip(y).map(|(&w, &v)| w as f64 * v).sum()
}

/// Compare tape gradients for `loss = sum(weights .* op(params...))` against
/// finite differences of an f64 reference forward. Returns the worst
/// per-parameter gradient deviation.
fn compare<B, R>(params: Vec<Tensor>, weights: Tensor, build: B, reference: R) -> Result<f64>
where
    B: Fn(&mut Tape, &[ValueId]) -> Result<ValueId>,
    R: Fn(&[Tensor]) -> Vec<f64> + Sync,
{
    let mut tape = Tape::new();
    let ids: Vec<ValueId> = params.iter().map(|p| tape.parameter(p.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let w = tape.constant(weights.clone());
    let weighted = tape.mul(w, out)?;
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss)?;

    let fd = finite_diff_grad(&params, PRIMITIVE_STEP, |ps| {
        Ok(weighted_sum(&weights, &reference(ps)))
    })?;

    let mut worst = 0.0f64;
    for (id, fd_grad) in ids.iter().zip(&fd) {
        let analytic = grads.get(*id).expect("parameter gradient");
        worst = worst.max(gradient_deviation(analytic, fd_grad));
    }
    Ok(worst)
}

#[derive(Clone, Copy)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
}

fn binary_case(rng: &mut Rng, kind: BinaryKind) -> Result<f64> {
    let shape = [2, 3];
    let a = unit_tensor(rng, &shape);
    let b = unit_tensor(rng, &shape);
    let w = unit_tensor(rng, &shape);
    compare(
        vec![a, b],
        w,
        move |t, ids| match kind {
            BinaryKind::Add => t.add(ids[0], ids[1]),
            BinaryKind::Sub => t.sub(ids[0], ids[1]),
            BinaryKind::Mul => t.mul(ids[0], ids[1]),
        },
        move |ps| {
            let (x, y) = (to_f64(&ps[0]), to_f64(&ps[1]));
            x.iter()
                .zip(&y)
                .map(|(&a, &b)| match kind {
                    BinaryKind::Add => a + b,
                    BinaryKind::Sub => a - b,
                    BinaryKind::Mul => a * b,
                })
                .collect()
        },
    )
}

fn mul_scalar_case(rng: &mut Rng) -> Result<f64> {
    let a = unit_tensor(rng, &[2, 3]);
    let s = unit_tensor(rng, &[1]);
    let w = unit_tensor(rng, &[2, 3]);
    compare(
        vec![a, s],
        w,
        |t, ids| t.mul(ids[0], ids[1]),
        |ps| {
            let s = ps[1].values()[0] as f64;
            to_f64(&ps[0]).iter().map(|&v| v * s).collect()
        },
    )
}

#[derive(Clone, Copy)]
enum UnaryKind {
    Exp,
    Silu,
}

fn unary_case(rng: &mut Rng, kind: UnaryKind) -> Result<f64> {
    let a = unit_tensor(rng, &[8]);
    let w = unit_tensor(rng, &[8]);
    compare(
        vec![a],
        w,
        move |t, ids| {
            Ok(match kind {
                UnaryKind::Exp => t.exp(ids[0]),
                UnaryKind::Silu => t.silu(ids[0]),
            })
        },
        move |ps| {
            to_f64(&ps[0])
                .iter()
                .map(|&v| match kind {
                    UnaryKind::Exp => v.exp(),
                    UnaryKind::Silu => v / (1.0 + (-v).exp()),
                })
                .collect()
        },
    )
}

/// Plain f64 cross-correlation used as the conv oracle.
fn ref_conv2d(
    x: &[f64],
    k: &[f64],
    bias: &[f64],
    (b, ci, h, w): (usize, usize, usize, usize),
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Vec<f64> {
    let oh = (h + 2 * padding - kh) / stride + 1;
    let ow = (w + 2 * padding - kw) / stride + 1;
    let mut y = vec![0.0f64; b * co * oh * ow];
    for bi in 0..b {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias[o];
                    for i in 0..ci {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= w {
                                    continue;
                                }
                                acc += x[((bi * ci + i) * h + iy as usize) * w + ix as usize]
                                    * k[((o * ci + i) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    y[((bi * co + o) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    y
}

fn conv_case(rng: &mut Rng, stride: usize, padding: usize) -> Result<f64> {
    let input = unit_tensor(rng, &[1, 2, 4, 4]);
    let kernel = unit_tensor(rng, &[2, 2, 3, 3]);
    let bias = unit_tensor(rng, &[2]);
    let out_hw = (4 + 2 * padding - 3) / stride + 1;
    let w = unit_tensor(rng, &[1, 2, out_hw, out_hw]);
    compare(
        vec![input, kernel, bias],
        w,
        move |t, ids| t.conv2d(ids[0], ids[1], Some(ids[2]), stride, padding),
        move |ps| {
            ref_conv2d(
                &to_f64(&ps[0]),
                &to_f64(&ps[1]),
                &to_f64(&ps[2]),
                (1, 2, 4, 4),
                2,
                3,
                3,
                stride,
                padding,
            )
        },
    )
}

fn dense_case(rng: &mut Rng) -> Result<f64> {
    let input = unit_tensor(rng, &[2, 4]);
    let weight = unit_tensor(rng, &[3, 4]);
    let bias = unit_tensor(rng, &[3]);
    let w = unit_tensor(rng, &[2, 3]);
    compare(
        vec![input, weight, bias],
        w,
        |t, ids| t.dense(ids[0], ids[1], ids[2]),
        |ps| {
            let (x, wt, b) = (to_f64(&ps[0]), to_f64(&ps[1]), to_f64(&ps[2]));
            let mut y = vec![0.0f64; 2 * 3];
            for bi in 0..2 {
                for o in 0..3 {
                    y[bi * 3 + o] =
                        b[o] + (0..4).map(|i| x[bi * 4 + i] * wt[o * 4 + i]).sum::<f64>();
                }
            }
            y
        },
    )
}

fn ref_group_norm(x: &[f64], gain: &[f64], bias: &[f64], groups: usize, channels: usize, hw: usize) -> Vec<f64> {
    let ch_per_group = channels / groups;
    let group_len = ch_per_group * hw;
    let mut y = vec![0.0f64; x.len()];
    let batch = x.len() / (channels * hw);
    for bi in 0..batch {
        for g in 0..groups {
            let start = (bi * channels + g * ch_per_group) * hw;
            let xs = &x[start..start + group_len];
            let m = xs.iter().sum::<f64>() / group_len as f64;
            let var = xs.iter().map(|&v| (v - m).powi(2)).sum::<f64>() / group_len as f64;
            let r = 1.0 / (var + super::GROUP_NORM_EPS).sqrt();
            for ci in 0..ch_per_group {
                let ch = g * ch_per_group + ci;
                let off = (bi * channels + ch) * hw;
                for p in 0..hw {
                    y[off + p] = gain[ch] * (x[off + p] - m) * r + bias[ch];
                }
            }
        }
    }
    y
}

fn group_norm_case(rng: &mut Rng) -> Result<f64> {
    use rand::RngExt;
    // Each group of 4 is a shifted permutation of a fixed spread, never
    // near-constant: a group variance comparable to the step would make the
    // difference quotient meaningless.
    let mut values = Vec::with_capacity(8);
    for _ in 0..2 {
        let mut group = [-0.75f32, -0.25, 0.25, 0.75];
        for i in (1..4).rev() {
            group.swap(i, rng.random_range(0..=i));
        }
        let shift = unit_scale(rng, false) * 0.5;
        values.extend(group.iter().map(|v| v + shift));
    }
    let input = Tensor::from_vec(vec![1, 2, 2, 2], values).expect("static shape");
    let gain = unit_tensor(rng, &[2]);
    let bias = unit_tensor(rng, &[2]);
    let w = unit_tensor(rng, &[1, 2, 2, 2]);
    compare(
        vec![input, gain, bias],
        w,
        |t, ids| t.group_norm(ids[0], ids[1], ids[2], 2),
        |ps| ref_group_norm(&to_f64(&ps[0]), &to_f64(&ps[1]), &to_f64(&ps[2]), 2, 2, 4),
    )
}

fn add_channel_bias_case(rng: &mut Rng) -> Result<f64> {
    let input = unit_tensor(rng, &[2, 3, 2, 2]);
    let bias = unit_tensor(rng, &[2, 3]);
    let w = unit_tensor(rng, &[2, 3, 2, 2]);
    compare(
        vec![input, bias],
        w,
        |t, ids| t.add_channel_bias(ids[0], ids[1]),
        |ps| {
            let (x, b) = (to_f64(&ps[0]), to_f64(&ps[1]));
            let hw = 4;
            x.iter().enumerate().map(|(i, &v)| v + b[i / hw]).collect()
        },
    )
}

fn upsample_case(rng: &mut Rng) -> Result<f64> {
    let input = unit_tensor(rng, &[1, 2, 2, 2]);
    let w = unit_tensor(rng, &[1, 2, 4, 4]);
    compare(
        vec![input],
        w,
        |t, ids| t.upsample_nearest_2x(ids[0]),
        |ps| {
            let x = to_f64(&ps[0]);
            let (h, w2) = (2usize, 2usize);
            let mut y = vec![0.0f64; 2 * 16];
            for plane in 0..2 {
                for iy in 0..h {
                    for ix in 0..w2 {
                        let v = x[plane * 4 + iy * w2 + ix];
                        let o = plane * 16 + 2 * iy * 4 + 2 * ix;
                        y[o] = v;
                        y[o + 1] = v;
                        y[o + 4] = v;
                        y[o + 5] = v;
                    }
                }
            }
            y
        },
    )
}

fn reduction_case(rng: &mut Rng, use_sum: bool) -> Result<f64> {
    let a = unit_tensor(rng, &[3, 4]);
    let mut tape = Tape::new();
    let id = tape.parameter(a.clone());
    let loss = if use_sum { tape.sum(id) } else { tape.mean(id) };
    let grads = tape.backward(loss)?;
    let n = a.len() as f64;
    let fd = finite_diff_grad(std::slice::from_ref(&a), PRIMITIVE_STEP, |ps| {
        let s: f64 = ps[0].values().iter().map(|&v| v as f64).sum();
        Ok(if use_sum { s } else { s / n })
    })?;
    Ok(gradient_deviation(grads.get(id).expect("parameter gradient"), &fd[0]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_slope() {
        // f(p) = p^2 at p = 3: derivative 6
        let p = vec![Tensor::scalar(3.0)];
        let g = finite_diff_grad(&p, 1e-3, |ps| {
            let v = ps[0].item() as f64;
            Ok(v * v)
        })
        .unwrap();
        assert!((g[0].item() as f64 - 6.0).abs() < 1e-6, "{}", g[0].item());
    }

    #[test]
    fn constant_function_zero_gradient() {
        let p = vec![Tensor::from_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let g = finite_diff_grad(&p, 1e-3, |_| Ok(42.0)).unwrap();
        assert_eq!(g[0].values(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn exp_slope_at_zero() {
        // f(p) = sum(exp(p)) at p = [0]: derivative 1
        let p = vec![Tensor::scalar(0.0)];
        let g = finite_diff_grad(&p, 1e-4, |ps| Ok((ps[0].item() as f64).exp())).unwrap();
        assert!((g[0].item() as f64 - 1.0).abs() < 1e-6, "{}", g[0].item());
    }

    #[test]
    fn rejects_nonpositive_step() {
        let p = vec![Tensor::scalar(1.0)];
        assert!(finite_diff_grad(&p, 0.0, |_| Ok(0.0)).is_err());
        assert!(finite_diff_grad(&p, -1e-3, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn primitive_suite_smoke() {
        // full 100-seed sweep lives in the acceptance tests
        let checks = run_primitive_gradient_suite(5).unwrap();
        assert_eq!(checks.len(), 15);
        for c in &checks {
            assert!(
                c.passed(PRIMITIVE_TOLERANCE),
                "{} rel err {}",
                c.op,
                c.max_rel_err
            );
        }
    }
}
