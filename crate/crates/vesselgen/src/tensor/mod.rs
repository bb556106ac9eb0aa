//! Minimal n-dimensional tensor arithmetic.
//!
//! Storage is `f32`, row-major, with `f64` accumulation inside reductions and
//! normalization statistics. The operation set is deliberately small: just
//! what a convolutional denoiser and its training losses need. Gradients are
//! provided by the recording tape in [`tape`]; the functions here are the
//! plain forward kernels plus their hand-derived backward counterparts.
//!
//! Layout conventions: activations are NCHW, convolution kernels are OIHW.

pub mod gradcheck;
pub mod tape;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f32`, row-major. Immutable once built;
/// operations return fresh tensors, so values are safe to share across
/// threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f32>,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if numel != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} implies {numel} values, got {}",
                values.len()
            )));
        }
        Ok(Tensor { shape, values })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![0.0; numel] }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), values: vec![value; numel] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], values: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Internal mutable access for the finite-difference oracle and
    /// parameter updates; tensors handed out by public ops stay immutable.
    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// True when the tensor holds a single value.
    pub fn is_scalar(&self) -> bool {
        self.values.len() == 1
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> f32 {
        assert!(self.is_scalar(), "item() on non-scalar shape {:?}", self.shape);
        self.values[0]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary_elementwise("add", self, other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary_elementwise("sub", self, other, |a, b| a - b)
    }

    /// Hadamard product; `other` may be a scalar.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary_elementwise("mul", self, other, |a, b| a * b)
    }

    pub fn exp(&self) -> Tensor {
        self.map(|v| v.exp())
    }

    pub fn silu(&self) -> Tensor {
        self.map(silu_scalar)
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Sum of all values, accumulated in f64, as a scalar tensor.
    pub fn sum(&self) -> Tensor {
        Tensor::scalar(self.sum_f64() as f32)
    }

    /// Mean of all values, accumulated in f64, as a scalar tensor.
    pub fn mean(&self) -> Tensor {
        Tensor::scalar((self.sum_f64() / self.values.len() as f64) as f32)
    }

    pub fn sum_f64(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

// silu and its derivative evaluate in f64 and round once, so the stored
// value carries a single ulp of error.
pub(crate) fn silu_scalar(x: f32) -> f32 {
    let xd = x as f64;
    (xd * sigmoid_f64(xd)) as f32
}

fn sigmoid_f64(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// d/dx of silu: sigma(x) * (1 + x * (1 - sigma(x))).
pub(crate) fn silu_derivative(x: f32) -> f32 {
    let xd = x as f64;
    let s = sigmoid_f64(xd);
    (s * (1.0 + xd * (1.0 - s))) as f32
}

fn binary_elementwise(
    name: &str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor> {
    if b.is_scalar() {
        let s = b.values[0];
        return Ok(Tensor {
            shape: a.shape.clone(),
            values: a.values.iter().map(|&v| f(v, s)).collect(),
        });
    }
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch(format!(
            "elementwise {name}: lhs shape {:?} vs rhs shape {:?}",
            a.shape, b.shape
        )));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        values: a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect(),
    })
}

/// Shape bookkeeping for a 2-d convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub stride: usize,
    pub padding: usize,
}

pub(crate) fn conv_dims(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    let is = input.shape();
    let ks = kernel.shape();
    if is.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input must be NCHW, got shape {is:?}"
        )));
    }
    if ks.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel must be OIHW, got shape {ks:?}"
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidParameter("conv2d stride must be >= 1".into()));
    }
    let (batch, in_ch, in_h, in_w) = (is[0], is[1], is[2], is[3]);
    let (out_ch, k_in_ch, k_h, k_w) = (ks[0], ks[1], ks[2], ks[3]);
    if in_ch != k_in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv2d channel mismatch: input has {in_ch} channels, kernel expects {k_in_ch}"
        )));
    }
    if in_h + 2 * padding < k_h || in_w + 2 * padding < k_w {
        return Err(Error::ShapeMismatch(format!(
            "conv2d kernel {k_h}x{k_w} larger than padded input {}x{}",
            in_h + 2 * padding,
            in_w + 2 * padding
        )));
    }
    let out_h = (in_h + 2 * padding - k_h) / stride + 1;
    let out_w = (in_w + 2 * padding - k_w) / stride + 1;
    Ok(ConvDims {
        batch,
        in_ch,
        in_h,
        in_w,
        out_ch,
        k_h,
        k_w,
        out_h,
        out_w,
        stride,
        padding,
    })
}

/// Range of output positions `ox` for which `ox*stride + k - padding` lands
/// inside `[0, extent)`.
#[inline]
fn valid_out_range(out_len: usize, stride: usize, k: usize, padding: usize, extent: usize) -> (usize, usize) {
    let lo = if k < padding { (padding - k).div_ceil(stride) } else { 0 };
    // largest ox with ox*stride + k - padding <= extent - 1
    let hi = if extent + padding > k {
        (((extent + padding - k - 1) / stride) + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// 2-d cross-correlation, NCHW input against OIHW kernel, optional per-output-
/// channel bias. Output planes are computed in parallel; each plane is owned
/// by one task, so results do not depend on thread count.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let d = conv_dims(input, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.shape() != [d.out_ch] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias shape {:?} does not match {} output channels",
                b.shape(),
                d.out_ch
            )));
        }
    }
    let mut out = vec![0.0f32; d.batch * d.out_ch * d.out_h * d.out_w];
    let x = input.values();
    let k = kernel.values();
    let plane = d.out_h * d.out_w;
    let in_plane = d.in_h * d.in_w;
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, yo)| {
        let b = idx / d.out_ch;
        let o = idx % d.out_ch;
        if let Some(bias) = bias {
            yo.fill(bias.values()[o]);
        }
        for i in 0..d.in_ch {
            let xi = &x[(b * d.in_ch + i) * in_plane..(b * d.in_ch + i + 1) * in_plane];
            let kk = &k[((o * d.in_ch + i) * d.k_h) * d.k_w..((o * d.in_ch + i + 1) * d.k_h) * d.k_w];
            for oy in 0..d.out_h {
                let yrow = oy * d.out_w;
                for ky in 0..d.k_h {
                    let iy = oy * d.stride + ky;
                    if iy < d.padding || iy - d.padding >= d.in_h {
                        continue;
                    }
                    let xrow = (iy - d.padding) * d.in_w;
                    for kx in 0..d.k_w {
                        let kv = kk[ky * d.k_w + kx];
                        let (lo, hi) = valid_out_range(d.out_w, d.stride, kx, d.padding, d.in_w);
                        for ox in lo..hi {
                            yo[yrow + ox] += kv * xi[xrow + ox * d.stride + kx - d.padding];
                        }
                    }
                }
            }
        }
    });
    Tensor::from_vec(vec![d.batch, d.out_ch, d.out_h, d.out_w], out)
}

/// Gradient of `conv2d` w.r.t. its input.
pub(crate) fn conv2d_backward_input(
    kernel: &Tensor,
    grad_out: &Tensor,
    d: ConvDims,
) -> Tensor {
    let mut dx = vec![0.0f32; d.batch * d.in_ch * d.in_h * d.in_w];
    let k = kernel.values();
    let dy = grad_out.values();
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    dx.par_chunks_mut(in_plane).enumerate().for_each(|(idx, dxi)| {
        let b = idx / d.in_ch;
        let i = idx % d.in_ch;
        for o in 0..d.out_ch {
            let dyo = &dy[(b * d.out_ch + o) * out_plane..(b * d.out_ch + o + 1) * out_plane];
            let kk = &k[((o * d.in_ch + i) * d.k_h) * d.k_w..((o * d.in_ch + i + 1) * d.k_h) * d.k_w];
            for oy in 0..d.out_h {
                let yrow = oy * d.out_w;
                for ky in 0..d.k_h {
                    let iy = oy * d.stride + ky;
                    if iy < d.padding || iy - d.padding >= d.in_h {
                        continue;
                    }
                    let xrow = (iy - d.padding) * d.in_w;
                    for kx in 0..d.k_w {
                        let kv = kk[ky * d.k_w + kx];
                        let (lo, hi) = valid_out_range(d.out_w, d.stride, kx, d.padding, d.in_w);
                        for ox in lo..hi {
                            dxi[xrow + ox * d.stride + kx - d.padding] += kv * dyo[yrow + ox];
                        }
                    }
                }
            }
        }
    });
    Tensor { shape: vec![d.batch, d.in_ch, d.in_h, d.in_w], values: dx }
}

/// Gradient of `conv2d` w.r.t. the kernel. Accumulates in f64.
pub(crate) fn conv2d_backward_kernel(
    input: &Tensor,
    grad_out: &Tensor,
    d: ConvDims,
) -> Tensor {
    let x = input.values();
    let dy = grad_out.values();
    let in_plane = d.in_h * d.in_w;
    let out_plane = d.out_h * d.out_w;
    let kern_plane = d.k_h * d.k_w;
    let mut dk = vec![0.0f32; d.out_ch * d.in_ch * kern_plane];
    dk.par_chunks_mut(kern_plane).enumerate().for_each(|(idx, dki)| {
        let o = idx / d.in_ch;
        let i = idx % d.in_ch;
        for ky in 0..d.k_h {
            for kx in 0..d.k_w {
                let mut acc = 0.0f64;
                for b in 0..d.batch {
                    let xi = &x[(b * d.in_ch + i) * in_plane..(b * d.in_ch + i + 1) * in_plane];
                    let dyo = &dy[(b * d.out_ch + o) * out_plane..(b * d.out_ch + o + 1) * out_plane];
                    for oy in 0..d.out_h {
                        let iy = oy * d.stride + ky;
                        if iy < d.padding || iy - d.padding >= d.in_h {
                            continue;
                        }
                        let xrow = (iy - d.padding) * d.in_w;
                        let yrow = oy * d.out_w;
                        let (lo, hi) = valid_out_range(d.out_w, d.stride, kx, d.padding, d.in_w);
                        for ox in lo..hi {
                            acc += dyo[yrow + ox] as f64
                                * xi[xrow + ox * d.stride + kx - d.padding] as f64;
                        }
                    }
                }
                dki[ky * d.k_w + kx] = acc as f32;
            }
        }
    });
    Tensor { shape: vec![d.out_ch, d.in_ch, d.k_h, d.k_w], values: dk }
}

/// Gradient of `conv2d` w.r.t. the bias: sum of grad_out over batch and space.
pub(crate) fn conv2d_backward_bias(grad_out: &Tensor, d: ConvDims) -> Tensor {
    let dy = grad_out.values();
    let out_plane = d.out_h * d.out_w;
    let mut db = vec![0.0f32; d.out_ch];
    for (o, dbo) in db.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for b in 0..d.batch {
            let dyo = &dy[(b * d.out_ch + o) * out_plane..(b * d.out_ch + o + 1) * out_plane];
            acc += dyo.iter().map(|&v| v as f64).sum::<f64>();
        }
        *dbo = acc as f32;
    }
    Tensor { shape: vec![d.out_ch], values: db }
}

/// Fully connected layer: input `B x I`, weight `O x I`, bias `O`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let is = input.shape();
    let ws = weight.shape();
    if is.len() != 2 || ws.len() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "dense expects 2-d input and weight, got {is:?} and {ws:?}"
        )));
    }
    let (b, f_in) = (is[0], is[1]);
    let (f_out, w_in) = (ws[0], ws[1]);
    if f_in != w_in {
        return Err(Error::ShapeMismatch(format!(
            "dense feature mismatch: input has {f_in} features, weight expects {w_in}"
        )));
    }
    if bias.shape() != [f_out] {
        return Err(Error::ShapeMismatch(format!(
            "dense bias shape {:?} does not match {f_out} outputs",
            bias.shape()
        )));
    }
    let x = input.values();
    let w = weight.values();
    let mut y = vec![0.0f32; b * f_out];
    for bi in 0..b {
        let xrow = &x[bi * f_in..(bi + 1) * f_in];
        for o in 0..f_out {
            let wrow = &w[o * f_in..(o + 1) * f_in];
            let mut acc = bias.values()[o] as f64;
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += *xv as f64 * *wv as f64;
            }
            y[bi * f_out + o] = acc as f32;
        }
    }
    Tensor::from_vec(vec![b, f_out], y)
}

pub(crate) fn dense_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (b, f_in) = (input.shape()[0], input.shape()[1]);
    let f_out = weight.shape()[0];
    let x = input.values();
    let w = weight.values();
    let dy = grad_out.values();

    let mut dx = vec![0.0f32; b * f_in];
    for bi in 0..b {
        for o in 0..f_out {
            let g = dy[bi * f_out + o];
            let wrow = &w[o * f_in..(o + 1) * f_in];
            let dxrow = &mut dx[bi * f_in..(bi + 1) * f_in];
            for (dxv, wv) in dxrow.iter_mut().zip(wrow) {
                *dxv += g * wv;
            }
        }
    }
    let mut dw = vec![0.0f32; f_out * f_in];
    for o in 0..f_out {
        for i in 0..f_in {
            let mut acc = 0.0f64;
            for bi in 0..b {
                acc += dy[bi * f_out + o] as f64 * x[bi * f_in + i] as f64;
            }
            dw[o * f_in + i] = acc as f32;
        }
    }
    let mut db = vec![0.0f32; f_out];
    for (o, dbo) in db.iter_mut().enumerate() {
        let mut acc = 0.0f64;
        for bi in 0..b {
            acc += dy[bi * f_out + o] as f64;
        }
        *dbo = acc as f32;
    }
    (
        Tensor { shape: vec![b, f_in], values: dx },
        Tensor { shape: vec![f_out, f_in], values: dw },
        Tensor { shape: vec![f_out], values: db },
    )
}

/// Per-(batch, group) normalization statistics saved for the backward pass.
#[derive(Debug, Clone)]
pub struct GroupNormStats {
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization over NCHW input with per-channel gain and bias.
/// Statistics are accumulated in f64.
pub fn group_norm(
    input: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    groups: usize,
) -> Result<(Tensor, GroupNormStats)> {
    let is = input.shape();
    if is.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "group_norm expects NCHW input, got {is:?}"
        )));
    }
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    if groups == 0 || c % groups != 0 {
        return Err(Error::InvalidParameter(format!(
            "group_norm: {c} channels not divisible into {groups} groups"
        )));
    }
    if gain.shape() != [c] || bias.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "group_norm gain/bias shapes {:?}/{:?} do not match {c} channels",
            gain.shape(),
            bias.shape()
        )));
    }
    let ch_per_group = c / groups;
    let group_len = ch_per_group * h * w;
    let x = input.values();
    let mut y = vec![0.0f32; x.len()];
    let mut mean = vec![0.0f64; b * groups];
    let mut inv_std = vec![0.0f64; b * groups];
    for bi in 0..b {
        for g in 0..groups {
            let start = (bi * c + g * ch_per_group) * h * w;
            let xs = &x[start..start + group_len];
            let m: f64 = xs.iter().map(|&v| v as f64).sum::<f64>() / group_len as f64;
            let var: f64 =
                xs.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / group_len as f64;
            let r = 1.0 / (var + GROUP_NORM_EPS).sqrt();
            mean[bi * groups + g] = m;
            inv_std[bi * groups + g] = r;
            for ci in 0..ch_per_group {
                let ch = g * ch_per_group + ci;
                let gv = gain.values()[ch] as f64;
                let bv = bias.values()[ch] as f64;
                let off = (bi * c + ch) * h * w;
                for p in 0..h * w {
                    let xhat = (x[off + p] as f64 - m) * r;
                    y[off + p] = (gv * xhat + bv) as f32;
                }
            }
        }
    }
    Ok((
        Tensor { shape: is.to_vec(), values: y },
        GroupNormStats { mean, inv_std },
    ))
}

pub(crate) fn group_norm_backward(
    input: &Tensor,
    gain: &Tensor,
    groups: usize,
    stats: &GroupNormStats,
    grad_out: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let is = input.shape();
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    let ch_per_group = c / groups;
    let group_len = ch_per_group * h * w;
    let x = input.values();
    let dy = grad_out.values();

    let mut dx = vec![0.0f32; x.len()];
    let mut dgain = vec![0.0f64; c];
    let mut dbias = vec![0.0f64; c];
    for bi in 0..b {
        for g in 0..groups {
            let m = stats.mean[bi * groups + g];
            let r = stats.inv_std[bi * groups + g];
            // Group-wide reductions of dxhat and dxhat*xhat.
            let mut sum_dxhat = 0.0f64;
            let mut sum_dxhat_xhat = 0.0f64;
            for ci in 0..ch_per_group {
                let ch = g * ch_per_group + ci;
                let gv = gain.values()[ch] as f64;
                let off = (bi * c + ch) * h * w;
                for p in 0..h * w {
                    let xhat = (x[off + p] as f64 - m) * r;
                    let d = dy[off + p] as f64;
                    dgain[ch] += d * xhat;
                    dbias[ch] += d;
                    let dxhat = d * gv;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                }
            }
            let mean_dxhat = sum_dxhat / group_len as f64;
            let mean_dxhat_xhat = sum_dxhat_xhat / group_len as f64;
            for ci in 0..ch_per_group {
                let ch = g * ch_per_group + ci;
                let gv = gain.values()[ch] as f64;
                let off = (bi * c + ch) * h * w;
                for p in 0..h * w {
                    let xhat = (x[off + p] as f64 - m) * r;
                    let dxhat = dy[off + p] as f64 * gv;
                    dx[off + p] = (r * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)) as f32;
                }
            }
        }
    }
    (
        Tensor { shape: is.to_vec(), values: dx },
        Tensor { shape: vec![c], values: dgain.iter().map(|&v| v as f32).collect() },
        Tensor { shape: vec![c], values: dbias.iter().map(|&v| v as f32).collect() },
    )
}

/// Adds a per-(batch, channel) bias to an NCHW tensor, broadcast over space.
/// Used to inject timestep conditioning after a convolution.
pub fn add_channel_bias(input: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let is = input.shape();
    let bs = bias.shape();
    if is.len() != 4 || bs.len() != 2 || is[0] != bs[0] || is[1] != bs[1] {
        return Err(Error::ShapeMismatch(format!(
            "add_channel_bias: input {is:?} incompatible with bias {bs:?} (want [B, C, H, W] + [B, C])"
        )));
    }
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    let mut y = input.values().to_vec();
    for bi in 0..b {
        for ch in 0..c {
            let v = bias.values()[bi * c + ch];
            let off = (bi * c + ch) * h * w;
            for p in &mut y[off..off + h * w] {
                *p += v;
            }
        }
    }
    Tensor::from_vec(is.to_vec(), y)
}

pub(crate) fn add_channel_bias_backward_bias(grad_out: &Tensor) -> Tensor {
    let is = grad_out.shape();
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    let dy = grad_out.values();
    let mut db = vec![0.0f32; b * c];
    for (i, dbv) in db.iter_mut().enumerate() {
        let off = i * h * w;
        *dbv = dy[off..off + h * w].iter().map(|&v| v as f64).sum::<f64>() as f32;
    }
    Tensor { shape: vec![b, c], values: db }
}

/// 2x nearest-neighbor upsampling of an NCHW tensor.
pub fn upsample_nearest_2x(input: &Tensor) -> Result<Tensor> {
    let is = input.shape();
    if is.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "upsample_nearest_2x expects NCHW input, got {is:?}"
        )));
    }
    let (b, c, h, w) = (is[0], is[1], is[2], is[3]);
    let x = input.values();
    let mut y = vec![0.0f32; b * c * 4 * h * w];
    let (oh, ow) = (2 * h, 2 * w);
    for plane in 0..b * c {
        let xi = &x[plane * h * w..(plane + 1) * h * w];
        let yo = &mut y[plane * oh * ow..(plane + 1) * oh * ow];
        for iy in 0..h {
            for ix in 0..w {
                let v = xi[iy * w + ix];
                let o = 2 * iy * ow + 2 * ix;
                yo[o] = v;
                yo[o + 1] = v;
                yo[o + ow] = v;
                yo[o + ow + 1] = v;
            }
        }
    }
    Tensor::from_vec(vec![b, c, oh, ow], y)
}

pub(crate) fn upsample_nearest_2x_backward(grad_out: &Tensor) -> Tensor {
    let os = grad_out.shape();
    let (b, c, oh, ow) = (os[0], os[1], os[2], os[3]);
    let (h, w) = (oh / 2, ow / 2);
    let dy = grad_out.values();
    let mut dx = vec![0.0f32; b * c * h * w];
    for plane in 0..b * c {
        let dyo = &dy[plane * oh * ow..(plane + 1) * oh * ow];
        let dxi = &mut dx[plane * h * w..(plane + 1) * h * w];
        for iy in 0..h {
            for ix in 0..w {
                let o = 2 * iy * ow + 2 * ix;
                dxi[iy * w + ix] = dyo[o] + dyo[o + 1] + dyo[o + ow] + dyo[o + ow + 1];
            }
        }
    }
    Tensor { shape: vec![b, c, h, w], values: dx }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_product() {
        let a = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(vec![3], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.mul(&b).unwrap().values(), &[4.0, 10.0, 18.0]);
    }

    #[test]
    fn exp_of_zero() {
        let a = Tensor::zeros(&[2]);
        assert_eq!(a.exp().values(), &[1.0, 1.0]);
    }

    #[test]
    fn additive_identity() {
        let x = Tensor::from_vec(vec![2, 2], vec![0.5, -1.0, 2.0, 3.5]).unwrap();
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(x.add(&z).unwrap(), x);
    }

    #[test]
    fn scalar_broadcast() {
        let x = Tensor::from_vec(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let s = Tensor::scalar(2.0);
        assert_eq!(x.mul(&s).unwrap().values(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_is_diagnostic() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4]);
        let err = a.add(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
    }

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::from_vec(vec![1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_ones_kernel_center() {
        // 3x3 all-ones kernel over all-ones 5x5 input with padding 1:
        // the center output sees the full 3x3 window, value 9.
        let x = Tensor::full(&[1, 1, 5, 5], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        assert_eq!(y.values()[2 * 5 + 2], 9.0);
        // corner sees a 2x2 window
        assert_eq!(y.values()[0], 4.0);
    }

    #[test]
    fn conv_output_size() {
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn conv_channel_mismatch_names_counts() {
        let x = Tensor::zeros(&[1, 3, 4, 4]);
        let k = Tensor::zeros(&[2, 5, 3, 3]);
        let msg = conv2d(&x, &k, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains('3') && msg.contains('5'), "{msg}");
    }

    #[test]
    fn conv_stride_two() {
        // 4x4 ramp, 2x2 sum kernel, stride 2: four disjoint quadrant sums.
        let x = Tensor::from_vec(vec![1, 1, 4, 4], (0..16).map(|v| v as f32).collect()).unwrap();
        let k = Tensor::full(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &k, None, 2, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.values(), &[0.0 + 1.0 + 4.0 + 5.0, 2.0 + 3.0 + 6.0 + 7.0,
                                 8.0 + 9.0 + 12.0 + 13.0, 10.0 + 11.0 + 14.0 + 15.0]);
    }

    #[test]
    fn group_norm_normalizes() {
        let x = Tensor::from_vec(vec![1, 2, 1, 2], vec![1.0, 3.0, -2.0, 2.0]).unwrap();
        let gain = Tensor::full(&[2], 1.0);
        let bias = Tensor::zeros(&[2]);
        let (y, _) = group_norm(&x, &gain, &bias, 2).unwrap();
        // each group of 2 values normalized to mean 0
        let v = y.values();
        assert!((v[0] + v[1]).abs() < 1e-5);
        assert!((v[2] + v[3]).abs() < 1e-5);
        assert!(v[1] > 0.99 && v[1] < 1.01, "unit variance, got {}", v[1]);
    }

    #[test]
    fn upsample_round_trip_shape() {
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = upsample_nearest_2x(&x).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(y.values()[0], 1.0);
        assert_eq!(y.values()[1], 1.0);
        assert_eq!(y.values()[5], 1.0);
        assert_eq!(y.values()[2], 2.0);
    }

    #[test]
    fn mean_accumulates_in_f64() {
        // 1e7 copies of 0.1 summed in f32 would drift well past 1e-4 relative;
        // f64 accumulation keeps the mean exact to f32 resolution.
        let x = Tensor::full(&[1_000_000], 0.1);
        let m = x.mean().item();
        assert!((m - 0.1).abs() < 1e-8, "mean {m}");
    }
}
