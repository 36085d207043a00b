//! Dense row-major f64 tensors and the convolution / pooling / affine
//! kernels the head modules are built from.
//!
//! All kernels accumulate in a fixed row-major order so results are
//! bit-reproducible across runs. Convolutions are cross-correlations
//! (no kernel flip) with zero padding.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} implies {expected} values, got {actual}")]
    LengthMismatch {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("{context}: axis {axis} expected extent {expected}, got {actual}")]
    AxisMismatch {
        context: &'static str,
        axis: usize,
        expected: usize,
        actual: usize,
    },
    #[error("{context}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        context: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("reshape cannot map {from} elements onto shape {to:?}")]
    ReshapeCount { from: usize, to: Vec<usize> },
    #[error("feature dimension not a perfect square: {dim}")]
    NotPerfectSquare { dim: usize },
    #[error("empty convolution output: input {input}, kernel {kernel}, stride {stride}, padding {padding}")]
    EmptyConvOutput {
        input: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    #[error("grouped convolution requires in_channels == out_channels ({in_channels} vs {out_channels})")]
    BadGrouping {
        in_channels: usize,
        out_channels: usize,
    },
    #[error("zero extent is not allowed in shape {shape:?}")]
    ZeroExtent { shape: Vec<usize> },
    #[error("degenerate step: eps must be positive and finite, got {eps}")]
    DegenerateStep { eps: f64 },
    #[error("non-finite value produced in {context}")]
    NonFinite { context: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense n-dimensional array of f64, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ZeroExtent { shape });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::LengthMismatch {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn filled(shape: Vec<usize>, v: f64) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![v; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Layout-preserving reinterpretation of the extents.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() || shape.iter().any(|&e| e == 0) {
            return Err(TensorError::ReshapeCount {
                from: self.data.len(),
                to: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn expect_rank(&self, rank: usize, context: &'static str) -> Result<()> {
        if self.shape.len() != rank {
            return Err(TensorError::RankMismatch {
                context,
                expected: rank,
                shape: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn expect_axis(&self, axis: usize, extent: usize, context: &'static str) -> Result<()> {
        if self.shape.get(axis) != Some(&extent) {
            return Err(TensorError::AxisMismatch {
                context,
                axis,
                expected: extent,
                actual: self.shape.get(axis).copied().unwrap_or(0),
            });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Geometry of a 1-D or square 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub grouped: bool,
    pub bias: bool,
}

impl ConvSpec {
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        ConvSpec {
            kernel: 1,
            stride: 1,
            padding: 0,
            in_channels,
            out_channels,
            grouped: false,
            bias: false,
        }
    }

    /// Same-length 1-D conv (odd kernel, stride 1).
    pub fn same_1d(channels_in: usize, channels_out: usize, kernel: usize) -> Self {
        ConvSpec {
            kernel,
            stride: 1,
            padding: kernel / 2,
            in_channels: channels_in,
            out_channels: channels_out,
            grouped: false,
            bias: false,
        }
    }

    pub fn out_len(&self, input: usize) -> Result<usize> {
        self.validate()?;
        let padded = input + 2 * self.padding;
        if padded < self.kernel {
            return Err(TensorError::EmptyConvOutput {
                input,
                kernel: self.kernel,
                stride: self.stride,
                padding: self.padding,
            });
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grouped && self.in_channels != self.out_channels {
            return Err(TensorError::BadGrouping {
                in_channels: self.in_channels,
                out_channels: self.out_channels,
            });
        }
        Ok(())
    }

    /// Per-filter input channel count (1 when depthwise).
    pub fn group_channels(&self) -> usize {
        if self.grouped {
            1
        } else {
            self.in_channels
        }
    }

    pub fn weight_shape_1d(&self) -> Vec<usize> {
        vec![self.out_channels, self.group_channels(), self.kernel]
    }

    pub fn weight_shape_2d(&self) -> Vec<usize> {
        vec![
            self.out_channels,
            self.group_channels(),
            self.kernel,
            self.kernel,
        ]
    }
}

fn check_conv_weights(
    w: &Tensor,
    expected: &[usize],
    context: &'static str,
) -> Result<()> {
    if w.shape() != expected {
        return Err(TensorError::AxisMismatch {
            context,
            axis: w
                .shape()
                .iter()
                .zip(expected)
                .position(|(a, b)| a != b)
                .unwrap_or(0),
            expected: *expected.first().unwrap_or(&0),
            actual: *w.shape().first().unwrap_or(&0),
        });
    }
    Ok(())
}

/// Batched 1-D cross-correlation: x `[N, C_in, L]`, w `[C_out, C_in/g, K]`.
pub fn conv1d_batched(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    x.expect_rank(3, "conv1d input")?;
    x.expect_axis(1, spec.in_channels, "conv1d input")?;
    check_conv_weights(w, &spec.weight_shape_1d(), "conv1d weights")?;
    let (n, c_in, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let l_out = spec.out_len(l)?;
    let c_out = spec.out_channels;
    let cg = spec.group_channels();
    let k = spec.kernel;
    if let Some(b) = b {
        b.expect_rank(1, "conv1d bias")?;
        b.expect_axis(0, c_out, "conv1d bias")?;
    }

    let mut out = vec![0.0; n * c_out * l_out];
    let xd = x.data();
    let wd = w.data();
    if !spec.grouped {
        // Weights transposed to [(ci, t), co] so the hot loop runs
        // contiguously over output channels. Per output element the terms
        // still accumulate ci-major, t-minor — bit-identical to the naive
        // nested loops.
        let mut wt = vec![0.0; cg * k * c_out];
        for co in 0..c_out {
            for ci in 0..cg {
                for t in 0..k {
                    wt[(ci * k + t) * c_out + co] = wd[(co * cg + ci) * k + t];
                }
            }
        }
        let mut acc = vec![0.0; c_out];
        for bi in 0..n {
            for p in 0..l_out {
                let start = p * spec.stride;
                let t0 = spec.padding.saturating_sub(start);
                let t1 = k.min((l + spec.padding).saturating_sub(start));
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ci in 0..cg {
                    let xrow = &xd[(bi * c_in + ci) * l..(bi * c_in + ci + 1) * l];
                    for t in t0..t1 {
                        let xv = xrow[start + t - spec.padding];
                        let wrow = &wt[(ci * k + t) * c_out..(ci * k + t + 1) * c_out];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
                for co in 0..c_out {
                    let bias = b.map(|b| b.data()[co]).unwrap_or(0.0);
                    out[(bi * c_out + co) * l_out + p] = acc[co] + bias;
                }
            }
        }
    } else {
        for bi in 0..n {
            for co in 0..c_out {
                let bias = b.map(|b| b.data()[co]).unwrap_or(0.0);
                for p in 0..l_out {
                    let start = p * spec.stride;
                    let mut acc = 0.0;
                    let xrow = &xd[(bi * c_in + co) * l..(bi * c_in + co + 1) * l];
                    let wrow = &wd[co * k..(co + 1) * k];
                    for t in 0..k {
                        let pos = start + t;
                        if pos >= spec.padding && pos - spec.padding < l {
                            acc += xrow[pos - spec.padding] * wrow[t];
                        }
                    }
                    out[(bi * c_out + co) * l_out + p] = acc + bias;
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, l_out], out)
}

/// VJP of [`conv1d_batched`]: cotangents for x, w and bias.
pub fn conv1d_vjp(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c_in, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let l_out = spec.out_len(l)?;
    let c_out = spec.out_channels;
    let cg = spec.group_channels();
    let k = spec.kernel;
    grad_out.expect_rank(3, "conv1d upstream")?;
    grad_out.expect_axis(2, l_out, "conv1d upstream")?;

    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; c_out];
    let xd = x.data();
    let wd = w.data();
    let god = grad_out.data();
    for bi in 0..n {
        for co in 0..c_out {
            for p in 0..l_out {
                let g = god[(bi * c_out + co) * l_out + p];
                gb[co] += g;
                let start = p * spec.stride;
                for cg_i in 0..cg {
                    let ci = if spec.grouped { co } else { cg_i };
                    for t in 0..k {
                        let pos = start + t;
                        if pos >= spec.padding && pos - spec.padding < l {
                            let xi = (bi * c_in + ci) * l + pos - spec.padding;
                            let wi = (co * cg + cg_i) * k + t;
                            gx[xi] += g * wd[wi];
                            gw[wi] += g * xd[xi];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![c_out], gb)?,
    ))
}

/// Batched 2-D cross-correlation: x `[N, C_in, H, W]`, square kernel.
/// `grouped` computes a depthwise conv (one filter per channel).
pub fn conv2d_batched(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
) -> Result<Tensor> {
    x.expect_rank(4, "conv2d input")?;
    x.expect_axis(1, spec.in_channels, "conv2d input")?;
    check_conv_weights(w, &spec.weight_shape_2d(), "conv2d weights")?;
    let (n, c_in, h, wd_) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let h_out = spec.out_len(h)?;
    let w_out = spec.out_len(wd_)?;
    let c_out = spec.out_channels;
    let cg = spec.group_channels();
    let k = spec.kernel;
    if let Some(b) = b {
        b.expect_rank(1, "conv2d bias")?;
        b.expect_axis(0, c_out, "conv2d bias")?;
    }

    let mut out = vec![0.0; n * c_out * h_out * w_out];
    let xd = x.data();
    let wdat = w.data();
    for bi in 0..n {
        for co in 0..c_out {
            let bias = b.map(|b| b.data()[co]).unwrap_or(0.0);
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = 0.0;
                    for cg_i in 0..cg {
                        let ci = if spec.grouped { co } else { cg_i };
                        let xbase = ((bi * c_in + ci) * h) * wd_;
                        let wbase = ((co * cg + cg_i) * k) * k;
                        for ky in 0..k {
                            let y = oy * spec.stride + ky;
                            if y < spec.padding || y - spec.padding >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let xcol = ox * spec.stride + kx;
                                if xcol < spec.padding || xcol - spec.padding >= wd_ {
                                    continue;
                                }
                                acc += xd[xbase + (y - spec.padding) * wd_ + xcol - spec.padding]
                                    * wdat[wbase + ky * k + kx];
                            }
                        }
                    }
                    out[((bi * c_out + co) * h_out + oy) * w_out + ox] = acc + bias;
                }
            }
        }
    }
    Tensor::new(vec![n, c_out, h_out, w_out], out)
}

/// VJP of [`conv2d_batched`].
pub fn conv2d_vjp(
    x: &Tensor,
    w: &Tensor,
    spec: &ConvSpec,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c_in, h, wd_) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let h_out = spec.out_len(h)?;
    let w_out = spec.out_len(wd_)?;
    let c_out = spec.out_channels;
    let cg = spec.group_channels();
    let k = spec.kernel;
    grad_out.expect_rank(4, "conv2d upstream")?;
    grad_out.expect_axis(2, h_out, "conv2d upstream")?;
    grad_out.expect_axis(3, w_out, "conv2d upstream")?;

    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; c_out];
    let xd = x.data();
    let wdat = w.data();
    let god = grad_out.data();
    for bi in 0..n {
        for co in 0..c_out {
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let g = god[((bi * c_out + co) * h_out + oy) * w_out + ox];
                    gb[co] += g;
                    for cg_i in 0..cg {
                        let ci = if spec.grouped { co } else { cg_i };
                        let xbase = ((bi * c_in + ci) * h) * wd_;
                        let wbase = ((co * cg + cg_i) * k) * k;
                        for ky in 0..k {
                            let y = oy * spec.stride + ky;
                            if y < spec.padding || y - spec.padding >= h {
                                continue;
                            }
                            for kx in 0..k {
                                let xcol = ox * spec.stride + kx;
                                if xcol < spec.padding || xcol - spec.padding >= wd_ {
                                    continue;
                                }
                                let xi = xbase + (y - spec.padding) * wd_ + xcol - spec.padding;
                                let wi = wbase + ky * k + kx;
                                gx[xi] += g * wdat[wi];
                                gw[wi] += g * xd[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(w.shape().to_vec(), gw)?,
        Tensor::new(vec![c_out], gb)?,
    ))
}

/// Global average pooling over the spatial axes: `[N, C, H, W]` -> `[N, C]`.
/// Summation is row-major left-to-right.
pub fn gap_batched(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(4, "gap input")?;
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let xd = x.data();
    let mut out = vec![0.0; n * c];
    for i in 0..n * c {
        let mut acc = 0.0;
        for p in 0..hw {
            acc += xd[i * hw + p];
        }
        out[i] = acc / hw as f64;
    }
    Tensor::new(vec![n, c], out)
}

pub fn gap_vjp(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    grad_out.expect_rank(2, "gap upstream")?;
    grad_out.expect_axis(1, c, "gap upstream")?;
    let hw = (h * w) as f64;
    let mut gx = vec![0.0; x.len()];
    let god = grad_out.data();
    for i in 0..n * c {
        let g = god[i] / hw;
        for p in 0..h * w {
            gx[i * h * w + p] = g;
        }
    }
    Tensor::new(x.shape().to_vec(), gx)
}

/// x `[N, d_in]` times w `[d_in, d_out]` plus row-broadcast bias `[d_out]`.
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "affine input")?;
    w.expect_rank(2, "affine weights")?;
    b.expect_rank(1, "affine bias")?;
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    w.expect_axis(0, d_in, "affine weights")?;
    let d_out = w.shape()[1];
    b.expect_axis(0, d_out, "affine bias")?;

    // ikj ordering: per output element the k-accumulation order matches the
    // naive i,j,k loop, so results are bit-identical to the reference.
    let mut out = vec![0.0; n * d_out];
    let xd = x.data();
    let wd = w.data();
    for i in 0..n {
        let orow = &mut out[i * d_out..(i + 1) * d_out];
        for k in 0..d_in {
            let xv = xd[i * d_in + k];
            let wrow = &wd[k * d_out..(k + 1) * d_out];
            for j in 0..d_out {
                orow[j] += xv * wrow[j];
            }
        }
        for j in 0..d_out {
            orow[j] += b.data()[j];
        }
    }
    Tensor::new(vec![n, d_out], out)
}

pub fn affine_vjp(
    x: &Tensor,
    w: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[1];
    grad_out.expect_rank(2, "affine upstream")?;
    grad_out.expect_axis(1, d_out, "affine upstream")?;
    let xd = x.data();
    let wd = w.data();
    let god = grad_out.data();

    let mut gx = vec![0.0; n * d_in];
    let mut gw = vec![0.0; d_in * d_out];
    let mut gb = vec![0.0; d_out];
    for i in 0..n {
        let grow = &god[i * d_out..(i + 1) * d_out];
        for k in 0..d_in {
            let wrow = &wd[k * d_out..(k + 1) * d_out];
            let mut acc = 0.0;
            for j in 0..d_out {
                acc += grow[j] * wrow[j];
            }
            gx[i * d_in + k] = acc;
            let xv = xd[i * d_in + k];
            let gwrow = &mut gw[k * d_out..(k + 1) * d_out];
            for j in 0..d_out {
                gwrow[j] += xv * grow[j];
            }
        }
        for j in 0..d_out {
            gb[j] += grow[j];
        }
    }
    Ok((
        Tensor::new(vec![n, d_in], gx)?,
        Tensor::new(vec![d_in, d_out], gw)?,
        Tensor::new(vec![d_out], gb)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let data = x
        .data()
        .iter()
        .map(|&v| match kind {
            Activation::Relu => v.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        })
        .collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

pub fn activation_vjp(x: &Tensor, y: &Tensor, kind: Activation, grad_out: &Tensor) -> Tensor {
    let data = match kind {
        Activation::Relu => x
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
            .collect(),
        Activation::Sigmoid => y
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&s, &g)| g * s * (1.0 - s))
            .collect(),
    };
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// Physical matrix transpose of a rank-2 tensor.
pub fn transpose2d(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "transpose input")?;
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let xd = x.data();
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = xd[i * c + j];
        }
    }
    Tensor::new(vec![c, r], out)
}

/// Dimensional transformation T: `[N, d]` -> `[N, 1, sqrt(d), sqrt(d)]`.
pub fn to_square_map(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(2, "square-map input")?;
    let d = x.shape()[1];
    let side = integer_sqrt(d).ok_or(TensorError::NotPerfectSquare { dim: d })?;
    x.reshape(vec![x.shape()[0], 1, side, side])
}

/// Inverse transformation IT: `[N, 1, s, s]` -> `[N, s*s]`.
pub fn from_square_map(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(4, "square-map inverse input")?;
    let (n, s) = (x.shape()[0], x.shape()[2]);
    x.reshape(vec![n, s * s])
}

pub fn integer_sqrt(v: usize) -> Option<usize> {
    let s = (v as f64).sqrt().round() as usize;
    if s * s == v {
        Some(s)
    } else {
        None
    }
}

// Unbatched wrappers matching the module-level contracts.

/// 1-D conv over `[C_in, L]`.
pub fn conv1d(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    x.expect_rank(2, "conv1d input")?;
    let batched = x.reshape(vec![1, x.shape()[0], x.shape()[1]])?;
    let out = conv1d_batched(&batched, w, b, spec)?;
    let s = out.shape().to_vec();
    out.reshape(vec![s[1], s[2]])
}

/// 2-D conv over `[C_in, H, W]`.
pub fn conv2d(x: &Tensor, spec: &ConvSpec, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    x.expect_rank(3, "conv2d input")?;
    let batched = x.reshape(vec![1, x.shape()[0], x.shape()[1], x.shape()[2]])?;
    let out = conv2d_batched(&batched, w, b, spec)?;
    let s = out.shape().to_vec();
    out.reshape(vec![s[1], s[2], s[3]])
}

/// Per-channel spatial mean over `[C, H, W]`.
pub fn gap(x: &Tensor) -> Result<Tensor> {
    x.expect_rank(3, "gap input")?;
    let batched = x.reshape(vec![1, x.shape()[0], x.shape()[1], x.shape()[2]])?;
    let out = gap_batched(&batched)?;
    let c = out.shape()[1];
    out.reshape(vec![c])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv1d_edge_detect() {
        let x = t(&[1, 5], &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let spec = ConvSpec {
            kernel: 3,
            stride: 1,
            padding: 0,
            in_channels: 1,
            out_channels: 1,
            grouped: false,
            bias: false,
        };
        let w = t(&[1, 1, 3], &[1.0, 0.0, -1.0]);
        let y = conv1d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.data(), &[-2.0, -2.0, -2.0]);
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = t(&[1, 6], &[3.0, 1.0, 4.0, 1.0, 5.0, 9.0]);
        let spec = ConvSpec::pointwise(1, 1);
        let w = t(&[1, 1, 1], &[1.0]);
        let y = conv1d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv1d_strided_length() {
        let spec = ConvSpec {
            kernel: 5,
            stride: 2,
            padding: 2,
            in_channels: 256,
            out_channels: 256,
            grouped: false,
            bias: false,
        };
        assert_eq!(spec.out_len(49).unwrap(), 25);
    }

    #[test]
    fn conv2d_identity_and_sum() {
        let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let id = ConvSpec::pointwise(1, 1);
        let w1 = t(&[1, 1, 1, 1], &[1.0]);
        assert_eq!(conv2d(&x, &id, &w1, None).unwrap().data(), x.data());

        let sum = ConvSpec {
            kernel: 3,
            stride: 1,
            padding: 1,
            in_channels: 1,
            out_channels: 1,
            grouped: false,
            bias: false,
        };
        let w9 = Tensor::filled(vec![1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &sum, &w9, None).unwrap();
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
    }

    #[test]
    fn conv2d_depthwise_scales_channels() {
        let x = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let spec = ConvSpec {
            kernel: 1,
            stride: 1,
            padding: 0,
            in_channels: 2,
            out_channels: 2,
            grouped: true,
            bias: false,
        };
        let w = t(&[2, 1, 1, 1], &[2.0, 3.0]);
        let y = conv2d(&x, &spec, &w, None).unwrap();
        assert_eq!(y.data(), &[2.0, 4.0, 9.0, 12.0]);
    }

    #[test]
    fn conv_empty_output_is_error() {
        let spec = ConvSpec {
            kernel: 7,
            stride: 1,
            padding: 0,
            in_channels: 1,
            out_channels: 1,
            grouped: false,
            bias: false,
        };
        assert!(matches!(
            spec.out_len(4),
            Err(TensorError::EmptyConvOutput { .. })
        ));
    }

    #[test]
    fn gap_means() {
        let x = t(&[2, 2, 2], &[0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 5.0, 7.0]);
        assert_eq!(gap(&x).unwrap().data(), &[0.0, 4.0]);
        let c = Tensor::filled(vec![3, 4, 4], 2.5);
        assert_eq!(gap(&c).unwrap().data(), &[2.5, 2.5, 2.5]);
    }

    #[test]
    fn affine_basic() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let w = t(&[2, 1], &[1.0, 1.0]);
        let b = t(&[1], &[3.0]);
        assert_eq!(affine(&x, &w, &b).unwrap().data(), &[6.0]);

        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let z = t(&[2], &[0.0, 0.0]);
        assert_eq!(affine(&x, &id, &z).unwrap().data(), x.data());
    }

    #[test]
    fn affine_dimension_mismatch() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let w = t(&[2, 1], &[1.0, 1.0]);
        let b = t(&[1], &[0.0]);
        assert!(affine(&x, &w, &b).is_err());
    }

    #[test]
    fn activations() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(activation(&x, Activation::Relu).data(), &[0.0, 0.0, 2.0]);
        let s = activation(&t(&[1], &[0.0]), Activation::Sigmoid);
        assert_eq!(s.data(), &[0.5]);
        let sat = activation(&t(&[2], &[50.0, -50.0]), Activation::Sigmoid);
        assert!((sat.data()[0] - 1.0).abs() < 1e-12);
        assert!(sat.data()[1].abs() < 1e-12);
    }

    #[test]
    fn transpose_involution() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let tt = transpose2d(&transpose2d(&x).unwrap()).unwrap();
        assert_eq!(tt, x);
    }

    #[test]
    fn square_map_round_trip() {
        let x = t(&[2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let m = to_square_map(&x).unwrap();
        assert_eq!(m.shape(), &[2, 1, 2, 2]);
        assert_eq!(from_square_map(&m).unwrap(), x);

        let big = Tensor::zeros(vec![3, 1024]);
        assert_eq!(to_square_map(&big).unwrap().shape(), &[3, 1, 32, 32]);

        let bad = Tensor::zeros(vec![1, 15]);
        assert!(matches!(
            to_square_map(&bad),
            Err(TensorError::NotPerfectSquare { dim: 15 })
        ));
    }

    #[test]
    fn shape_validation() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }
}
