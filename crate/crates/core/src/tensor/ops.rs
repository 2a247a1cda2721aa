use super::Tensor;
use crate::error::{Error, Result};

/// Clamp applied to predictions before the logarithms in [`bce_loss`].
pub const BCE_EPS: f64 = 1e-7;

// ---------------------------------------------------------------------------
// matrix multiply
// ---------------------------------------------------------------------------

/// `c = a·b + beta·c` with `a` m×k and `b` k×n, either optionally stored
/// transposed. All buffers are row-major.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

/// Saved forward state of [`conv2d_same`].
#[derive(Clone, Debug)]
pub struct ConvTrace {
    input: Tensor,
    kernel_shape: [usize; 4],
}

#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

fn check_conv(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<[usize; 4]> {
    let (c_in, _, _) = input.dims3()?;
    let ks = match kernel.shape() {
        &[o, i, kh, kw] => [o, i, kh, kw],
        other => return Err(Error::shape("conv2d_same", format!("kernel must be rank 4, got {:?}", other))),
    };
    if ks[1] != c_in {
        return Err(Error::shape(
            "conv2d_same",
            format!("kernel input channels (dim 1) = {} but input has {} channels", ks[1], c_in),
        ));
    }
    if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
        return Err(Error::shape("conv2d_same", format!("kernel height/width must be odd, got {}x{}", ks[2], ks[3])));
    }
    if let Some(b) = bias {
        if b.shape() != [ks[0]] {
            return Err(Error::shape(
                "conv2d_same",
                format!("bias shape {:?} does not match {} output channels", b.shape(), ks[0]),
            ));
        }
    }
    Ok(ks)
}

fn im2col(input: &Tensor, kh: usize, kw: usize) -> Vec<f64> {
    let (c_in, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    let mut cols = vec![0.0; c_in * kh * kw * hw];
    for ci in 0..c_in {
        let plane = input.channel(ci);
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &mut cols[((ci * kh + ky) * kw + kx) * hw..][..hw];
                let x_lo = pw.saturating_sub(kx);
                let x_hi = (w + pw).saturating_sub(kx).min(w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy < ph || sy - ph >= h || x_lo >= x_hi {
                        continue;
                    }
                    let src = &plane[(sy - ph) * w..][..w];
                    let dst = &mut row[y * w..][..w];
                    for x in x_lo..x_hi {
                        dst[x] = src[x + kx - pw];
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], c_in: usize, h: usize, w: usize, kh: usize, kw: usize) -> Tensor {
    let (ph, pw) = ((kh - 1) / 2, (kw - 1) / 2);
    let hw = h * w;
    let mut out = Tensor::zeros(&[c_in, h, w]);
    for ci in 0..c_in {
        let plane = out.channel_mut(ci);
        for ky in 0..kh {
            for kx in 0..kw {
                let row = &cols[((ci * kh + ky) * kw + kx) * hw..][..hw];
                let x_lo = pw.saturating_sub(kx);
                let x_hi = (w + pw).saturating_sub(kx).min(w);
                for y in 0..h {
                    let sy = y + ky;
                    if sy < ph || sy - ph >= h || x_lo >= x_hi {
                        continue;
                    }
                    let src = &row[y * w..][..w];
                    let dst = &mut plane[(sy - ph) * w..][..w];
                    for x in x_lo..x_hi {
                        dst[x + kx - pw] += src[x];
                    }
                }
            }
        }
    }
    out
}

/// Same-size 2-D cross-correlation with zero padding of `(k-1)/2` on each
/// side. `input` is `[C_in,H,W]`, `kernel` is `[C_out,C_in,kH,kW]`.
pub fn conv2d_same(input: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<(Tensor, ConvTrace)> {
    let ks = check_conv(input, kernel, bias)?;
    let [c_out, c_in, kh, kw] = ks;
    let (h, w) = (input.shape[1], input.shape[2]);
    let hw = h * w;
    let mut out = Tensor::zeros(&[c_out, h, w]);
    if let Some(b) = bias {
        for (o, &bv) in b.data().iter().enumerate() {
            out.channel_mut(o).fill(bv);
        }
    }
    let depth = c_in * kh * kw;
    if kh == 1 && kw == 1 {
        gemm(c_out, depth, hw, kernel.data(), false, input.data(), false, 1.0, out.data_mut());
    } else {
        let cols = im2col(input, kh, kw);
        gemm(c_out, depth, hw, kernel.data(), false, &cols, false, 1.0, out.data_mut());
    }
    Ok((out, ConvTrace { input: input.clone(), kernel_shape: ks }))
}

/// Gradients of [`conv2d_same`] with respect to input, kernel and bias.
///
/// The kernel is passed back in rather than copied into the trace so that
/// long unrolls do not hold one kernel copy per step.
pub fn conv2d_same_backward(trace: &ConvTrace, kernel: &Tensor, upstream: &Tensor) -> Result<ConvGrads> {
    let [c_out, c_in, kh, kw] = trace.kernel_shape;
    kernel.ensure_shape("conv2d_same_backward", "kernel", &trace.kernel_shape)?;
    let (h, w) = (trace.input.shape[1], trace.input.shape[2]);
    upstream.ensure_shape("conv2d_same_backward", "upstream", &[c_out, h, w])?;
    let hw = h * w;
    let depth = c_in * kh * kw;

    let mut d_bias = Tensor::zeros(&[c_out]);
    for o in 0..c_out {
        d_bias.data[o] = upstream.channel(o).iter().sum();
    }

    let mut d_kernel = Tensor::zeros(&trace.kernel_shape);
    let pointwise = kh == 1 && kw == 1;
    let cols_owned;
    let cols: &[f64] = if pointwise {
        trace.input.data()
    } else {
        cols_owned = im2col(&trace.input, kh, kw);
        &cols_owned
    };
    // dK = dOut · colsᵀ
    gemm(c_out, hw, depth, upstream.data(), false, cols, true, 0.0, d_kernel.data_mut());

    // dCols = Kᵀ · dOut
    let mut d_cols = vec![0.0; depth * hw];
    gemm(depth, c_out, hw, kernel.data(), true, upstream.data(), false, 0.0, &mut d_cols);
    let d_input =
        if pointwise { Tensor { shape: vec![c_in, h, w], data: d_cols } } else { col2im(&d_cols, c_in, h, w, kh, kw) };
    Ok(ConvGrads { input: d_input, kernel: d_kernel, bias: d_bias })
}

// ---------------------------------------------------------------------------
// pooling and the event-head channel ops
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct PoolTrace {
    input_shape: [usize; 3],
    /// Flat input index of the maximum for every output cell.
    argmax: Vec<usize>,
}

impl PoolTrace {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }
}

/// Non-overlapping `window`×`window` max pooling. Ties go to the first
/// element in row-major scan order of the block.
pub fn maxpool2d(input: &Tensor, window: usize) -> Result<(Tensor, PoolTrace)> {
    let (c, h, w) = input.dims3()?;
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape("maxpool2d", format!("spatial dims {}x{} not divisible by window {}", h, w, window)));
    }
    let (gh, gw) = (h / window, w / window);
    let mut out = Tensor::zeros(&[c, gh, gw]);
    let mut argmax = Vec::with_capacity(c * gh * gw);
    for ch in 0..c {
        for gy in 0..gh {
            for gx in 0..gw {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for y in gy * window..(gy + 1) * window {
                    for x in gx * window..(gx + 1) * window {
                        let idx = (ch * h + y) * w + x;
                        if best_idx == usize::MAX || input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.data[(ch * gh + gy) * gw + gx] = best;
                argmax.push(best_idx);
            }
        }
    }
    Ok((out, PoolTrace { input_shape: [c, h, w], argmax }))
}

pub fn maxpool2d_backward(trace: &PoolTrace, upstream: &Tensor) -> Result<Tensor> {
    if upstream.len() != trace.argmax.len() {
        return Err(Error::shape(
            "maxpool2d_backward",
            format!("upstream has {} cells, trace has {}", upstream.len(), trace.argmax.len()),
        ));
    }
    let mut d = Tensor::zeros(&trace.input_shape);
    for (&idx, &g) in trace.argmax.iter().zip(upstream.data()) {
        d.data[idx] += g;
    }
    Ok(d)
}

/// Softmax across the channel axis at every spatial position.
pub fn channel_softmax(input: &Tensor) -> Result<Tensor> {
    let (n, h, w) = input.dims3()?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, h, w]);
    for p in 0..plane {
        let max = (0..n).map(|c| input.data[c * plane + p]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..n {
            let e = (input.data[c * plane + p] - max).exp();
            out.data[c * plane + p] = e;
            total += e;
        }
        for c in 0..n {
            out.data[c * plane + p] /= total;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of [`channel_softmax`] given its output.
pub fn channel_softmax_backward(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    let (n, h, w) = output.dims3()?;
    upstream.ensure_shape("channel_softmax_backward", "upstream", output.shape())?;
    let plane = h * w;
    let mut d = Tensor::zeros(output.shape());
    for p in 0..plane {
        let dot: f64 = (0..n).map(|c| output.data[c * plane + p] * upstream.data[c * plane + p]).sum();
        for c in 0..n {
            let s = output.data[c * plane + p];
            d.data[c * plane + p] = s * (upstream.data[c * plane + p] - dot);
        }
    }
    Ok(d)
}

#[derive(Clone, Debug)]
pub struct WtaTrace {
    shape: [usize; 3],
    winners: Vec<usize>,
}

impl WtaTrace {
    /// Winning channel per spatial position, row-major.
    pub fn winners(&self) -> &[usize] {
        &self.winners
    }
}

/// Winner-take-all across channels: the maximal channel keeps its value and
/// every other channel is zeroed. Ties go to the lowest channel index.
pub fn channel_wta(input: &Tensor) -> Result<(Tensor, WtaTrace)> {
    let (n, h, w) = input.dims3()?;
    let plane = h * w;
    let mut out = Tensor::zeros(&[n, h, w]);
    let mut winners = Vec::with_capacity(plane);
    for p in 0..plane {
        let mut best = 0;
        for c in 1..n {
            if input.data[c * plane + p] > input.data[best * plane + p] {
                best = c;
            }
        }
        if n > 0 {
            out.data[best * plane + p] = input.data[best * plane + p];
        }
        winners.push(best);
    }
    Ok((out, WtaTrace { shape: [n, h, w], winners }))
}

pub fn channel_wta_backward(trace: &WtaTrace, upstream: &Tensor) -> Result<Tensor> {
    upstream.ensure_shape("channel_wta_backward", "upstream", &trace.shape)?;
    let plane = trace.shape[1] * trace.shape[2];
    let mut d = Tensor::zeros(&trace.shape);
    for (p, &c) in trace.winners.iter().enumerate() {
        d.data[c * plane + p] = upstream.data[c * plane + p];
    }
    Ok(d)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nn(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, h, w) = input.dims3()?;
    if factor == 0 {
        return Err(Error::InvalidArgument("upsample factor must be >= 1".into()));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Tensor::zeros(&[n, oh, ow]);
    for c in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                out.data[(c * oh + y) * ow + x] = input.data[(c * h + y / factor) * w + x / factor];
            }
        }
    }
    Ok(out)
}

/// Block-sum adjoint of [`upsample_nn`].
pub fn upsample_nn_backward(upstream: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, oh, ow) = upstream.dims3()?;
    if factor == 0 || oh % factor != 0 || ow % factor != 0 {
        return Err(Error::shape("upsample_nn_backward", format!("{}x{} not divisible by factor {}", oh, ow, factor)));
    }
    let (h, w) = (oh / factor, ow / factor);
    let mut d = Tensor::zeros(&[n, h, w]);
    for c in 0..n {
        for y in 0..oh {
            for x in 0..ow {
                d.data[(c * h + y / factor) * w + x / factor] += upstream.data[(c * oh + y) * ow + x];
            }
        }
    }
    Ok(d)
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

#[inline]
pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

/// Backward of [`sigmoid`] expressed through its output.
pub fn sigmoid_backward(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    upstream.ensure_shape("sigmoid_backward", "upstream", output.shape())?;
    let data = output.data.iter().zip(&upstream.data).map(|(&s, &g)| g * s * (1.0 - s)).collect();
    Ok(Tensor { shape: output.shape.clone(), data })
}

pub fn tanh_act(input: &Tensor) -> Tensor {
    input.map(f64::tanh)
}

pub fn tanh_backward(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    upstream.ensure_shape("tanh_backward", "upstream", output.shape())?;
    let data = output.data.iter().zip(&upstream.data).map(|(&t, &g)| g * (1.0 - t * t)).collect();
    Ok(Tensor { shape: output.shape.clone(), data })
}

pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.ensure_shape("hadamard", "rhs", a.shape())?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn hadamard_backward(a: &Tensor, b: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    upstream.ensure_shape("hadamard_backward", "upstream", a.shape())?;
    Ok((hadamard(upstream, b)?, hadamard(upstream, a)?))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.ensure_shape("add", "rhs", a.shape())?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

pub fn add_backward(upstream: &Tensor) -> (Tensor, Tensor) {
    (upstream.clone(), upstream.clone())
}

/// Concatenate two `[C,H,W]` tensors along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ca, ha, wa) = a.dims3()?;
    let (cb, hb, wb) = b.dims3()?;
    if (ha, wa) != (hb, wb) {
        return Err(Error::shape("concat_channels", format!("spatial dims differ: {}x{} vs {}x{}", ha, wa, hb, wb)));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Tensor { shape: vec![ca + cb, ha, wa], data })
}

/// Split an upstream gradient of [`concat_channels`] back into its two parts;
/// `first_channels` is the channel count of the left operand.
pub fn concat_channels_backward(upstream: &Tensor, first_channels: usize) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = upstream.dims3()?;
    if first_channels > c {
        return Err(Error::shape("concat_channels_backward", format!("split at channel {} of {}", first_channels, c)));
    }
    let cut = first_channels * h * w;
    Ok((
        Tensor { shape: vec![first_channels, h, w], data: upstream.data[..cut].to_vec() },
        Tensor { shape: vec![c - first_channels, h, w], data: upstream.data[cut..].to_vec() },
    ))
}

// ---------------------------------------------------------------------------
// loss
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy and its gradient with respect to `pred`.
///
/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]`; where the clamp is
/// active the gradient is zero.
pub fn bce_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    target.ensure_shape("bce_loss", "target", pred.shape())?;
    let n = pred.len().max(1) as f64;
    let mut loss = 0.0;
    let mut grad = Tensor::zeros(pred.shape());
    for ((&p, &t), g) in pred.data.iter().zip(&target.data).zip(grad.data.iter_mut()) {
        let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= t * pc.ln() + (1.0 - t) * (1.0 - pc).ln();
        if p > BCE_EPS && p < 1.0 - BCE_EPS {
            *g = (pc - t) / (pc * (1.0 - pc)) / n;
        }
    }
    Ok((loss / n, grad))
}
