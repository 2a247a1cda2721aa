//! Peephole convolutional LSTM: single step, unrolling in either direction,
//! and backpropagation through time.
//!
//! ```text
//! i = σ(W_xi*x + W_hi*h₋ + w_ci∘c₋ + b_i)
//! f = σ(W_xf*x + W_hf*h₋ + w_cf∘c₋ + b_f)
//! c = f∘c₋ + i∘tanh(W_xc*x + W_hc*h₋ + b_c)
//! o = σ(W_xo*x + W_ho*h₋ + w_co∘c + b_o)
//! h = o∘tanh(c)
//! ```
//!
//! The four gate kernels are stored stacked along the output-channel axis in
//! the order `i, f, c, o`, so each step costs one input and one state
//! convolution.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{conv2d_same, conv2d_same_backward, ops::sigmoid_scalar, ConvTrace, Tensor};

pub const GATES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmShape {
    pub input_channels: usize,
    pub hidden: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmParams {
    /// `[4S, C_in, k, k]`
    pub w_x: Tensor,
    /// `[4S, S, k, k]`
    pub w_h: Tensor,
    /// Peephole weights, `[S, H, W]` each.
    pub w_ci: Tensor,
    pub w_cf: Tensor,
    pub w_co: Tensor,
    /// `[4S]`
    pub bias: Tensor,
}

impl ConvLstmParams {
    pub fn zeros(shape: LstmShape) -> Self {
        let LstmShape { input_channels, hidden, height, width, kernel } = shape;
        if kernel % 2 == 0 {
            panic!("ConvLSTM kernel size must be odd, got {kernel}");
        }
        let state = [hidden, height, width];
        Self {
            w_x: Tensor::zeros(&[GATES * hidden, input_channels, kernel, kernel]),
            w_h: Tensor::zeros(&[GATES * hidden, hidden, kernel, kernel]),
            w_ci: Tensor::zeros(&state),
            w_cf: Tensor::zeros(&state),
            w_co: Tensor::zeros(&state),
            bias: Tensor::zeros(&[GATES * hidden]),
        }
    }

    /// Uniform Xavier kernels (fans counted per gate: channels × kH × kW),
    /// zero peepholes and zero biases.
    pub fn init(shape: LstmShape, seed: u64) -> Self {
        let mut params = Self::zeros(shape);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = shape.kernel * shape.kernel;
        let fan_out = shape.hidden * k2;
        xavier_fill(&mut params.w_x, shape.input_channels * k2, fan_out, &mut rng);
        xavier_fill(&mut params.w_h, shape.hidden * k2, fan_out, &mut rng);
        params
    }

    pub fn shape(&self) -> LstmShape {
        let ks = self.w_x.shape();
        let ss = self.w_ci.shape();
        LstmShape { input_channels: ks[1], hidden: ss[0], height: ss[1], width: ss[2], kernel: ks[2] }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    pub fn tensors(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("w_x", &self.w_x),
            ("w_h", &self.w_h),
            ("w_ci", &self.w_ci),
            ("w_cf", &self.w_cf),
            ("w_co", &self.w_co),
            ("bias", &self.bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 6] {
        [
            ("w_x", &mut self.w_x),
            ("w_h", &mut self.w_h),
            ("w_ci", &mut self.w_ci),
            ("w_cf", &mut self.w_cf),
            ("w_co", &mut self.w_co),
            ("bias", &mut self.bias),
        ]
    }

    pub fn add_assign(&mut self, other: &ConvLstmParams) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }
}

/// Uniform Xavier bound `sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

pub(crate) fn xavier_fill(t: &mut Tensor, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = xavier_bound(fan_in, fan_out);
    let dist = Uniform::new_inclusive(-bound, bound);
    t.data_mut().iter_mut().for_each(|v| *v = dist.sample(rng));
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Tensor,
    pub c: Tensor,
}

impl CellState {
    pub fn zeros(hidden: usize, height: usize, width: usize) -> Self {
        Self { h: Tensor::zeros(&[hidden, height, width]), c: Tensor::zeros(&[hidden, height, width]) }
    }

    pub fn zeros_for(params: &ConvLstmParams) -> Self {
        let s = params.shape();
        Self::zeros(s.hidden, s.height, s.width)
    }
}

/// Everything one step's backward pass needs.
#[derive(Clone, Debug)]
pub struct StepTrace {
    x_conv: ConvTrace,
    h_conv: ConvTrace,
    pub input_gate: Tensor,
    pub forget_gate: Tensor,
    pub output_gate: Tensor,
    /// `tanh` of the candidate pre-activation.
    pub candidate: Tensor,
    c_prev: Tensor,
    c: Tensor,
    tanh_c: Tensor,
}

fn check_step_shapes(params: &ConvLstmParams, x: &Tensor, prev: &CellState) -> Result<()> {
    let s = params.shape();
    x.ensure_shape("conv_lstm::step", "input frame", &[s.input_channels, s.height, s.width])?;
    prev.h.ensure_shape("conv_lstm::step", "previous h", &[s.hidden, s.height, s.width])?;
    prev.c.ensure_shape("conv_lstm::step", "previous c", &[s.hidden, s.height, s.width])?;
    Ok(())
}

pub fn step(params: &ConvLstmParams, x: &Tensor, prev: &CellState) -> Result<(CellState, StepTrace)> {
    check_step_shapes(params, x, prev)?;
    let (zx, x_conv) = conv2d_same(x, &params.w_x, Some(&params.bias))?;
    let (zh, h_conv) = conv2d_same(&prev.h, &params.w_h, None)?;
    let shape = params.w_ci.shape().to_vec();
    let plane = params.w_ci.len();

    let mut i_g = Tensor::zeros(&shape);
    let mut f_g = Tensor::zeros(&shape);
    let mut o_g = Tensor::zeros(&shape);
    let mut cand = Tensor::zeros(&shape);
    let mut c = Tensor::zeros(&shape);
    let mut tanh_c = Tensor::zeros(&shape);
    let mut h = Tensor::zeros(&shape);

    let (zx, zh) = (zx.data(), zh.data());
    let c_prev = prev.c.data();
    let (w_ci, w_cf, w_co) = (params.w_ci.data(), params.w_cf.data(), params.w_co.data());
    for k in 0..plane {
        let z = |gate: usize| zx[gate * plane + k] + zh[gate * plane + k];
        let i = sigmoid_scalar(z(0) + w_ci[k] * c_prev[k]);
        let f = sigmoid_scalar(z(1) + w_cf[k] * c_prev[k]);
        let g = z(2).tanh();
        let cv = f * c_prev[k] + i * g;
        let o = sigmoid_scalar(z(3) + w_co[k] * cv);
        let tc = cv.tanh();
        i_g.data_mut()[k] = i;
        f_g.data_mut()[k] = f;
        cand.data_mut()[k] = g;
        c.data_mut()[k] = cv;
        o_g.data_mut()[k] = o;
        tanh_c.data_mut()[k] = tc;
        h.data_mut()[k] = o * tc;
    }
    let trace = StepTrace {
        x_conv,
        h_conv,
        input_gate: i_g,
        forget_gate: f_g,
        output_gate: o_g,
        candidate: cand,
        c_prev: prev.c.clone(),
        c: c.clone(),
        tanh_c,
    };
    Ok((CellState { h, c }, trace))
}

/// Gradients flowing out of one step.
pub struct StepGrads {
    pub d_x: Tensor,
    pub d_prev: CellState,
}

/// Reverse-mode through one step, accumulating parameter gradients into `grads`.
pub fn step_backward(
    params: &ConvLstmParams,
    trace: &StepTrace,
    d_h: &Tensor,
    d_c: &Tensor,
    grads: &mut ConvLstmParams,
) -> Result<StepGrads> {
    let shape = params.w_ci.shape().to_vec();
    d_h.ensure_shape("conv_lstm::step_backward", "dh", &shape)?;
    d_c.ensure_shape("conv_lstm::step_backward", "dc", &shape)?;
    let plane = params.w_ci.len();
    let mut dz = Tensor::zeros(&[GATES * shape[0], shape[1], shape[2]]);
    let mut d_c_prev = Tensor::zeros(&shape);
    {
        let dz = dz.data_mut();
        let dcp = d_c_prev.data_mut();
        let (i_g, f_g, o_g) = (trace.input_gate.data(), trace.forget_gate.data(), trace.output_gate.data());
        let (cand, c_prev, c, tc) = (trace.candidate.data(), trace.c_prev.data(), trace.c.data(), trace.tanh_c.data());
        let (w_ci, w_cf, w_co) = (params.w_ci.data(), params.w_cf.data(), params.w_co.data());
        let (dh, dc_in) = (d_h.data(), d_c.data());
        for k in 0..plane {
            let (i, f, o, g) = (i_g[k], f_g[k], o_g[k], cand[k]);
            let d_o = dh[k] * tc[k];
            let dz_o = d_o * o * (1.0 - o);
            // o reads the new c through its peephole
            let dc = dc_in[k] + dh[k] * o * (1.0 - tc[k] * tc[k]) + dz_o * w_co[k];
            let dz_i = dc * g * i * (1.0 - i);
            let dz_f = dc * c_prev[k] * f * (1.0 - f);
            let dz_c = dc * i * (1.0 - g * g);
            dz[k] = dz_i;
            dz[plane + k] = dz_f;
            dz[2 * plane + k] = dz_c;
            dz[3 * plane + k] = dz_o;
            dcp[k] = dc * f + dz_i * w_ci[k] + dz_f * w_cf[k];
            grads.w_ci.data_mut()[k] += dz_i * c_prev[k];
            grads.w_cf.data_mut()[k] += dz_f * c_prev[k];
            grads.w_co.data_mut()[k] += dz_o * c[k];
        }
    }
    let gx = conv2d_same_backward(&trace.x_conv, &params.w_x, &dz)?;
    let gh = conv2d_same_backward(&trace.h_conv, &params.w_h, &dz)?;
    grads.w_x.add_assign(&gx.kernel);
    grads.bias.add_assign(&gx.bias);
    grads.w_h.add_assign(&gh.kernel);
    Ok(StepGrads { d_x: gx.input, d_prev: CellState { h: gh.input, c: d_c_prev } })
}

/// Result of running a cell over a sequence.
#[derive(Clone, Debug)]
pub struct Unrolled {
    /// Per-step states in forward time order, whatever the reading direction.
    pub states: Vec<CellState>,
    /// State after the last processed step.
    pub final_state: CellState,
    /// Step traces in processing order.
    pub traces: Vec<StepTrace>,
    pub reverse: bool,
}

impl Unrolled {
    pub fn hiddens(&self) -> impl Iterator<Item = &Tensor> {
        self.states.iter().map(|s| &s.h)
    }
}

pub fn unroll(params: &ConvLstmParams, xs: &[Tensor], init: &CellState, reverse: bool) -> Result<Unrolled> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument("conv_lstm::unroll: empty input sequence".into()));
    }
    let t_len = xs.len();
    let mut states: Vec<Option<CellState>> = vec![None; t_len];
    let mut traces = Vec::with_capacity(t_len);
    let mut state = init.clone();
    for k in 0..t_len {
        let t = if reverse { t_len - 1 - k } else { k };
        let (next, trace) = step(params, &xs[t], &state)?;
        states[t] = Some(next.clone());
        traces.push(trace);
        state = next;
    }
    Ok(Unrolled {
        states: states.into_iter().map(|s| s.expect("every step visited")).collect(),
        final_state: state,
        traces,
        reverse,
    })
}

#[derive(Clone, Debug)]
pub struct BpttGrads {
    pub params: ConvLstmParams,
    /// Input gradients in forward time order.
    pub d_inputs: Vec<Tensor>,
    pub d_init: CellState,
}

/// Backpropagation through time over an [`Unrolled`] run.
///
/// `d_hs` carries per-step upstream gradients on `h` in forward time order
/// (`None` for no per-step loss); `d_final` is upstream on the final state.
pub fn bptt(
    params: &ConvLstmParams,
    run: &Unrolled,
    d_hs: Option<&[Tensor]>,
    d_final: Option<&CellState>,
) -> Result<BpttGrads> {
    let t_len = run.traces.len();
    if let Some(d) = d_hs {
        if d.len() != t_len {
            return Err(Error::InvalidArgument(format!(
                "conv_lstm::bptt: {} upstream gradients for {} steps",
                d.len(),
                t_len
            )));
        }
    }
    let s = params.shape();
    let mut grads = params.zeros_like();
    let mut carry = match d_final {
        Some(d) => d.clone(),
        None => CellState::zeros(s.hidden, s.height, s.width),
    };
    let mut d_inputs: Vec<Option<Tensor>> = vec![None; t_len];
    for k in (0..t_len).rev() {
        let t = if run.reverse { t_len - 1 - k } else { k };
        let mut d_h = carry.h;
        if let Some(d) = d_hs {
            d_h.add_assign(&d[t]);
        }
        let out = step_backward(params, &run.traces[k], &d_h, &carry.c, &mut grads)?;
        d_inputs[t] = Some(out.d_x);
        carry = out.d_prev;
    }
    Ok(BpttGrads {
        params: grads,
        d_inputs: d_inputs.into_iter().map(|d| d.expect("every step visited")).collect(),
        d_init: carry,
    })
}
