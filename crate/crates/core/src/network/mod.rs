//! The branched model: encoder E1, bidirectional event branch Ev1–Ev3 with
//! its event head, decoder R1 and the two reconstruction convolutions, plus
//! the supervised variant built from the event branch alone.
//!
//! ```text
//! x[0..enc]  ──E1──► (h,c) ──► R1 (zero inputs) ─► r_t ─┐
//! x[enc..]   ──Ev1 (fwd)─┐                               ├─ concat ─ CNN1 ─ tanh ─ CNN2 ─ σ ─► x'_t
//!            ──Ev2 (bwd)─┴─ concat ─ Ev3 ─ head ─► y_t ─┘
//! ```

mod checkpoint;
mod head;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, read_checkpoint, save_checkpoint, write_checkpoint, MAGIC,
};
pub use head::{event_head, event_head_backward, EventMap, HeadTrace};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::conv_lstm::{bptt, unroll, CellState, ConvLstmParams, LstmShape, Unrolled};
use crate::data::Annotation;
use crate::error::{Error, Result};
use crate::tensor::{
    bce_loss, concat_channels, concat_channels_backward, conv2d_same, conv2d_same_backward, sigmoid, sigmoid_backward,
    tanh_act, tanh_backward, ConvTrace, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    /// Model frame side `M`.
    pub frame_size: usize,
    /// ConvLSTM hidden channels `S`.
    pub hidden: usize,
    /// Event classes `n`.
    pub classes: usize,
    pub encoder_len: usize,
    pub target_len: usize,
    /// Side of the event grid blocks.
    pub grid: usize,
    pub lstm_kernel: usize,
    pub cnn1_kernel: usize,
    pub cnn2_kernel: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            frame_size: 64,
            hidden: 32,
            classes: 16,
            encoder_len: 5,
            target_len: 10,
            grid: 8,
            lstm_kernel: 5,
            cnn1_kernel: 5,
            cnn2_kernel: 1,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid == 0 || self.frame_size == 0 || self.frame_size % self.grid != 0 {
            return bad(format!("frame_size {} must be a positive multiple of grid {}", self.frame_size, self.grid));
        }
        if self.encoder_len == 0 || self.target_len == 0 {
            return bad("encoder_len and target_len must be >= 1".into());
        }
        if self.hidden == 0 || self.classes == 0 {
            return bad("hidden and classes must be >= 1".into());
        }
        for (name, k) in
            [("lstm_kernel", self.lstm_kernel), ("cnn1_kernel", self.cnn1_kernel), ("cnn2_kernel", self.cnn2_kernel)]
        {
            if k % 2 == 0 {
                return bad(format!("{name} must be odd, got {k}"));
            }
        }
        Ok(())
    }

    pub fn sequence_len(&self) -> usize {
        self.encoder_len + self.target_len
    }

    pub(crate) fn key_values(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("frame_size", self.frame_size),
            ("hidden", self.hidden),
            ("classes", self.classes),
            ("encoder_len", self.encoder_len),
            ("target_len", self.target_len),
            ("grid", self.grid),
            ("lstm_kernel", self.lstm_kernel),
            ("cnn1_kernel", self.cnn1_kernel),
            ("cnn2_kernel", self.cnn2_kernel),
        ]
    }

    pub(crate) fn set_key(&mut self, key: &str, value: usize) -> bool {
        let slot = match key {
            "frame_size" => &mut self.frame_size,
            "hidden" => &mut self.hidden,
            "classes" => &mut self.classes,
            "encoder_len" => &mut self.encoder_len,
            "target_len" => &mut self.target_len,
            "grid" => &mut self.grid,
            "lstm_kernel" => &mut self.lstm_kernel,
            "cnn1_kernel" => &mut self.cnn1_kernel,
            "cnn2_kernel" => &mut self.cnn2_kernel,
            _ => return false,
        };
        *slot = value;
        true
    }

    fn lstm(&self, input_channels: usize) -> LstmShape {
        LstmShape {
            input_channels,
            hidden: self.hidden,
            height: self.frame_size,
            width: self.frame_size,
            kernel: self.lstm_kernel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Unsupervised,
    Supervised,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Unsupervised => "unsupervised",
            ModelKind::Supervised => "supervised",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unsupervised" | "unsup" => Some(ModelKind::Unsupervised),
            "supervised" | "sup" => Some(ModelKind::Supervised),
            _ => None,
        }
    }
}

/// A plain convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernel: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            kernel: Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            bias: Tensor::zeros(&[out_channels]),
        }
    }

    fn init(out_channels: usize, in_channels: usize, kernel: usize, seed: u64) -> Self {
        let mut layer = Self::zeros(out_channels, in_channels, kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k2 = kernel * kernel;
        crate::conv_lstm::xavier_fill(&mut layer.kernel, in_channels * k2, out_channels * k2, &mut rng);
        layer
    }

    fn zeros_like(&self) -> Self {
        Self { kernel: Tensor::zeros_like(&self.kernel), bias: Tensor::zeros_like(&self.bias) }
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ConvTrace)> {
        conv2d_same(input, &self.kernel, Some(&self.bias))
    }

    /// Backward pass; accumulates into `grads` and returns the input gradient.
    fn backward(&self, trace: &ConvTrace, upstream: &Tensor, grads: &mut ConvLayer) -> Result<Tensor> {
        let g = conv2d_same_backward(trace, &self.kernel, upstream)?;
        grads.kernel.add_assign(&g.kernel);
        grads.bias.add_assign(&g.bias);
        Ok(g.input)
    }
}

/// All trainable parameters. The same type doubles as the gradient container.
///
/// Supervised models carry no encoder, projection or decoder, and their CNN1
/// reads the `S` event-branch channels instead of `S + n`.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchedModel {
    pub config: NetworkConfig,
    pub kind: ModelKind,
    pub encoder: Option<ConvLstmParams>,
    pub ev1: ConvLstmParams,
    pub ev2: ConvLstmParams,
    pub ev3: ConvLstmParams,
    pub proj: Option<ConvLayer>,
    pub decoder: Option<ConvLstmParams>,
    pub cnn1: ConvLayer,
    pub cnn2: ConvLayer,
}

impl BranchedModel {
    /// Zero-initialised model.
    pub fn zeros(config: NetworkConfig, kind: ModelKind) -> Result<Self> {
        config.validate()?;
        let s = config.hidden;
        let unsup = kind == ModelKind::Unsupervised;
        Ok(Self {
            config,
            kind,
            encoder: unsup.then(|| ConvLstmParams::zeros(config.lstm(1))),
            ev1: ConvLstmParams::zeros(config.lstm(1)),
            ev2: ConvLstmParams::zeros(config.lstm(1)),
            ev3: ConvLstmParams::zeros(config.lstm(2 * s)),
            proj: unsup.then(|| ConvLayer::zeros(config.classes, s, 1)),
            decoder: unsup.then(|| ConvLstmParams::zeros(config.lstm(1))),
            cnn1: ConvLayer::zeros(s, if unsup { s + config.classes } else { s }, config.cnn1_kernel),
            cnn2: ConvLayer::zeros(1, s, config.cnn2_kernel),
        })
    }

    /// Xavier-uniform kernels, zero biases and peepholes; deterministic per seed.
    pub fn init(config: NetworkConfig, kind: ModelKind, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(seed);
        let mut next = || master.next_u64();
        let s = config.hidden;
        let unsup = kind == ModelKind::Unsupervised;
        // seeds are drawn in a fixed order whether or not a layer exists
        let seeds: Vec<u64> = (0..8).map(|_| next()).collect();
        Ok(Self {
            config,
            kind,
            encoder: unsup.then(|| ConvLstmParams::init(config.lstm(1), seeds[0])),
            ev1: ConvLstmParams::init(config.lstm(1), seeds[1]),
            ev2: ConvLstmParams::init(config.lstm(1), seeds[2]),
            ev3: ConvLstmParams::init(config.lstm(2 * s), seeds[3]),
            proj: unsup.then(|| ConvLayer::init(config.classes, s, 1, seeds[4])),
            decoder: unsup.then(|| ConvLstmParams::init(config.lstm(1), seeds[5])),
            cnn1: ConvLayer::init(s, if unsup { s + config.classes } else { s }, config.cnn1_kernel, seeds[6]),
            cnn2: ConvLayer::init(1, s, config.cnn2_kernel, seeds[7]),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            kind: self.kind,
            encoder: self.encoder.as_ref().map(ConvLstmParams::zeros_like),
            ev1: self.ev1.zeros_like(),
            ev2: self.ev2.zeros_like(),
            ev3: self.ev3.zeros_like(),
            proj: self.proj.as_ref().map(ConvLayer::zeros_like),
            decoder: self.decoder.as_ref().map(ConvLstmParams::zeros_like),
            cnn1: self.cnn1.zeros_like(),
            cnn2: self.cnn2.zeros_like(),
        }
    }

    /// Every parameter tensor with a stable dotted name, in checkpoint order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        Self::layout(self.kind)
            .into_iter()
            .map(|name| {
                let t = self.tensor_by_name(&name).expect("layout names resolve");
                (name, t)
            })
            .collect()
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        fn push_lstm<'a>(prefix: &str, p: &'a mut ConvLstmParams, out: &mut Vec<(String, &'a mut Tensor)>) {
            for (n, t) in p.tensors_mut() {
                out.push((format!("{prefix}.{n}"), t));
            }
        }
        let Self { encoder, ev1, ev2, ev3, proj, decoder, cnn1, cnn2, .. } = self;
        let mut v = Vec::new();
        if let Some(e) = encoder.as_mut() {
            push_lstm("e1", e, &mut v);
        }
        push_lstm("ev1", ev1, &mut v);
        push_lstm("ev2", ev2, &mut v);
        push_lstm("ev3", ev3, &mut v);
        if let Some(p) = proj.as_mut() {
            v.push(("proj.kernel".into(), &mut p.kernel));
            v.push(("proj.bias".into(), &mut p.bias));
        }
        if let Some(d) = decoder.as_mut() {
            push_lstm("r1", d, &mut v);
        }
        v.push(("cnn1.kernel".into(), &mut cnn1.kernel));
        v.push(("cnn1.bias".into(), &mut cnn1.bias));
        v.push(("cnn2.kernel".into(), &mut cnn2.kernel));
        v.push(("cnn2.bias".into(), &mut cnn2.bias));
        v
    }

    fn layout(kind: ModelKind) -> Vec<String> {
        let lstm = ["w_x", "w_h", "w_ci", "w_cf", "w_co", "bias"];
        let mut names = Vec::new();
        let push_lstm = |p: &str, names: &mut Vec<String>| {
            names.extend(lstm.iter().map(|n| format!("{p}.{n}")));
        };
        if kind == ModelKind::Unsupervised {
            push_lstm("e1", &mut names);
        }
        push_lstm("ev1", &mut names);
        push_lstm("ev2", &mut names);
        push_lstm("ev3", &mut names);
        if kind == ModelKind::Unsupervised {
            names.push("proj.kernel".into());
            names.push("proj.bias".into());
            push_lstm("r1", &mut names);
        }
        for n in ["cnn1.kernel", "cnn1.bias", "cnn2.kernel", "cnn2.bias"] {
            names.push(n.into());
        }
        names
    }

    fn tensor_by_name(&self, name: &str) -> Option<&Tensor> {
        let (layer, field) = name.split_once('.')?;
        fn lstm_field<'a>(p: &'a ConvLstmParams, field: &str) -> Option<&'a Tensor> {
            p.tensors().into_iter().find(|(n, _)| *n == field).map(|(_, t)| t)
        }
        match layer {
            "e1" => self.encoder.as_ref().and_then(|p| lstm_field(p, field)),
            "ev1" => lstm_field(&self.ev1, field),
            "ev2" => lstm_field(&self.ev2, field),
            "ev3" => lstm_field(&self.ev3, field),
            "r1" => self.decoder.as_ref().and_then(|p| lstm_field(p, field)),
            "proj" => self.proj.as_ref().and_then(|p| conv_field(p, field)),
            "cnn1" => conv_field(&self.cnn1, field),
            "cnn2" => conv_field(&self.cnn2, field),
            _ => None,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn add_assign(&mut self, other: &BranchedModel) {
        for ((_, a), (_, b)) in self.named_tensors_mut().into_iter().zip(other.named_tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.named_tensors_mut() {
            t.scale(factor);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.named_tensors().iter().map(|(_, t)| t.sum_squares()).sum::<f64>().sqrt()
    }

    /// Flatten all parameters into one vector (checkpoint order).
    pub fn flatten(&self) -> Vec<f64> {
        self.named_tensors().iter().flat_map(|(_, t)| t.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn assign_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        for (_, t) in self.named_tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, values.len(), "flat parameter vector length mismatch");
    }

    fn require_unsupervised(&self, op: &str) -> Result<(&ConvLstmParams, &ConvLayer, &ConvLstmParams)> {
        match (&self.encoder, &self.proj, &self.decoder) {
            (Some(e), Some(p), Some(d)) => Ok((e, p, d)),
            _ => Err(Error::InvalidArgument(format!("{op} needs an unsupervised model"))),
        }
    }
}

fn conv_field<'a>(layer: &'a ConvLayer, field: &str) -> Option<&'a Tensor> {
    match field {
        "kernel" => Some(&layer.kernel),
        "bias" => Some(&layer.bias),
        _ => None,
    }
}

fn check_frames(op: &str, frames: &[Tensor], len: usize, m: usize) -> Result<()> {
    if frames.len() != len {
        return Err(Error::InvalidArgument(format!("{op}: expected {len} frames, got {}", frames.len())));
    }
    for f in frames {
        f.ensure_shape("network", "frame", &[1, m, m])?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// branches
// ---------------------------------------------------------------------------

/// Runs E1 from a zero state over the observed frames and returns its final state.
pub fn encode(model: &BranchedModel, frames: &[Tensor]) -> Result<CellState> {
    Ok(encode_traced(model, frames)?.final_state)
}

fn encode_traced(model: &BranchedModel, frames: &[Tensor]) -> Result<Unrolled> {
    let (e1, _, _) = model.require_unsupervised("encode")?;
    check_frames("encode", frames, model.config.encoder_len, model.config.frame_size)?;
    unroll(e1, frames, &CellState::zeros_for(e1), false)
}

/// Forward state of the bidirectional event branch.
#[derive(Clone, Debug)]
pub struct EventBranch {
    pub ev1: Unrolled,
    pub ev2: Unrolled,
    pub ev3: Unrolled,
}

impl EventBranch {
    /// Ev3 input at step `t`: Ev1 and (re-aligned) Ev2 hiddens, channel-concatenated.
    pub fn merged_input(&self, t: usize) -> Result<Tensor> {
        concat_channels(&self.ev1.states[t].h, &self.ev2.states[t].h)
    }
}

fn run_event_branch(model: &BranchedModel, frames: &[Tensor]) -> Result<EventBranch> {
    let zero = CellState::zeros_for(&model.ev1);
    let ev1 = unroll(&model.ev1, frames, &zero, false)?;
    let ev2 = unroll(&model.ev2, frames, &zero, true)?;
    let merged =
        (0..frames.len()).map(|t| concat_channels(&ev1.states[t].h, &ev2.states[t].h)).collect::<Result<Vec<_>>>()?;
    let ev3 = unroll(&model.ev3, &merged, &zero, false)?;
    Ok(EventBranch { ev1, ev2, ev3 })
}

/// Backward through Ev3 then Ev1/Ev2, given upstream on every Ev3 hidden.
fn event_branch_backward(
    model: &BranchedModel,
    branch: &EventBranch,
    d_ev3_h: &[Tensor],
    grads: &mut BranchedModel,
) -> Result<()> {
    let s = model.config.hidden;
    let g3 = bptt(&model.ev3, &branch.ev3, Some(d_ev3_h), None)?;
    grads.ev3.add_assign(&g3.params);
    let mut d1 = Vec::with_capacity(d_ev3_h.len());
    let mut d2 = Vec::with_capacity(d_ev3_h.len());
    for d in &g3.d_inputs {
        let (a, b) = concat_channels_backward(d, s)?;
        d1.push(a);
        d2.push(b);
    }
    grads.ev1.add_assign(&bptt(&model.ev1, &branch.ev1, Some(&d1), None)?.params);
    grads.ev2.add_assign(&bptt(&model.ev2, &branch.ev2, Some(&d2), None)?.params);
    Ok(())
}

/// Event maps for a target-length frame sequence.
pub fn detect_events(model: &BranchedModel, frames: &[Tensor]) -> Result<Vec<EventMap>> {
    let (_, proj, _) = model.require_unsupervised("detect_events")?;
    check_frames("detect_events", frames, model.config.target_len, model.config.frame_size)?;
    let branch = run_event_branch(model, frames)?;
    branch.ev3.hiddens().map(|h| Ok(event_head(h, proj, model.config.grid)?.0)).collect()
}

/// CNN1 → tanh → CNN2 → sigmoid on one feature tensor.
#[derive(Clone, Debug)]
struct CnnTrace {
    c1: ConvTrace,
    t1: Tensor,
    c2: ConvTrace,
    out: Tensor,
}

fn cnn_forward(model: &BranchedModel, features: &Tensor) -> Result<CnnTrace> {
    let (a1, c1) = model.cnn1.forward(features)?;
    let t1 = tanh_act(&a1);
    let (a2, c2) = model.cnn2.forward(&t1)?;
    let out = sigmoid(&a2);
    Ok(CnnTrace { c1, t1, c2, out })
}

fn cnn_backward(model: &BranchedModel, tr: &CnnTrace, d_out: &Tensor, grads: &mut BranchedModel) -> Result<Tensor> {
    let d_a2 = sigmoid_backward(&tr.out, d_out)?;
    let d_t1 = model.cnn2.backward(&tr.c2, &d_a2, &mut grads.cnn2)?;
    let d_a1 = tanh_backward(&tr.t1, &d_t1)?;
    model.cnn1.backward(&tr.c1, &d_a1, &mut grads.cnn1)
}

/// Decoder unroll from `enc_state` over zero inputs, then per step
/// `concat(r_t, y_t)` through the reconstruction convolutions.
pub fn reconstruct(model: &BranchedModel, enc_state: &CellState, events: &[EventMap]) -> Result<Vec<Tensor>> {
    let (dec, cnn) = reconstruct_traced(model, enc_state, events)?;
    drop(dec);
    Ok(cnn.into_iter().map(|c| c.out).collect())
}

fn reconstruct_traced(
    model: &BranchedModel,
    enc_state: &CellState,
    events: &[EventMap],
) -> Result<(Unrolled, Vec<CnnTrace>)> {
    let (_, _, r1) = model.require_unsupervised("reconstruct")?;
    let cfg = &model.config;
    if events.len() != cfg.target_len {
        return Err(Error::InvalidArgument(format!(
            "reconstruct: expected {} event maps, got {}",
            cfg.target_len,
            events.len()
        )));
    }
    let zeros = vec![Tensor::zeros(&[1, cfg.frame_size, cfg.frame_size]); cfg.target_len];
    let dec = unroll(r1, &zeros, enc_state, false)?;
    let cnn = dec
        .states
        .iter()
        .zip(events)
        .map(|(s, y)| cnn_forward(model, &concat_channels(&s.h, y.tensor())?))
        .collect::<Result<Vec<_>>>()?;
    Ok((dec, cnn))
}

// ---------------------------------------------------------------------------
// unsupervised objective
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct UnsupervisedTrace {
    encoder: Unrolled,
    events: EventBranch,
    heads: Vec<HeadTrace>,
    decoder: Unrolled,
    cnn: Vec<CnnTrace>,
    d_pred: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct ReconOutput {
    pub reconstruction: Vec<Tensor>,
    pub decoder_hiddens: Vec<Tensor>,
    pub events: Vec<EventMap>,
    pub loss: f64,
    pub trace: UnsupervisedTrace,
}

impl ReconOutput {
    /// Discrete routing decisions of every event head (for kink detection).
    pub fn routing(&self) -> Vec<usize> {
        self.trace.heads.iter().flat_map(|h| h.routing()).collect()
    }
}

/// Mean BCE over a frame sequence; returns the loss and per-frame gradients.
fn sequence_bce(pred: &[Tensor], target: &[Tensor]) -> Result<(f64, Vec<Tensor>)> {
    let m = pred[0].len();
    let stack = |v: &[Tensor]| -> Result<Tensor> {
        let mut data = Vec::with_capacity(v.len() * m);
        for t in v {
            data.extend_from_slice(t.data());
        }
        Tensor::new(&[v.len(), m], data)
    };
    let (loss, grad) = bce_loss(&stack(pred)?, &stack(target)?)?;
    let shape = pred[0].shape().to_vec();
    let grads = grad.data().chunks(m).map(|c| Tensor::new(&shape, c.to_vec())).collect::<Result<Vec<_>>>()?;
    Ok((loss, grads))
}

/// Full forward pass over `encoder_len + target_len` frames.
pub fn forward_unsupervised(model: &BranchedModel, frames: &[Tensor]) -> Result<ReconOutput> {
    let (_, proj, _) = model.require_unsupervised("forward_unsupervised")?;
    let cfg = &model.config;
    check_frames("forward_unsupervised", frames, cfg.sequence_len(), cfg.frame_size)?;
    let (observed, target) = frames.split_at(cfg.encoder_len);
    let encoder = encode_traced(model, observed)?;
    let events = run_event_branch(model, target)?;
    let mut maps = Vec::with_capacity(cfg.target_len);
    let mut heads = Vec::with_capacity(cfg.target_len);
    for h in events.ev3.hiddens() {
        let (m, tr) = event_head(h, proj, cfg.grid)?;
        maps.push(m);
        heads.push(tr);
    }
    let (decoder, cnn) = reconstruct_traced(model, &encoder.final_state, &maps)?;
    let reconstruction: Vec<Tensor> = cnn.iter().map(|c| c.out.clone()).collect();
    let (loss, d_pred) = sequence_bce(&reconstruction, target)?;
    Ok(ReconOutput {
        reconstruction,
        decoder_hiddens: decoder.hiddens().cloned().collect(),
        events: maps,
        loss,
        trace: UnsupervisedTrace { encoder, events, heads, decoder, cnn, d_pred },
    })
}

/// Gradient of the reconstruction loss with respect to every parameter.
pub fn backward_unsupervised(model: &BranchedModel, out: &ReconOutput) -> Result<BranchedModel> {
    let (e1, proj, r1) = model.require_unsupervised("backward_unsupervised")?;
    let tr = &out.trace;
    let s = model.config.hidden;
    let mut grads = model.zeros_like();

    let mut d_r = Vec::with_capacity(tr.cnn.len());
    let mut d_y = Vec::with_capacity(tr.cnn.len());
    for (c, d) in tr.cnn.iter().zip(&tr.d_pred) {
        let d_cat = cnn_backward(model, c, d, &mut grads)?;
        let (a, b) = concat_channels_backward(&d_cat, s)?;
        d_r.push(a);
        d_y.push(b);
    }

    // decoder, then encoder through the copied initial state
    let g_dec = bptt(r1, &tr.decoder, Some(&d_r), None)?;
    grads.decoder.as_mut().expect("unsupervised").add_assign(&g_dec.params);
    let g_enc = bptt(e1, &tr.encoder, None, Some(&g_dec.d_init))?;
    grads.encoder.as_mut().expect("unsupervised").add_assign(&g_enc.params);

    // event head, then the event branch
    let mut d_ev3 = Vec::with_capacity(d_y.len());
    for (h, d) in tr.heads.iter().zip(&d_y) {
        let g = event_head_backward(h, proj, d)?;
        let gp = grads.proj.as_mut().expect("unsupervised");
        gp.kernel.add_assign(&g.kernel);
        gp.bias.add_assign(&g.bias);
        d_ev3.push(g.input);
    }
    event_branch_backward(model, &tr.events, &d_ev3, &mut grads)?;
    Ok(grads)
}

// ---------------------------------------------------------------------------
// supervised variant
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct SupervisedOutput {
    /// Per-frame response maps `[1, M, M]` in (0, 1).
    pub maps: Vec<Tensor>,
    pub loss: f64,
    events: EventBranch,
    cnn: Vec<CnnTrace>,
    d_pred: Vec<Tensor>,
}

fn supervised_maps(model: &BranchedModel, frames: &[Tensor]) -> Result<(EventBranch, Vec<CnnTrace>)> {
    if model.kind != ModelKind::Supervised {
        return Err(Error::InvalidArgument("supervised forward needs a supervised model".into()));
    }
    check_frames("forward_supervised", frames, model.config.target_len, model.config.frame_size)?;
    let events = run_event_branch(model, frames)?;
    let cnn = events.ev3.hiddens().map(|h| cnn_forward(model, h)).collect::<Result<Vec<_>>>()?;
    Ok((events, cnn))
}

/// Response maps only (inference).
pub fn predict_supervised(model: &BranchedModel, frames: &[Tensor]) -> Result<Vec<Tensor>> {
    Ok(supervised_maps(model, frames)?.1.into_iter().map(|c| c.out).collect())
}

pub fn forward_supervised(model: &BranchedModel, frames: &[Tensor], targets: &[Tensor]) -> Result<SupervisedOutput> {
    if targets.len() != frames.len() {
        return Err(Error::InvalidArgument(format!(
            "forward_supervised: {} frames but {} targets",
            frames.len(),
            targets.len()
        )));
    }
    let (events, cnn) = supervised_maps(model, frames)?;
    let maps: Vec<Tensor> = cnn.iter().map(|c| c.out.clone()).collect();
    let (loss, d_pred) = sequence_bce(&maps, targets)?;
    Ok(SupervisedOutput { maps, loss, events, cnn, d_pred })
}

pub fn backward_supervised(model: &BranchedModel, out: &SupervisedOutput) -> Result<BranchedModel> {
    let mut grads = model.zeros_like();
    let mut d_ev3 = Vec::with_capacity(out.cnn.len());
    for (c, d) in out.cnn.iter().zip(&out.d_pred) {
        d_ev3.push(cnn_backward(model, c, d, &mut grads)?);
    }
    event_branch_backward(model, &out.events, &d_ev3, &mut grads)?;
    Ok(grads)
}

pub const TARGET_BACKGROUND: f64 = 0.1;
pub const TARGET_OUTER: f64 = 0.6;
pub const TARGET_INNER: f64 = 1.0;
pub const TARGET_OUTER_SIZE: usize = 20;
pub const TARGET_INNER_SIZE: usize = 7;

/// Supervised training targets: background 0.1, a 20×20 square of 0.6 and a
/// 7×7 square of 1.0 around every annotated pixel of that frame. Annotation
/// frames are relative to the sequence; squares are clipped at the borders
/// and overlaps keep the maximum. An even-sized square centred on pixel `c`
/// spans `c - size/2 ..= c + size/2 - 1`.
pub fn build_supervised_target(annotations: &[Annotation], size: usize, length: usize) -> Vec<Tensor> {
    let mut frames = vec![Tensor::full(&[1, size, size], TARGET_BACKGROUND); length];
    let paint = |frame: &mut Tensor, a: &Annotation, side: usize, value: f64| {
        let lo = |c: usize| c.saturating_sub(side / 2);
        let hi = |c: usize| (c + side - side / 2).min(size);
        for y in lo(a.y)..hi(a.y) {
            for x in lo(a.x)..hi(a.x) {
                let v = frame.get3(0, y, x).max(value);
                frame.set3(0, y, x, v);
            }
        }
    };
    for a in annotations.iter().filter(|a| a.frame < length && a.x < size && a.y < size) {
        let frame = &mut frames[a.frame];
        paint(frame, a, TARGET_OUTER_SIZE, TARGET_OUTER);
        paint(frame, a, TARGET_INNER_SIZE, TARGET_INNER);
    }
    frames
}

#[cfg(test)]
mod tests;
