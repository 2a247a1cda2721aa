//! RMSProp training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::network::{
    backward_supervised, backward_unsupervised, forward_supervised, forward_unsupervised, BranchedModel, ModelKind,
};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// RMSProp decay `ρ`.
    pub decay: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Rescale the summed batch gradient to at most this global L2 norm.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, decay: 0.9, epsilon: 1e-8, epochs: 100, seed: 0, clip_norm: None, batch_size: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate must be finite and >= 0, got {}", self.learning_rate)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip norm must be > 0".into()));
        }
        Ok(())
    }
}

/// Running mean-square accumulators, one per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub accum: Vec<f64>,
}

impl OptState {
    pub fn new(model: &BranchedModel) -> Self {
        Self { accum: vec![0.0; model.parameter_count()] }
    }
}

/// One RMSProp update over flat parameter and gradient slices.
pub fn rmsprop_update(params: &mut [f64], grads: &[f64], accum: &mut [f64], cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != accum.len() {
        return Err(Error::shape(
            "rmsprop_step",
            format!("params {}, grads {}, accumulators {}", params.len(), grads.len(), accum.len()),
        ));
    }
    let (lr, rho, eps) = (cfg.learning_rate, cfg.decay, cfg.epsilon);
    for ((p, &g), a) in params.iter_mut().zip(grads).zip(accum.iter_mut()) {
        *a = rho * *a + (1.0 - rho) * g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
    Ok(())
}

/// RMSProp step applied to every tensor of `model`, in checkpoint order.
pub fn rmsprop_step(
    model: &mut BranchedModel,
    grads: &BranchedModel,
    opt: &mut OptState,
    cfg: &TrainConfig,
) -> Result<()> {
    if model.kind != grads.kind || model.config != grads.config || opt.accum.len() != model.parameter_count() {
        return Err(Error::shape("rmsprop_step", String::from("gradient or optimizer state does not match the model")));
    }
    let mut offset = 0;
    for ((_, p), (_, g)) in model.named_tensors_mut().into_iter().zip(grads.named_tensors()) {
        let n = p.len();
        rmsprop_update(p.data_mut(), g.data(), &mut opt.accum[offset..offset + n], cfg)?;
        offset += n;
    }
    Ok(())
}

/// One training sequence. Unsupervised samples hold `encoder_len +
/// target_len` frames; supervised samples hold `target_len` frames and as
/// many target maps.
#[derive(Clone, Debug)]
pub struct Sample {
    pub frames: Vec<Tensor>,
    pub targets: Option<Vec<Tensor>>,
}

/// Loss and gradient of one sample.
pub fn sample_gradient(model: &BranchedModel, sample: &Sample) -> Result<(f64, BranchedModel)> {
    match model.kind {
        ModelKind::Unsupervised => {
            let out = forward_unsupervised(model, &sample.frames)?;
            Ok((out.loss, backward_unsupervised(model, &out)?))
        }
        ModelKind::Supervised => {
            let targets = sample
                .targets
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("supervised training needs targets on every sample".into()))?;
            let out = forward_supervised(model, &sample.frames, targets)?;
            Ok((out.loss, backward_supervised(model, &out)?))
        }
    }
}

fn clip(grads: &mut BranchedModel, max_norm: Option<f64>) {
    if let Some(max) = max_norm {
        let norm = grads.global_norm();
        if norm > max {
            grads.scale(max / norm);
        }
    }
}

/// Train in place; returns the mean loss of every epoch. `on_epoch` sees
/// each `(epoch, mean_loss, model)` as it completes (epochs count from 1).
pub fn train_with(
    model: &mut BranchedModel,
    data: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &BranchedModel),
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = OptState::new(model);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<BranchedModel> = None;
            for &i in batch {
                let (loss, g) = sample_gradient(model, &data[i])?;
                total += loss;
                match acc.as_mut() {
                    Some(a) => a.add_assign(&g),
                    None => acc = Some(g),
                }
            }
            let mut g = acc.expect("chunks are non-empty");
            if batch.len() > 1 {
                g.scale(1.0 / batch.len() as f64);
            }
            clip(&mut g, cfg.clip_norm);
            rmsprop_step(model, &g, &mut opt, cfg)?;
        }
        let mean = total / data.len() as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidArgument(format!("loss diverged at epoch {epoch}")));
        }
        curve.push(mean);
        on_epoch(epoch, mean, model);
    }
    Ok(curve)
}

pub fn train(model: &mut BranchedModel, data: &[Sample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    train_with(model, data, cfg, |_, _, _| {})
}

pub fn format_loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in curve.iter().enumerate() {
        s.push_str(&format!("{},{}\n", i + 1, l));
    }
    s
}

pub fn write_loss_csv(curve: &[f64], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_loss_csv(curve).as_bytes()).map_err(|e| Error::io(path, e))
}
