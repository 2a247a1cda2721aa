//! End-to-end plumbing: training sets cut from a video, and detection runs
//! that map window-level results back to original coordinates.

use std::ops::Range;

use crate::data::{
    spatial_windows, temporal_windows, window_sequence, Annotation, Augmentation, Provenance, Video, WindowSpec,
};
use crate::error::{Error, Result};
use crate::network::{build_supervised_target, detect_events, predict_supervised, BranchedModel, EventMap, ModelKind};
use crate::postprocess::{
    group_activations, locate_centroid, merge_global, rank_classes, threshold_detections, ClassScore, Detection,
};
use crate::tensor::Tensor;
use crate::training::Sample;

/// Windowing and post-processing settings shared by training and detection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub window: WindowSpec,
    pub temporal_step: usize,
    pub augment: bool,
    pub dt: usize,
    pub radius: f64,
    pub threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window: WindowSpec::default(),
            temporal_step: 1,
            augment: true,
            dt: crate::postprocess::DEFAULT_DT,
            radius: crate::postprocess::DEFAULT_RADIUS,
            threshold: crate::postprocess::SUPERVISED_THRESHOLD,
        }
    }
}

/// Window provenances for every spatial origin and temporal start of
/// `len`-frame sequences inside `range`, temporal starts outermost.
pub fn provenances(
    video: &Video,
    range: Range<usize>,
    spec: WindowSpec,
    len: usize,
    step: usize,
) -> Result<Vec<Provenance>> {
    spec.validate()?;
    if range.end > video.frame_count() || range.start >= range.end {
        return Err(Error::InvalidArgument(format!(
            "frame range {}..{} invalid for a {}-frame video",
            range.start,
            range.end,
            video.frame_count()
        )));
    }
    let origins = spatial_windows(video.width, video.height, spec.size, spec.step)?;
    let starts = temporal_windows(range.end - range.start, len, step)?;
    Ok(starts
        .iter()
        .flat_map(|&s| {
            origins.iter().map(move |&(x0, y0)| Provenance {
                x0,
                y0,
                start: range.start + s,
                augmentation: Augmentation::Identity,
                spec,
            })
        })
        .collect())
}

fn check_model_size(model: &BranchedModel, spec: WindowSpec) -> Result<()> {
    if spec.model_size() != model.config.frame_size {
        return Err(Error::Config(format!(
            "window {} / factor {} gives {}-pixel frames but the model expects {}",
            spec.size,
            spec.factor,
            spec.model_size(),
            model.config.frame_size
        )));
    }
    Ok(())
}

fn variants(frames: Vec<Tensor>, augment: bool) -> Result<Vec<(Augmentation, Vec<Tensor>)>> {
    if !augment {
        return Ok(vec![(Augmentation::Identity, frames)]);
    }
    Augmentation::ALL.iter().map(|&a| Ok((a, frames.iter().map(|f| a.apply(f)).collect::<Result<Vec<_>>>()?))).collect()
}

/// Training samples for `model`'s kind. Unsupervised samples span
/// `encoder_len + target_len` frames; supervised ones `target_len` frames
/// with targets built from `annotations` (original coordinates).
pub fn training_samples(
    model: &BranchedModel,
    video: &Video,
    range: Range<usize>,
    annotations: Option<&[Annotation]>,
    cfg: &PipelineConfig,
) -> Result<Vec<Sample>> {
    check_model_size(model, cfg.window)?;
    let net = &model.config;
    let len = match model.kind {
        ModelKind::Unsupervised => net.sequence_len(),
        ModelKind::Supervised => net.target_len,
    };
    let anns = match model.kind {
        ModelKind::Supervised => {
            Some(annotations.ok_or_else(|| Error::InvalidArgument("supervised training needs annotations".into()))?)
        }
        ModelKind::Unsupervised => None,
    };
    let mut out = Vec::new();
    for base in provenances(video, range, cfg.window, len, cfg.temporal_step)? {
        let frames = window_sequence(video, &base, len)?;
        for (a, frames) in variants(frames, cfg.augment)? {
            let targets = anns.map(|anns| {
                let prov = Provenance { augmentation: a, ..base };
                build_supervised_target(&prov.localize(anns, len), net.frame_size, len)
            });
            out.push(Sample { frames, targets });
        }
    }
    Ok(out)
}

/// One detection window: event maps over the first `target_len` frames and
/// all frames including the lookahead.
struct EventWindow {
    prov: Provenance,
    maps: Vec<EventMap>,
    frames: Vec<Tensor>,
}

fn event_windows(
    model: &BranchedModel,
    video: &Video,
    range: Range<usize>,
    cfg: &PipelineConfig,
) -> Result<Vec<EventWindow>> {
    check_model_size(model, cfg.window)?;
    let t = model.config.target_len;
    let len = t + cfg.dt;
    provenances(video, range, cfg.window, len, cfg.temporal_step)?
        .into_iter()
        .map(|prov| {
            let frames = window_sequence(video, &prov, len)?;
            let maps = detect_events(model, &frames[..t])?;
            Ok(EventWindow { prov, maps, frames })
        })
        .collect()
}

/// Classes of an unsupervised model ranked by mean brightness increase.
pub fn class_ranking(
    model: &BranchedModel,
    video: &Video,
    range: Range<usize>,
    cfg: &PipelineConfig,
) -> Result<Vec<ClassScore>> {
    let windows = event_windows(model, video, range, cfg)?;
    let items: Vec<(&[EventMap], &[Tensor])> = windows.iter().map(|w| (&w.maps[..], &w.frames[..])).collect();
    Ok(rank_classes(&items, cfg.dt, cfg.radius))
}

/// Unsupervised detections of `class`, merged across windows.
pub fn detect_unsupervised(
    model: &BranchedModel,
    video: &Video,
    range: Range<usize>,
    class: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<Detection>> {
    if class >= model.config.classes {
        return Err(Error::InvalidArgument(format!(
            "division class {class} out of range for {} classes",
            model.config.classes
        )));
    }
    let mut raw = Vec::new();
    for w in event_windows(model, video, range, cfg)? {
        for patch in group_activations(&w.maps, class) {
            if let Some(l) = locate_centroid(&w.frames, &patch, model.config.grid, cfg.dt, cfg.radius) {
                let (x, y) = w.prov.to_original(l.x, l.y);
                raw.push(Detection { frame: w.prov.start + l.frame, x, y, class, score: l.score });
            }
        }
    }
    Ok(merge_global(&raw))
}

/// Supervised detections: thresholded response-map components, merged.
pub fn detect_supervised(
    model: &BranchedModel,
    video: &Video,
    range: Range<usize>,
    cfg: &PipelineConfig,
) -> Result<Vec<Detection>> {
    check_model_size(model, cfg.window)?;
    let len = model.config.target_len;
    let mut raw = Vec::new();
    for prov in provenances(video, range, cfg.window, len, cfg.temporal_step)? {
        let maps = predict_supervised(model, &window_sequence(video, &prov, len)?)?;
        for l in threshold_detections(&maps, cfg.threshold)? {
            let (x, y) = prov.to_original(l.x, l.y);
            raw.push(Detection { frame: prov.start + l.frame, x, y, class: 0, score: l.score });
        }
    }
    Ok(merge_global(&raw))
}
