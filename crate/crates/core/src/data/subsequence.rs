//! Model-resolution subsequences cut from a video, with the bookkeeping
//! needed to map points back to original pixel coordinates.

use std::ops::Range;

use super::annotations::Annotation;
use super::augment::Augmentation;
use super::video::Video;
use super::windows::{extract_window, spatial_windows, temporal_windows};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial window side and step in original pixels, and the downsample factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub size: usize,
    pub step: usize,
    pub factor: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { size: 256, step: 128, factor: 4 }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.step == 0 || self.factor == 0 || self.size % self.factor != 0 {
            return Err(Error::Config(format!(
                "window size {} must be a positive multiple of factor {} (step {})",
                self.size, self.factor, self.step
            )));
        }
        Ok(())
    }

    /// Side of a window at model resolution.
    pub fn model_size(&self) -> usize {
        self.size / self.factor
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Provenance {
    pub x0: usize,
    pub y0: usize,
    /// Absolute index of the first frame.
    pub start: usize,
    pub augmentation: Augmentation,
    pub spec: WindowSpec,
}

impl Provenance {
    /// Original-resolution pixel for a model pixel (centre of its block).
    pub fn to_original(&self, x: usize, y: usize) -> (usize, usize) {
        let m = self.spec.model_size();
        let (ux, uy) = self.augmentation.inverse().map_point(x, y, m);
        let f = self.spec.factor;
        (self.x0 + ux * f + f / 2, self.y0 + uy * f + f / 2)
    }

    /// Model pixel containing an original pixel, if it lies in this window.
    pub fn to_model(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let s = self.spec.size;
        if x < self.x0 || y < self.y0 || x >= self.x0 + s || y >= self.y0 + s {
            return None;
        }
        let f = self.spec.factor;
        Some(self.augmentation.map_point((x - self.x0) / f, (y - self.y0) / f, self.spec.model_size()))
    }

    /// Annotations falling in this window and in `len` frames from `start`,
    /// with frames made relative and positions in model coordinates.
    pub fn localize(&self, annotations: &[Annotation], len: usize) -> Vec<Annotation> {
        annotations
            .iter()
            .filter(|a| a.frame >= self.start && a.frame < self.start + len)
            .filter_map(|a| self.to_model(a.x, a.y).map(|(x, y)| Annotation::new(a.frame - self.start, x, y)))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Subsequence {
    pub frames: Vec<Tensor>,
    pub provenance: Provenance,
}

/// Frames `start..start + len` of one window, rescaled and downsampled.
pub fn window_sequence(video: &Video, prov: &Provenance, len: usize) -> Result<Vec<Tensor>> {
    if prov.start + len > video.frame_count() {
        return Err(Error::InvalidArgument(format!(
            "frames {}..{} exceed the {}-frame video",
            prov.start,
            prov.start + len,
            video.frame_count()
        )));
    }
    video.frames[prov.start..prov.start + len]
        .iter()
        .map(|f| prov.augmentation.apply(&extract_window(f, prov.x0, prov.y0, prov.spec.size, prov.spec.factor)?))
        .collect()
}

/// Every window × temporal start (× augmentation) within `frames` of `video`.
pub fn build_subsequences(
    video: &Video,
    frames: Range<usize>,
    spec: WindowSpec,
    len: usize,
    temporal_step: usize,
    augment: bool,
) -> Result<Vec<Subsequence>> {
    spec.validate()?;
    if frames.end > video.frame_count() || frames.start >= frames.end {
        return Err(Error::InvalidArgument(format!(
            "frame range {}..{} invalid for a {}-frame video",
            frames.start,
            frames.end,
            video.frame_count()
        )));
    }
    let origins = spatial_windows(video.width, video.height, spec.size, spec.step)?;
    let starts = temporal_windows(frames.end - frames.start, len, temporal_step)?;
    let augs: &[Augmentation] = if augment { &Augmentation::ALL } else { &[Augmentation::Identity] };
    let mut out = Vec::with_capacity(origins.len() * starts.len() * augs.len());
    for &s in &starts {
        for &(x0, y0) in &origins {
            let base = Provenance { x0, y0, start: frames.start + s, augmentation: Augmentation::Identity, spec };
            let plain = window_sequence(video, &base, len)?;
            for &a in augs {
                let frames = if a == Augmentation::Identity {
                    plain.clone()
                } else {
                    plain.iter().map(|f| a.apply(f)).collect::<Result<Vec<_>>>()?
                };
                out.push(Subsequence { frames, provenance: Provenance { augmentation: a, ..base } });
            }
        }
    }
    Ok(out)
}
