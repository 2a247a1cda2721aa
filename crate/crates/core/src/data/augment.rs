//! The six flip/rotation variants applied to square frame sequences.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Augmentation {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
}

impl Augmentation {
    pub const ALL: [Augmentation; 6] = [
        Augmentation::Identity,
        Augmentation::FlipH,
        Augmentation::FlipV,
        Augmentation::Rot90,
        Augmentation::Rot180,
        Augmentation::Rot270,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Augmentation::Identity => "id",
            Augmentation::FlipH => "hflip",
            Augmentation::FlipV => "vflip",
            Augmentation::Rot90 => "rot90",
            Augmentation::Rot180 => "rot180",
            Augmentation::Rot270 => "rot270",
        }
    }

    pub fn inverse(self) -> Self {
        match self {
            Augmentation::Rot90 => Augmentation::Rot270,
            Augmentation::Rot270 => Augmentation::Rot90,
            other => other,
        }
    }

    /// Where pixel `(x, y)` of an `m × m` frame lands.
    pub fn map_point(self, x: usize, y: usize, m: usize) -> (usize, usize) {
        let (fx, fy) = (m - 1 - x, m - 1 - y);
        match self {
            Augmentation::Identity => (x, y),
            Augmentation::FlipH => (fx, y),
            Augmentation::FlipV => (x, fy),
            Augmentation::Rot90 => (fy, x),
            Augmentation::Rot180 => (fx, fy),
            Augmentation::Rot270 => (y, fx),
        }
    }

    /// Transform every channel of a square `[C, M, M]` tensor.
    pub fn apply(self, t: &Tensor) -> Result<Tensor> {
        let (c, h, w) = t.dims3()?;
        if h != w {
            return Err(Error::InvalidArgument(format!("augmentation needs square frames, got {h}x{w}")));
        }
        if self == Augmentation::Identity {
            return Ok(t.clone());
        }
        let mut out = Tensor::zeros(t.shape());
        for ch in 0..c {
            let src = t.channel(ch);
            let dst = out.channel_mut(ch);
            for y in 0..h {
                for x in 0..w {
                    let (nx, ny) = self.map_point(x, y, w);
                    dst[ny * w + nx] = src[y * w + x];
                }
            }
        }
        Ok(out)
    }
}

/// All six variants of a frame sequence, in [`Augmentation::ALL`] order.
pub fn augment(frames: &[Tensor]) -> Result<Vec<(Augmentation, Vec<Tensor>)>> {
    Augmentation::ALL.iter().map(|&a| Ok((a, frames.iter().map(|f| a.apply(f)).collect::<Result<Vec<_>>>()?))).collect()
}
