//! Frame and annotation I/O, windowing, downsampling, augmentation and the
//! synthetic video generator.

mod annotations;
mod augment;
mod image;
mod subsequence;
mod synth;
mod video;
mod windows;

pub use annotations::*;
pub use augment::*;
pub use image::*;
pub use subsequence::*;
pub use synth::*;
pub use video::*;
pub use windows::*;
