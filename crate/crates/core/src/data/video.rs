//! Frame directories (`frame_%04d.pgm` / `.png`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::image::{read_image, write_pgm, GrayImage};
use crate::error::{Error, Result};

/// An ordered, dimension-checked list of frame files.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSource {
    pub paths: Vec<PathBuf>,
    pub width: usize,
    pub height: usize,
}

impl VideoSource {
    pub fn frame_count(&self) -> usize {
        self.paths.len()
    }

    pub fn read_frame(&self, index: usize) -> Result<GrayImage> {
        let path = &self.paths[index];
        let img = read_image(path)?;
        if (img.width, img.height) != (self.width, self.height) {
            return Err(Error::FrameDims {
                path: path.clone(),
                got_w: img.width,
                got_h: img.height,
                want_w: self.width,
                want_h: self.height,
            });
        }
        Ok(img)
    }

    /// Read frames `range` into memory.
    pub fn load(&self, range: std::ops::Range<usize>) -> Result<Video> {
        if range.end > self.frame_count() || range.start > range.end {
            return Err(Error::InvalidArgument(format!(
                "frame range {}..{} outside a {}-frame video",
                range.start,
                range.end,
                self.frame_count()
            )));
        }
        let frames = range.map(|i| self.read_frame(i)).collect::<Result<Vec<_>>>()?;
        Ok(Video { width: self.width, height: self.height, frames })
    }

    pub fn load_all(&self) -> Result<Video> {
        self.load(0..self.frame_count())
    }
}

/// Frames held in memory as 8-bit images.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<GrayImage>,
}

impl Video {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Frames `range` as a new video.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Video> {
        if range.end > self.frame_count() || range.start > range.end {
            return Err(Error::InvalidArgument(format!(
                "frame range {}..{} outside a {}-frame video",
                range.start,
                range.end,
                self.frame_count()
            )));
        }
        Ok(Video { width: self.width, height: self.height, frames: self.frames[range].to_vec() })
    }
}

fn frame_index(name: &str) -> Option<usize> {
    let stem = name.strip_prefix("frame_")?;
    let digits = stem.strip_suffix(".pgm").or_else(|| stem.strip_suffix(".png"))?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Scan `dir` for `frame_NNNN.pgm|png`, require contiguous indices from 0 and
/// equal dimensions. Every frame is opened once to validate it.
pub fn load_frames(dir: &Path) -> Result<VideoSource> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: BTreeMap<usize, PathBuf> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(i) = name.to_str().and_then(frame_index) {
            if let Some(prev) = found.insert(i, entry.path()) {
                return Err(Error::InvalidArgument(format!(
                    "frame index {i} appears twice ({} and {})",
                    prev.display(),
                    entry.path().display()
                )));
            }
        }
    }
    if found.is_empty() {
        return Err(Error::InvalidArgument(format!("no frame_NNNN.pgm/png files in {}", dir.display())));
    }
    if let Some(missing) = (0..found.len()).find(|i| !found.contains_key(i)) {
        return Err(Error::FrameGap { missing });
    }
    let paths: Vec<PathBuf> = found.into_values().collect();
    let first = read_image(&paths[0])?;
    let source = VideoSource { width: first.width, height: first.height, paths };
    for i in 1..source.frame_count() {
        source.read_frame(i)?;
    }
    Ok(source)
}

/// Write frames as `frame_%04d.pgm`.
pub fn write_frames(video: &Video, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in video.frames.iter().enumerate() {
        write_pgm(f, &dir.join(format!("frame_{i:04}.pgm")))?;
    }
    Ok(())
}
