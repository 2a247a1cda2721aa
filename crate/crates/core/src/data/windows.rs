//! Rescaling, spatial and temporal windows, block-mean downsampling.

use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pixel values divided by 255 into a `[1, H, W]` tensor.
pub fn rescale_unit(img: &GrayImage) -> Tensor {
    Tensor::new(&[1, img.height, img.width], img.pixels.iter().map(|&p| p as f64 / 255.0).collect())
        .expect("image dims match pixel count")
}

/// Window origins along one axis: multiples of `step` while the window fits,
/// plus one window flush with the far edge if the last aligned one stops short.
pub fn window_origins(dim: usize, size: usize, step: usize) -> Result<Vec<usize>> {
    if size == 0 || step == 0 {
        return Err(Error::InvalidArgument("window size and step must be >= 1".into()));
    }
    if dim < size {
        return Err(Error::InvalidArgument(format!("frame dimension {dim} is smaller than window {size}")));
    }
    let mut origins: Vec<usize> = (0..).map(|i| i * step).take_while(|o| o + size <= dim).collect();
    let last = *origins.last().expect("origin 0 always fits");
    if last + size < dim {
        origins.push(dim - size);
    }
    Ok(origins)
}

/// All `(x0, y0)` window origins, row-major.
pub fn spatial_windows(width: usize, height: usize, size: usize, step: usize) -> Result<Vec<(usize, usize)>> {
    let xs = window_origins(width, size, step)?;
    let ys = window_origins(height, size, step)?;
    Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
}

pub fn temporal_windows(frame_count: usize, length: usize, step: usize) -> Result<Vec<usize>> {
    if length == 0 || step == 0 {
        return Err(Error::InvalidArgument("sequence length and step must be >= 1".into()));
    }
    if frame_count < length {
        return Err(Error::InvalidArgument(format!("{frame_count} frames cannot hold a {length}-frame window")));
    }
    Ok((0..=frame_count - length).step_by(step).collect())
}

/// Mean over non-overlapping `factor × factor` blocks of every channel.
pub fn downsample(input: &Tensor, factor: usize) -> Result<Tensor> {
    let (c, h, w) = input.dims3()?;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!("{h}x{w} is not divisible by downsample factor {factor}")));
    }
    if factor == 1 {
        return Ok(input.clone());
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let norm = 1.0 / (factor * factor) as f64;
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = out.channel_mut(ch);
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            let drow = &mut dst[(y / factor) * ow..(y / factor + 1) * ow];
            for (x, v) in row.iter().enumerate() {
                drow[x / factor] += v;
            }
        }
        dst.iter_mut().for_each(|v| *v *= norm);
    }
    Ok(out)
}

pub fn downsample4(input: &Tensor) -> Result<Tensor> {
    downsample(input, 4)
}

/// Crop `size × size` at `(x0, y0)`, rescale to [0, 1] and block-mean downsample.
pub fn extract_window(img: &GrayImage, x0: usize, y0: usize, size: usize, factor: usize) -> Result<Tensor> {
    if x0 + size > img.width || y0 + size > img.height {
        return Err(Error::InvalidArgument(format!(
            "window {size} at ({x0},{y0}) exceeds {}x{} frame",
            img.width, img.height
        )));
    }
    let mut data = Vec::with_capacity(size * size);
    for y in y0..y0 + size {
        data.extend(img.pixels[y * img.width + x0..y * img.width + x0 + size].iter().map(|&p| p as f64 / 255.0));
    }
    downsample(&Tensor::new(&[1, size, size], data)?, factor)
}
