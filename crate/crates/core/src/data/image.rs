//! 8-bit grayscale images: binary PGM (P5) and PNG.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major pixels.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image { path: path.to_path_buf(), msg: msg.into() }
}

/// Parse binary PGM bytes. Comments (`#` to end of line) are allowed in the header.
pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 0;
    let mut token = || -> Option<&[u8]> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| &bytes[start..pos])
    };
    if token() != Some(b"P5") {
        return Err(image_err(path, "not a binary PGM (expected P5 magic)"));
    }
    let mut field = |name: &str| -> Result<usize> {
        let t = token().ok_or_else(|| image_err(path, format!("header ends before {name}")))?;
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err(path, format!("bad {name} {:?}", String::from_utf8_lossy(t))))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(image_err(path, format!("maxval {maxval} unsupported (only 8-bit)")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height;
    if bytes.len() < start + n {
        return Err(image_err(
            path,
            format!("raster truncated: need {n} bytes, have {}", bytes.len().saturating_sub(start)),
        ));
    }
    let mut pixels = bytes[start..start + n].to_vec();
    if maxval != 255 {
        pixels.iter_mut().for_each(|p| *p = ((*p as usize * 255 + maxval / 2) / maxval).min(255) as u8);
    }
    Ok(GrayImage { width, height, pixels })
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn decode_png(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let pixels: Vec<u8> = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => {
            buf[..w * h * channels].chunks(channels).map(|c| c[0]).collect()
        }
        png::ColorType::Rgb | png::ColorType::Rgba => buf[..w * h * channels]
            .chunks(channels)
            .map(|c| ((c[0] as u32 * 299 + c[1] as u32 * 587 + c[2] as u32 * 114 + 500) / 1000) as u8)
            .collect(),
        png::ColorType::Indexed => return Err(image_err(path, "indexed PNG was not expanded")),
    };
    Ok(GrayImage { width: w, height: h, pixels })
}

/// Encode 8-bit grayscale (one channel) or RGB (three channels) pixels as PNG.
pub fn encode_png(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let color = match channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        _ => return Err(Error::InvalidArgument(format!("PNG export supports 1 or 3 channels, got {channels}"))),
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| Error::InvalidArgument(e.to_string()))?;
        w.write_image_data(pixels).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(out)
}

/// Read a PGM or PNG file, chosen by magic bytes.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes, path)
    } else {
        decode_pgm(&bytes, path)
    }
}

pub fn write_pgm(img: &GrayImage, path: &Path) -> Result<()> {
    write_bytes(&encode_pgm(img), path)
}

pub fn write_png_gray(img: &GrayImage, path: &Path) -> Result<()> {
    write_bytes(&encode_png(img.width, img.height, 1, &img.pixels)?, path)
}

pub(crate) fn write_bytes(bytes: &[u8], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}
