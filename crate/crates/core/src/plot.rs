//! Minimal raster charts (axes and data only, no text) encoded as PNG.

use std::path::Path;

use crate::data::{encode_png, write_bytes};
use crate::error::Result;

pub const WIDTH: usize = 480;
pub const HEIGHT: usize = 320;
const MARGIN: usize = 24;

const WHITE: [u8; 3] = [255, 255, 255];
const AXIS: [u8; 3] = [40, 40, 40];
const LINE: [u8; 3] = [31, 99, 180];
const BAR: [u8; 3] = [120, 120, 120];

struct Canvas {
    rgb: Vec<u8>,
}

impl Canvas {
    fn new() -> Self {
        let mut c = Self { rgb: WHITE.repeat(WIDTH * HEIGHT) };
        for x in MARGIN..WIDTH - MARGIN / 2 {
            c.set(x, HEIGHT - MARGIN, AXIS);
        }
        for y in MARGIN / 2..=HEIGHT - MARGIN {
            c.set(MARGIN, y, AXIS);
        }
        c
    }

    fn set(&mut self, x: usize, y: usize, color: [u8; 3]) {
        if x < WIDTH && y < HEIGHT {
            let i = (y * WIDTH + x) * 3;
            self.rgb[i..i + 3].copy_from_slice(&color);
        }
    }

    fn line(&mut self, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: [u8; 3]) {
        let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
            self.set(x.round() as usize, y.round() as usize, color);
            self.set(x.round() as usize, y.round() as usize + 1, color);
        }
    }

    fn png(&self) -> Result<Vec<u8>> {
        encode_png(WIDTH, HEIGHT, 3, &self.rgb)
    }
}

/// Plot area in pixels: left, top, width, height.
fn area() -> (f64, f64, f64, f64) {
    let (l, t) = (MARGIN as f64 + 2.0, MARGIN as f64 / 2.0);
    (l, t, WIDTH as f64 - MARGIN as f64 / 2.0 - l, HEIGHT as f64 - MARGIN as f64 - 2.0 - t)
}

/// Line chart of `values` against their index; the y-axis spans `[min, max]`.
pub fn line_chart(values: &[f64]) -> Result<Vec<u8>> {
    let mut c = Canvas::new();
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() == values.len() && !values.is_empty() {
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let (l, t, w, h) = area();
        let n = values.len().max(2) - 1;
        let pt = |i: usize, v: f64| (l + w * i as f64 / n as f64, t + h * (1.0 - (v - lo) / span));
        if values.len() == 1 {
            c.line(pt(0, values[0]), pt(1, values[0]), LINE);
        }
        for i in 1..values.len() {
            c.line(pt(i - 1, values[i - 1]), pt(i, values[i]), LINE);
        }
    }
    c.png()
}

/// Bar chart with one bar per count, scaled to the largest.
pub fn bar_chart(counts: &[usize]) -> Result<Vec<u8>> {
    let mut c = Canvas::new();
    let top = counts.iter().copied().max().unwrap_or(0);
    if top > 0 {
        let (l, t, w, h) = area();
        let slot = w / counts.len() as f64;
        for (i, &n) in counts.iter().enumerate().filter(|&(_, &n)| n > 0) {
            let x0 = (l + slot * (i as f64 + 0.15)).round() as usize;
            let x1 = (l + slot * (i as f64 + 0.85)).round() as usize;
            let y0 = (t + h * (1.0 - n as f64 / top as f64)).round() as usize;
            for x in x0..x1.max(x0 + 1) {
                for y in y0..(t + h).round() as usize + 1 {
                    c.set(x, y, BAR);
                }
            }
        }
    }
    c.png()
}

pub fn write_line_chart(values: &[f64], path: &Path) -> Result<()> {
    write_bytes(&line_chart(values)?, path)
}

pub fn write_bar_chart(counts: &[usize], path: &Path) -> Result<()> {
    write_bytes(&bar_chart(counts)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decode(bytes: &[u8]) -> Vec<u8> {
        let mut r = png::Decoder::new(std::io::Cursor::new(bytes)).read_info().unwrap();
        let mut buf = vec![0; r.output_buffer_size().unwrap()];
        let info = r.next_frame(&mut buf).unwrap();
        assert_eq!((info.width as usize, info.height as usize), (WIDTH, HEIGHT));
        buf
    }

    fn count(rgb: &[u8], color: [u8; 3]) -> usize {
        rgb.chunks(3).filter(|p| *p == color).count()
    }

    #[test]
    fn line_chart_draws_curve() {
        let rgb = decode(&line_chart(&[1.0, 0.5, 0.25, 0.2]).unwrap());
        assert!(count(&rgb, LINE) > WIDTH / 2);
        assert!(count(&rgb, AXIS) > WIDTH);
        // a decreasing curve starts near the top left
        let (l, t, _, _) = area();
        let first = ((t as usize) * WIDTH + l as usize) * 3;
        assert_eq!(&rgb[first..first + 3], &LINE);
        assert_eq!(count(&decode(&line_chart(&[]).unwrap()), LINE), 0);
        assert!(count(&decode(&line_chart(&[3.0]).unwrap()), LINE) > 0);
    }

    #[test]
    fn bar_heights_scale() {
        let rgb = decode(&bar_chart(&[0, 4, 2]).unwrap());
        let column = |x: usize| (0..HEIGHT).filter(|&y| rgb[(y * WIDTH + x) * 3..][..3] == BAR).count();
        let (l, _, w, _) = area();
        let mid = |i: usize| (l + w / 3.0 * (i as f64 + 0.5)) as usize;
        assert_eq!(column(mid(0)), 0);
        let (a, b) = (column(mid(1)), column(mid(2)));
        assert!(a > 0 && (a as f64 / b as f64 - 2.0).abs() < 0.05, "{a} {b}");
        assert_eq!(count(&decode(&bar_chart(&[0, 0]).unwrap()), BAR), 0);
    }
}
