//! Synthetic time-lapse videos of drifting Gaussian blobs that divide.
//!
//! A division starting at frame `s` elongates the blob at `s` and `s + 1`,
//! splits it into two daughters at `s + 2` and lays a transient glow over the
//! division site that peaks at `s + 2`. The annotation is the midpoint
//! between the daughters on frame `s + 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::annotations::Annotation;
use super::image::GrayImage;
use super::video::Video;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub size: usize,
    pub frames: usize,
    /// Blobs present at frame 0.
    pub blobs: usize,
    /// No divisions start once this many blobs exist.
    pub max_blobs: usize,
    /// Blob radius in pixels (Gaussian sigma is 0.6 × radius).
    pub radius: f64,
    /// Per-frame random-walk standard deviation, pixels.
    pub drift: f64,
    pub division_prob: f64,
    /// Frames after birth before a blob may divide again.
    pub refractory: usize,
    pub background: f64,
    pub peak: f64,
    /// Minimum rise at the annotated pixel between `frame − 2` and `frame`.
    pub brightness_delta: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            size: 64,
            frames: 80,
            blobs: 6,
            max_blobs: 14,
            radius: 4.0,
            drift: 0.6,
            division_prob: 0.03,
            refractory: 8,
            background: 0.05,
            peak: 0.35,
            brightness_delta: 0.3,
            noise: 0.01,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic: {m}")));
        if !(0.0..=1.0).contains(&self.division_prob) {
            return bad("division_prob must lie in [0, 1]");
        }
        if self.size < 4 * self.radius.ceil() as usize || self.radius <= 0.0 {
            return bad("frame too small for the blob radius");
        }
        for (name, v) in
            [("background", self.background), ("peak", self.peak), ("brightness_delta", self.brightness_delta)]
        {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.drift < 0.0 || self.noise < 0.0 {
            return bad("drift and noise must be >= 0");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Blob {
    x: f64,
    y: f64,
    age: usize,
    /// Frames into a division (0 = not dividing), with the split axis.
    dividing: Option<(usize, f64)>,
}

struct Glow {
    x: f64,
    y: f64,
    /// Frame of the split.
    frame: usize,
    amplitude: f64,
}

/// Render an anisotropic Gaussian into `acc`.
fn splat(acc: &mut [f64], size: usize, cx: f64, cy: f64, sigma_long: f64, sigma_short: f64, angle: f64, amp: f64) {
    let (c, s) = (angle.cos(), angle.sin());
    let reach = (3.5 * sigma_long).ceil() as isize;
    let (ix, iy) = (cx.round() as isize, cy.round() as isize);
    for y in (iy - reach).max(0)..(iy + reach + 1).min(size as isize) {
        for x in (ix - reach).max(0)..(ix + reach + 1).min(size as isize) {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let u = dx * c + dy * s;
            let v = -dx * s + dy * c;
            let q = (u / sigma_long).powi(2) + (v / sigma_short).powi(2);
            acc[y as usize * size + x as usize] += amp * (-0.5 * q).exp();
        }
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Render the synthetic video and its division annotations. Deterministic per seed.
pub fn synth_generate(cfg: &SyntheticConfig) -> Result<(Video, Vec<Annotation>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.size;
    let margin = cfg.radius * 1.5;
    let hi = n as f64 - 1.0 - margin;
    let step = Normal::new(0.0, cfg.drift.max(1e-12)).expect("finite sigma");
    let noise = Normal::new(0.0, cfg.noise.max(1e-12)).expect("finite sigma");
    let sigma = 0.6 * cfg.radius;
    let split_offset = 1.3 * cfg.radius;
    let glow_sigma = 1.5 * sigma;

    let mut blobs: Vec<Blob> = (0..cfg.blobs)
        .map(|_| Blob {
            x: rng.gen_range(margin..hi),
            y: rng.gen_range(margin..hi),
            age: rng.gen_range(0..cfg.refractory.max(1)),
            dividing: None,
        })
        .collect();
    let mut glows: Vec<Glow> = Vec::new();
    let mut frames: Vec<GrayImage> = Vec::with_capacity(cfg.frames);
    let mut annotations = Vec::new();

    for t in 0..cfg.frames {
        // advance dynamics
        let mut born = Vec::new();
        for b in blobs.iter_mut() {
            b.age += 1;
            if let Some((k, angle)) = b.dividing {
                if k == 1 {
                    let (dx, dy) = (split_offset * angle.cos(), split_offset * angle.sin());
                    let (mx, my) = (b.x, b.y);
                    born.push(Blob { x: mx - dx, y: my - dy, age: 0, dividing: None });
                    *b = Blob { x: mx + dx, y: my + dy, age: 0, dividing: None };
                    annotations.push(Annotation::new(t, mx.round() as usize, my.round() as usize));
                } else {
                    b.dividing = Some((k + 1, angle));
                }
                continue;
            }
            b.x = (b.x + step.sample(&mut rng)).clamp(margin, hi);
            b.y = (b.y + step.sample(&mut rng)).clamp(margin, hi);
        }
        blobs.extend(born);
        let lim = margin + split_offset;
        for i in 0..blobs.len() {
            let b = &blobs[i];
            let may_divide = b.dividing.is_none() && b.age >= cfg.refractory && t + 2 < cfg.frames;
            if !may_divide || blobs.len() >= cfg.max_blobs || !rng.gen_bool(cfg.division_prob) {
                continue;
            }
            // daughters stay inside the frame and the site is clear of other cells
            let inside = b.x >= lim && b.x <= n as f64 - 1.0 - lim && b.y >= lim && b.y <= n as f64 - 1.0 - lim;
            let crowded =
                blobs.iter().enumerate().any(|(j, o)| j != i && (o.x - b.x).hypot(o.y - b.y) < 2.5 * cfg.radius);
            if inside && !crowded {
                let (x, y) = (b.x, b.y);
                blobs[i].dividing = Some((0, rng.gen_range(0.0..std::f64::consts::PI)));
                glows.push(Glow { x, y, frame: t + 2, amplitude: 0.0 });
            }
        }

        // cells
        let mut acc = vec![cfg.background; n * n];
        for b in &blobs {
            match b.dividing {
                Some((k, angle)) => {
                    let stretch = 1.0 + 0.3 * (k + 1) as f64;
                    let amp = cfg.peak * (1.0 + 0.25 * (k + 1) as f64);
                    splat(&mut acc, n, b.x, b.y, sigma * stretch, sigma / stretch.sqrt(), angle, amp);
                }
                None => splat(&mut acc, n, b.x, b.y, sigma, sigma, 0.0, cfg.peak),
            }
        }
        for v in acc.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        // glows: half strength one frame either side of the split; the
        // amplitude is fixed at the split so the annotated pixel rises by at
        // least `brightness_delta` over the two preceding frames
        let mut img = acc;
        for g in glows.iter_mut().filter(|g| g.frame == t) {
            let (ax, ay) = (g.x.round() as usize, g.y.round() as usize);
            let before = frames[t - 2].get(ax, ay) as f64 / 255.0;
            let now = img[ay * n + ax];
            let (dx, dy) = (ax as f64 - g.x, ay as f64 - g.y);
            let falloff = (-0.5 * (dx * dx + dy * dy) / glow_sigma.powi(2)).exp();
            g.amplitude = (cfg.brightness_delta + (before - now).max(0.0) + 1.5 / 255.0) / falloff;
        }
        for g in &glows {
            let amp = match t as isize - g.frame as isize {
                -1 => 0.5 * cfg.brightness_delta,
                0 => g.amplitude,
                1 => 0.5 * g.amplitude,
                _ => continue,
            };
            splat(&mut img, n, g.x, g.y, glow_sigma, glow_sigma, 0.0, amp);
        }
        frames.push(GrayImage::new(n, n, img.iter().map(|&v| quantize(v)).collect())?);
    }
    Ok((Video { width: n, height: n, frames }, annotations))
}
