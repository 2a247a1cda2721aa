//! From event or response maps to point detections.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::EventMap;
use crate::tensor::Tensor;

pub const DEFAULT_DT: usize = 2;
pub const DEFAULT_RADIUS: f64 = 5.0;
pub const SUPERVISED_THRESHOLD: f64 = 0.7;
pub const MERGE_PIXELS: f64 = 10.0;
pub const MERGE_FRAMES: usize = 2;

/// A point detection; coordinates are original-resolution pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub class: usize,
    pub score: f64,
}

/// One connected group of active `(frame, block_row, block_col)` cells of a class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchSequence {
    pub class: usize,
    /// Members sorted by `(frame, row, col)`.
    pub members: Vec<(usize, usize, usize)>,
}

impl PatchSequence {
    pub fn frame_span(&self) -> (usize, usize) {
        let first = self.members.first().expect("patches are non-empty").0;
        let last = self.members.last().expect("patches are non-empty").0;
        (first, last)
    }

    /// `(row_min, col_min, row_max, col_max)` in blocks.
    pub fn bounds(&self) -> (usize, usize, usize, usize) {
        self.members.iter().fold((usize::MAX, usize::MAX, 0, 0), |(r0, c0, r1, c1), &(_, r, c)| {
            (r0.min(r), c0.min(c), r1.max(r), c1.max(c))
        })
    }
}

/// Components of blocks where `class` is active, connected through the four
/// spatial neighbours and the same block in the adjacent frames.
pub fn group_activations(maps: &[EventMap], class: usize) -> Vec<PatchSequence> {
    let Some(first) = maps.first() else { return Vec::new() };
    if class >= first.classes() {
        return Vec::new();
    }
    let (rows, cols) = first.blocks();
    let idx = |f: usize, r: usize, c: usize| (f * rows + r) * cols + c;
    let mut active = vec![false; maps.len() * rows * cols];
    for (f, m) in maps.iter().enumerate() {
        for r in 0..rows {
            for c in 0..cols {
                let (k, v) = m.block(r, c);
                active[idx(f, r, c)] = k == class && v > 0.0;
            }
        }
    }
    let mut seen = vec![false; active.len()];
    let mut out = Vec::new();
    for f in 0..maps.len() {
        for r in 0..rows {
            for c in 0..cols {
                if !active[idx(f, r, c)] || seen[idx(f, r, c)] {
                    continue;
                }
                let mut members = Vec::new();
                let mut queue = VecDeque::from([(f, r, c)]);
                seen[idx(f, r, c)] = true;
                while let Some((f0, r0, c0)) = queue.pop_front() {
                    members.push((f0, r0, c0));
                    let mut nb = Vec::with_capacity(6);
                    if r0 > 0 {
                        nb.push((f0, r0 - 1, c0));
                    }
                    if r0 + 1 < rows {
                        nb.push((f0, r0 + 1, c0));
                    }
                    if c0 > 0 {
                        nb.push((f0, r0, c0 - 1));
                    }
                    if c0 + 1 < cols {
                        nb.push((f0, r0, c0 + 1));
                    }
                    if f0 > 0 {
                        nb.push((f0 - 1, r0, c0));
                    }
                    if f0 + 1 < maps.len() {
                        nb.push((f0 + 1, r0, c0));
                    }
                    for (a, b, d) in nb {
                        let i = idx(a, b, d);
                        if active[i] && !seen[i] {
                            seen[i] = true;
                            queue.push_back((a, b, d));
                        }
                    }
                }
                members.sort_unstable();
                out.push(PatchSequence { class, members });
            }
        }
    }
    out
}

/// Mean of `values` over the disc of `radius` around `(x, y)`, clipped at the frame.
fn disc_mean(values: &[f64], w: usize, h: usize, x: usize, y: usize, radius: f64) -> f64 {
    let r = radius.floor() as isize;
    let (mut sum, mut n) = (0.0, 0usize);
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dx * dx + dy * dy) as f64) > radius * radius {
                continue;
            }
            let (px, py) = (x as isize + dx, y as isize + dy);
            if px < 0 || py < 0 || px >= w as isize || py >= h as isize {
                continue;
            }
            sum += values[py as usize * w + px as usize];
            n += 1;
        }
    }
    sum / n as f64
}

/// Model-resolution location of a patch's brightness peak.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Located {
    /// Frame of the peak, i.e. the scored frame plus `dt`.
    pub frame: usize,
    pub x: usize,
    pub y: usize,
    pub score: f64,
}

/// Pixel and frame inside the patch with the highest disc-mean intensity
/// increase `I(f + dt) − I(f)`. `frames[i]` is the frame under map `i`; extra
/// trailing frames give lookahead. Members without lookahead are ignored and
/// `None` means the whole patch lacked it. Ties keep the earliest frame, then
/// the first pixel in row-major order.
pub fn locate_centroid(
    frames: &[Tensor],
    patch: &PatchSequence,
    grid: usize,
    dt: usize,
    radius: f64,
) -> Option<Located> {
    let (_, h, w) = frames.first()?.dims3().ok()?;
    let mut best: Option<Located> = None;
    let mut diff_cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut candidates: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for &(f, r, c) in &patch.members {
        if f + dt < frames.len() {
            candidates.entry(f).or_default().push((r, c));
        }
    }
    for (f, blocks) in candidates {
        let diff = diff_cache
            .entry(f)
            .or_insert_with(|| frames[f + dt].data().iter().zip(frames[f].data()).map(|(a, b)| a - b).collect());
        let mut pixels: Vec<(usize, usize)> = blocks
            .iter()
            .flat_map(|&(r, c)| {
                (r * grid..(r + 1) * grid).flat_map(move |y| (c * grid..(c + 1) * grid).map(move |x| (y, x)))
            })
            .filter(|&(y, x)| y < h && x < w)
            .collect();
        pixels.sort_unstable();
        for (y, x) in pixels {
            let s = disc_mean(diff, w, h, x, y, radius);
            if best.map_or(true, |b| s > b.score) {
                best = Some(Located { frame: f + dt, x, y, score: s });
            }
        }
    }
    best
}

/// Per-frame 4-connected components above `threshold`; each yields its
/// intensity-weighted centroid (rounded) and its peak value as the score.
pub fn threshold_detections(maps: &[Tensor], threshold: f64) -> Result<Vec<Located>> {
    let mut out = Vec::new();
    for (f, m) in maps.iter().enumerate() {
        let (_, h, w) = m.dims3()?;
        let v = m.channel(0);
        let mut seen = vec![false; h * w];
        for start in 0..h * w {
            if seen[start] || v[start] <= threshold {
                continue;
            }
            seen[start] = true;
            let mut stack = vec![start];
            let (mut sw, mut sx, mut sy, mut peak) = (0.0, 0.0, 0.0, f64::MIN);
            while let Some(i) = stack.pop() {
                let (y, x) = (i / w, i % w);
                sw += v[i];
                sx += v[i] * x as f64;
                sy += v[i] * y as f64;
                peak = peak.max(v[i]);
                let mut push = |j: usize| {
                    if !seen[j] && v[j] > threshold {
                        seen[j] = true;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    push(i - 1);
                }
                if x + 1 < w {
                    push(i + 1);
                }
                if y > 0 {
                    push(i - w);
                }
                if y + 1 < h {
                    push(i + w);
                }
            }
            out.push(Located {
                frame: f,
                x: ((sx / sw).round() as usize).min(w - 1),
                y: ((sy / sw).round() as usize).min(h - 1),
                score: peak,
            });
        }
    }
    Ok(out)
}

fn close(a: &Detection, b: &Detection, pixels: f64, frames: usize) -> bool {
    let d = (a.x as f64 - b.x as f64).hypot(a.y as f64 - b.y as f64);
    a.frame.abs_diff(b.frame) <= frames && d <= pixels
}

/// Score-greedy deduplication: in descending score order a detection is
/// dropped if it lies within `pixels` and `frames` of an already kept seed.
/// Output is sorted by `(frame, y, x)`.
pub fn merge_global_with(detections: &[Detection], pixels: f64, frames: usize) -> Vec<Detection> {
    let mut order: Vec<&Detection> = detections.iter().collect();
    order.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then((a.frame, a.y, a.x, a.class).cmp(&(b.frame, b.y, b.x, b.class)))
    });
    let mut seeds: Vec<Detection> = Vec::new();
    for d in order {
        if !seeds.iter().any(|s| close(s, d, pixels, frames)) {
            seeds.push(*d);
        }
    }
    seeds.sort_by(|a, b| {
        (a.frame, a.y, a.x, a.class).cmp(&(b.frame, b.y, b.x, b.class)).then(b.score.total_cmp(&a.score))
    });
    seeds
}

pub fn merge_global(detections: &[Detection]) -> Vec<Detection> {
    merge_global_with(detections, MERGE_PIXELS, MERGE_FRAMES)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScore {
    pub class: usize,
    /// Mean located score over the class's patches.
    pub score: f64,
    pub patches: usize,
}

/// Rank classes by the mean brightness-increase score of their patches.
/// Each item pairs one sequence's event maps with its frames (see
/// [`locate_centroid`]). Classes without patches are left out; equal scores
/// are ordered by class index.
pub fn rank_classes(items: &[(&[EventMap], &[Tensor])], dt: usize, radius: f64) -> Vec<ClassScore> {
    let mut totals: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for (maps, frames) in items {
        let Some(first) = maps.first() else { continue };
        for class in 0..first.classes() {
            for p in group_activations(maps, class) {
                if let Some(l) = locate_centroid(frames, &p, first.grid(), dt, radius) {
                    let e = totals.entry(class).or_insert((0.0, 0));
                    e.0 += l.score;
                    e.1 += 1;
                }
            }
        }
    }
    let mut out: Vec<ClassScore> =
        totals.into_iter().map(|(class, (s, n))| ClassScore { class, score: s / n as f64, patches: n }).collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.class.cmp(&b.class)));
    out
}

pub fn format_detections_csv(dets: &[Detection]) -> String {
    let mut s = String::from("frame,x,y,class,score\n");
    for d in dets {
        s.push_str(&format!("{},{},{},{},{}\n", d.frame, d.x, d.y, d.class, d.score));
    }
    s
}

pub fn write_detections_csv(dets: &[Detection], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(format_detections_csv(dets).as_bytes()).map_err(|e| Error::io(path, e))
}

/// Read a detections CSV written by [`write_detections_csv`].
pub fn read_detections_csv(path: &Path) -> Result<Vec<Detection>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        msg: e.to_string(),
    })?;
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Parse { path: path.to_path_buf(), line: 1, msg: e.to_string() })?
        .iter()
        .map(str::to_string)
        .collect();
    if headers != ["frame", "x", "y", "class", "score"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg: "expected header frame,x,y,class,score".into(),
        });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::Parse { path: path.to_path_buf(), line, msg: format!("bad {what}") };
        let int = |i: usize, what: &str| rec.get(i).and_then(|s| s.parse::<usize>().ok()).ok_or_else(|| bad(what));
        out.push(Detection {
            frame: int(0, "frame")?,
            x: int(1, "x")?,
            y: int(2, "y")?,
            class: int(3, "class")?,
            score: rec.get(4).and_then(|s| s.parse::<f64>().ok()).ok_or_else(|| bad("score"))?,
        });
    }
    Ok(out)
}
