//! Annotation CSV (`frame,x,y`) reading and writing.

use std::path::Path;

use crate::error::{Error, Result};

/// A ground-truth event point: 0-based frame index and pixel position.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Annotation {
    pub frame: usize,
    pub x: usize,
    pub y: usize,
}

impl Annotation {
    pub fn new(frame: usize, x: usize, y: usize) -> Self {
        Self { frame, x, y }
    }
}

/// Bounds used to validate rows: frame width/height and optionally a frame count.
#[derive(Clone, Copy, Debug)]
pub struct Bounds {
    pub width: usize,
    pub height: usize,
    pub frames: Option<usize>,
}

const HEADER: [&str; 3] = ["frame", "x", "y"];

pub fn load_annotations(path: &Path, bounds: Option<Bounds>) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, bounds).map_err(|(line, msg)| Error::Parse { path: path.to_path_buf(), line, msg })
}

/// Parse CSV text; errors carry the 1-based line number.
pub fn parse_annotations(text: &str, bounds: Option<Bounds>) -> std::result::Result<Vec<Annotation>, (usize, String)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| (1, e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err((
            1,
            format!("expected header `frame,x,y`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            (line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 3 {
            return Err((line, format!("expected 3 fields, got {}", record.len())));
        }
        let field = |i: usize| -> std::result::Result<usize, (usize, String)> {
            record[i]
                .parse::<usize>()
                .map_err(|_| (line, format!("{} `{}` is not a non-negative integer", HEADER[i], &record[i])))
        };
        let a = Annotation::new(field(0)?, field(1)?, field(2)?);
        if let Some(b) = bounds {
            if a.x >= b.width || a.y >= b.height {
                return Err((line, format!("point ({}, {}) outside {}x{} frame", a.x, a.y, b.width, b.height)));
            }
            if let Some(n) = b.frames {
                if a.frame >= n {
                    return Err((line, format!("frame {} outside video of {} frames", a.frame, n)));
                }
            }
        }
        out.push(a);
    }
    Ok(out)
}

pub fn format_annotations(set: &[Annotation]) -> String {
    let mut s = String::from("frame,x,y\n");
    for a in set {
        s.push_str(&format!("{},{},{}\n", a.frame, a.x, a.y));
    }
    s
}

pub fn save_annotations(set: &[Annotation], path: &Path) -> Result<()> {
    std::fs::write(path, format_annotations(set)).map_err(|e| Error::io(path, e))
}

/// Annotated division counts of the five BAEC phase-contrast videos.
pub const BAEC_DIVISION_COUNTS: [(&str, usize); 5] =
    [("F0001", 456), ("F0002", 379), ("F0003", 319), ("F0004", 324), ("F0005", 245)];

/// Expected annotation count for a named BAEC video.
pub fn known_division_count(video: &str) -> Option<usize> {
    BAEC_DIVISION_COUNTS.iter().find(|(n, _)| *n == video).map(|&(_, c)| c)
}
