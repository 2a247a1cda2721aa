//! Binary checkpoint format.
//!
//! ```text
//! "MSCOPE1\n"
//! key=value lines (kind and every NetworkConfig field), then one empty line
//! u32 blob count
//! per blob: u32 name length, name bytes, u32 ndim, ndim × u64 dims, f64 data
//! ```
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{BranchedModel, ModelKind, NetworkConfig};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MSCOPE1\n";

pub fn write_checkpoint<W: Write>(model: &BranchedModel, mut w: W) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(format!("kind={}\n", model.kind.as_str()).as_bytes());
    for (k, v) in model.config.key_values() {
        buf.extend_from_slice(format!("{k}={v}\n").as_bytes());
    }
    buf.push(b'\n');
    let tensors = model.named_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::Checkpoint(format!("write failed: {e}")))?;
    w.flush().map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

pub fn save_checkpoint(model: &BranchedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(f))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedCheckpoint(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::TruncatedCheckpoint("header not terminated".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
    }
}

fn parse(bytes: &[u8], expect: Option<(&NetworkConfig, ModelKind)>) -> Result<BranchedModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::NotACheckpoint);
    }
    let mut cur = Cursor { bytes, pos: MAGIC.len() };
    let mut config = NetworkConfig::default();
    let mut kind = None;
    loop {
        let line = cur.line()?;
        if line.is_empty() {
            break;
        }
        let (k, v) =
            line.split_once('=').ok_or_else(|| Error::Checkpoint(format!("malformed header line {line:?}")))?;
        if k == "kind" {
            kind = Some(ModelKind::parse(v).ok_or_else(|| Error::Checkpoint(format!("unknown model kind {v:?}")))?);
            continue;
        }
        let value: usize = v.parse().map_err(|_| Error::Checkpoint(format!("bad value for {k}: {v:?}")))?;
        if !config.set_key(k, value) {
            return Err(Error::Checkpoint(format!("unknown header key {k:?}")));
        }
    }
    let kind = kind.ok_or_else(|| Error::Checkpoint("header lacks kind".into()))?;
    config.validate().map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;

    // Blobs are matched against the expected layout first, so a mismatch
    // names the offending tensor.
    let (layout_config, layout_kind) = expect.map(|(c, k)| (*c, k)).unwrap_or((config, kind));
    let mut model = BranchedModel::zeros(layout_config, layout_kind)?;
    let count = cur.u32("blob count")? as usize;
    let mut slots = model.named_tensors_mut();
    if count != slots.len() {
        return Err(Error::Checkpoint(format!("expected {} blobs, found {count}", slots.len())));
    }
    for (want_name, slot) in slots.iter_mut() {
        let name_len = cur.u32("blob name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "blob name")?)
            .map_err(|_| Error::Checkpoint("blob name is not UTF-8".into()))?;
        if name != want_name {
            return Err(Error::Checkpoint(format!("expected blob {want_name:?}, found {name:?}")));
        }
        let ndim = cur.u32(name)? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(cur.u64(name)? as usize);
        }
        if dims != slot.shape() {
            return Err(Error::BlobShape { name: name.to_string(), got: dims, want: slot.shape().to_vec() });
        }
        let raw = cur.take(slot.len() * 8, name)?;
        for (v, chunk) in slot.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    drop(slots);
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    if let Some((want, want_kind)) = expect {
        if kind != want_kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} model, expected {}",
                kind.as_str(),
                want_kind.as_str()
            )));
        }
        if config != *want {
            return Err(Error::Checkpoint(format!("config mismatch: file {config:?}, expected {want:?}")));
        }
    }
    Ok(model)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<BranchedModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    parse(&bytes, None)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<BranchedModel> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f))
}

/// Load and require a specific configuration and model kind.
pub fn load_checkpoint_expecting(
    path: impl AsRef<Path>,
    config: &NetworkConfig,
    kind: ModelKind,
) -> Result<BranchedModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes, Some((config, kind)))
}
