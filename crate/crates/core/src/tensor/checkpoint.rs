//! Named-tensor archive.
//!
//! Layout: a UTF-8 text header of `key value` lines that starts with
//! `hmer-checkpoint 1`, carries `precision` and `config_hash`, and ends with a
//! line `end`; then a little-endian binary body:
//!
//! ```text
//! u32 entry count
//! per entry: u32 name length, name bytes, u32 rank, u64 × rank dims,
//!            values (f32 or f64, little-endian)
//! ```

use std::path::Path;

use super::{Float, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "hmer-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry<F> {
    pub name: String,
    pub tensor: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F> {
    pub config_hash: String,
    meta: Vec<(String, String)>,
    pub entries: Vec<CheckpointEntry<F>>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::CorruptCheckpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated body"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()) as usize)
    }
}

impl<F: Float> Checkpoint<F> {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Checkpoint {
            config_hash: config_hash.into(),
            meta: Vec::new(),
            entries: Vec::new(),
        }
    }

    /// Every parameter of `store`, in registration order.
    pub fn from_store(store: &ParamStore<F>, config_hash: impl Into<String>) -> Self {
        let mut c = Self::new(config_hash);
        for (_, name, t) in store.iter() {
            c.push(name, t.clone());
        }
        c
    }

    /// Single-line metadata; keys must not contain whitespace.
    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        assert!(!key.is_empty() && !key.contains(char::is_whitespace), "bad meta key {key:?}");
        assert!(!value.contains('\n'), "meta values are single-line");
        match self.meta.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.meta.push((key.to_owned(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn meta_entries(&self) -> &[(String, String)] {
        &self.meta
    }

    pub fn push(&mut self, name: &str, tensor: Tensor<F>) {
        self.entries.push(CheckpointEntry {
            name: name.to_owned(),
            tensor,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    /// Overwrites every parameter of `store` with the entry of the same name.
    pub fn load_into(&self, store: &mut ParamStore<F>) -> Result<()> {
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.name(id).to_owned();
            let t = self.get(&name).ok_or_else(|| bad(format!("missing tensor `{name}`")))?;
            if t.shape() != store.get(id).shape() {
                return Err(Error::shape("checkpoint", t.shape(), store.get(id).shape()));
            }
            *store.get_mut(id) = t.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\nprecision {}\nconfig_hash {}\n", F::NAME, self.config_hash);
        for (k, v) in &self.meta {
            header.push_str(&format!("{k} {v}\n"));
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.tensor.shape().len() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in e.tensor.data() {
                v.put_le(&mut out);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut lines = Vec::new();
        loop {
            let nl = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("unterminated header"))?;
            let line = std::str::from_utf8(&bytes[pos..pos + nl]).map_err(|_| bad("header is not UTF-8"))?;
            pos += nl + 1;
            if line == "end" {
                break;
            }
            lines.push(line);
        }
        if lines.first() != Some(&MAGIC) {
            return Err(bad("missing magic line"));
        }
        let mut meta = Vec::new();
        let mut precision = None;
        let mut hash = None;
        for line in &lines[1..] {
            let (k, v) = line.split_once(' ').unwrap_or((line, ""));
            match k {
                "precision" => precision = Some(v),
                "config_hash" => hash = Some(v.to_owned()),
                _ => meta.push((k.to_owned(), v.to_owned())),
            }
        }
        if precision != Some(F::NAME) {
            return Err(bad(format!("precision {precision:?}, expected {}", F::NAME)));
        }
        let mut r = Reader { buf: bytes, pos };
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()?;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| bad("entry name is not UTF-8"))?.to_owned();
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
            let raw = r.take(numel.checked_mul(F::BYTES).ok_or_else(|| bad("shape overflow"))?)?;
            let data = raw.chunks_exact(F::BYTES).map(F::get_le).collect();
            let tensor = Tensor::new(&shape, data).map_err(|_| bad(format!("bad shape for `{name}`")))?;
            entries.push(CheckpointEntry { name, tensor });
        }
        if r.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint {
            config_hash: hash.ok_or_else(|| bad("missing config_hash"))?,
            meta,
            entries,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
