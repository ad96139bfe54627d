//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! "NSRG" | version: u32 | entry count: u32
//! per entry:  name length: u16 | UTF-8 name | tensor count: u8
//!             per tensor: rank: u8 | extents: u64[rank] | f32 data
//! metadata:   byte length: u32 | UTF-8 "key=value\n" lines, sorted by key
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::params::{Checkpoint, ParamPair};
use super::spec::NetworkSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"NSRG";
pub const VERSION: u32 = 1;

pub(crate) fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| Error::invalid("tensor rank exceeds 255"))?;
    out.push(rank);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    out.reserve(t.len() * 4);
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

/// Cursor over an in-memory file that reports short reads as truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "need {n} bytes for {what} at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn tensor(&mut self, what: &str) -> Result<Tensor> {
        let rank = self.u8(what)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = self.u64(what)?;
            shape.push(usize::try_from(d).map_err(|_| Error::MalformedCheckpoint(format!("extent {d} in {what}")))?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::MalformedCheckpoint(format!("{what}: shape {shape:?} overflows")))?;
        let raw = self.take(count, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| Error::MalformedCheckpoint(format!("{what}: {e}")))
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(ckpt.entries.len()).map_err(|_| Error::invalid("too many entries"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, pair) in &ckpt.entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::invalid(format!("layer name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(2);
        encode_tensor(&pair.weights, &mut out)?;
        encode_tensor(&pair.bias, &mut out)?;
    }
    let mut meta = String::new();
    for (k, v) in &ckpt.metadata {
        if k.is_empty() || k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::invalid(format!("metadata entry `{k}` cannot be encoded")));
        }
        meta.push_str(k);
        meta.push('=');
        meta.push_str(v);
        meta.push('\n');
    }
    let len = u32::try_from(meta.len()).map_err(|_| Error::invalid("metadata block too large"))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader::new(&bytes[4..]);
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let count = r.u32("entry count")?;
    let mut entries = IndexMap::new();
    for i in 0..count {
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "layer name")?)
            .map_err(|_| Error::MalformedCheckpoint(format!("entry {i}: name is not UTF-8")))?
            .to_string();
        let tensors = r.u8("tensor count")?;
        if tensors != 2 {
            return Err(Error::MalformedCheckpoint(format!(
                "entry `{name}` holds {tensors} tensors, expected weights and bias"
            )));
        }
        let weights = r.tensor(&format!("{name}.weights"))?;
        let bias = r.tensor(&format!("{name}.bias"))?;
        if entries.insert(name.clone(), ParamPair { weights, bias }).is_some() {
            return Err(Error::MalformedCheckpoint(format!("duplicate entry `{name}`")));
        }
    }
    let meta_len = r.u32("metadata length")? as usize;
    let block = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| Error::MalformedCheckpoint("metadata is not UTF-8".into()))?;
    let mut metadata = BTreeMap::new();
    for line in block.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::MalformedCheckpoint(format!("metadata line without `=`: {line}")))?;
        metadata.insert(k.to_string(), v.to_string());
    }
    if r.remaining() != 0 {
        return Err(Error::MalformedCheckpoint(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { entries, metadata })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Loads a checkpoint and checks it against the network it will be paired with.
pub fn load_checkpoint_for(path: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    ckpt.validate_against(spec)?;
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{init_params, small_reference_spec};

    #[test]
    fn round_trip_is_byte_identical() {
        let mut ckpt = init_params(&small_reference_spec(2), 5).unwrap();
        ckpt.set_meta("note", "a=b");
        let bytes = encode_checkpoint(&ckpt).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
        assert_eq!(back.meta("note"), Some("a=b"));
    }

    #[test]
    fn corruptions_have_distinct_categories() {
        let ckpt = init_params(&small_reference_spec(2), 5).unwrap();
        let bytes = encode_checkpoint(&ckpt).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic)));

        assert!(matches!(
            decode_checkpoint(&bytes[..bytes.len() / 2]),
            Err(Error::Truncated(_))
        ));

        let mut newer = bytes.clone();
        newer[4] = 9;
        assert!(matches!(decode_checkpoint(&newer), Err(Error::UnsupportedVersion(9))));
    }
}
