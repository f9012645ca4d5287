//! Versioned binary checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic            8 bytes  "rrckpt\x01\n"
//! config           6 x u64  layers, heads, hidden, ffn, vocab, positions
//!                  1 x f64  dropout
//!                  1 x u64  seed
//! tensor count     u64
//! per tensor       u64 name length, UTF-8 name,
//!                  u64 ndim, ndim x u64 dims, f64 values (row-major)
//! ```
//!
//! Tensors appear in the canonical parameter order, and loading re-checks
//! name, shape, and total size, so a round trip reproduces every bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Parameters};

const MAGIC: &[u8; 8] = b"rrckpt\x01\n";

/// Writes a checkpoint readable by [`load_checkpoint`].
pub fn save_checkpoint(params: &Parameters, path: impl AsRef<Path>) -> Result<()> {
    let cfg = params.config();
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(MAGIC)?;
    for v in [
        cfg.num_layers,
        cfg.num_heads,
        cfg.hidden_dim,
        cfg.ffn_dim,
        cfg.vocab_size,
        cfg.max_positions,
    ] {
        out.write_all(&(v as u64).to_le_bytes())?;
    }
    out.write_all(&cfg.dropout.to_le_bytes())?;
    out.write_all(&cfg.seed.to_le_bytes())?;

    let tensors = params.tensors();
    out.write_all(&(tensors.len() as u64).to_le_bytes())?;
    for t in tensors {
        out.write_all(&(t.name.len() as u64).to_le_bytes())?;
        out.write_all(t.name.as_bytes())?;
        out.write_all(&(t.shape.len() as u64).to_le_bytes())?;
        for &dim in &t.shape {
            out.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &v in t.data {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Integrity(format!(
                "checkpoint truncated at byte {} while reading {what}",
                self.pos
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("eight bytes"),
        ))
    }

    fn usize(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v)
            .map_err(|_| Error::Integrity(format!("{what} value {v} exceeds address space")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("eight bytes"),
        ))
    }
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Parameters> {
    let mut buf = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };

    if cur.take(MAGIC.len(), "magic header")? != MAGIC {
        return Err(Error::Integrity(
            "not a model checkpoint (bad magic)".into(),
        ));
    }
    let config = ModelConfig {
        num_layers: cur.usize("num_layers")?,
        num_heads: cur.usize("num_heads")?,
        hidden_dim: cur.usize("hidden_dim")?,
        ffn_dim: cur.usize("ffn_dim")?,
        vocab_size: cur.usize("vocab_size")?,
        max_positions: cur.usize("max_positions")?,
        dropout: cur.f64("dropout")?,
        seed: cur.u64("seed")?,
    };
    let mut params = Parameters::zeros(&config)?;

    let mut tensors = params.tensors_mut();
    let count = cur.usize("tensor count")?;
    if count != tensors.len() {
        return Err(Error::Integrity(format!(
            "checkpoint holds {count} tensors but the config implies {}",
            tensors.len()
        )));
    }
    for t in tensors.iter_mut() {
        let name_len = cur.usize("tensor name length")?;
        let name = std::str::from_utf8(cur.take(name_len, "tensor name")?)
            .map_err(|_| Error::Integrity("tensor name is not UTF-8".into()))?;
        if name != t.name {
            return Err(Error::Integrity(format!(
                "tensor order mismatch: expected {:?}, found {name:?}",
                t.name
            )));
        }
        let ndim = cur.usize("tensor rank")?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.usize("tensor dimension")?);
        }
        if shape != t.shape {
            return Err(Error::Integrity(format!(
                "tensor {name:?} has shape {shape:?}, expected {:?}",
                t.shape
            )));
        }
        for v in t.data.iter_mut() {
            *v = cur.f64("tensor value")?;
        }
    }
    if cur.pos != buf.len() {
        return Err(Error::Integrity(format!(
            "{} trailing bytes after the last tensor",
            buf.len() - cur.pos
        )));
    }
    Ok(params)
}
