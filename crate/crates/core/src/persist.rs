//! Model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "MEMO"  version:u8  dtype:u8 (4 = f32, 8 = f64)
//! n:u64 d:u64 h:u64 l:u64 seed:u64 rng:u64
//! C^(1) .. C^(l), C^(last)      each d×d, row-major
//! count:u64 then count × (len:u32, UTF-8 bytes)   vocabulary in id order
//! ```
//!
//! Embeddings and projections are not stored; they are regenerated from the
//! seed, so `rng` must match the generator of this build.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

use crate::cmm::CorrelationMemory;
use crate::corpus::{Vocabulary, PAD_WORD};
use crate::error::{MemoError, Result};
use crate::memo::{MemoModel, MemoParams};
use crate::real::{Dtype, Real};
use crate::rng::RNG_ALGORITHM_ID;

pub const MAGIC: &[u8; 4] = b"MEMO";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 6 + 6 * 8;

pub fn write_model<F: Real, W: Write>(model: &MemoModel<F>, mut out: W) -> Result<()> {
    let mut head = Vec::with_capacity(HEADER_LEN);
    head.extend_from_slice(MAGIC);
    head.push(VERSION);
    head.push(F::WIDTH);
    let p = model.params();
    for v in [model.vocab().len() as u64, p.d as u64, p.h as u64, p.l as u64, p.seed, RNG_ALGORITHM_ID] {
        head.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&head)?;
    let mut buf = Vec::with_capacity(p.d * F::WIDTH as usize);
    for mem in model.memories().iter().chain([model.last_memory()]) {
        for row in mem.matrix().rows() {
            buf.clear();
            for &v in row {
                v.write_le(&mut buf);
            }
            out.write_all(&buf)?;
        }
    }
    let words = model.vocab().words();
    out.write_all(&(words.len() as u64).to_le_bytes())?;
    for w in words {
        out.write_all(&(w.len() as u32).to_le_bytes())?;
        out.write_all(w.as_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_model<F: Real>(model: &MemoModel<F>, path: impl AsRef<Path>) -> Result<()> {
    write_model(model, BufWriter::new(File::create(path)?))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> MemoError {
        MemoError::Corrupt { offset: self.pos as u64, reason: reason.into() }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(MemoError::Corrupt {
                offset: self.bytes.len() as u64,
                reason: format!("file ends inside {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn size(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| MemoError::Corrupt { offset: at as u64, reason: format!("{what} {v} too large") })
    }
}

/// Element type recorded in a model file's header.
pub fn peek_dtype(bytes: &[u8]) -> Result<Dtype> {
    if bytes.len() < 6 || &bytes[..4] != MAGIC {
        return Err(MemoError::Format("not a model file (bad magic)".into()));
    }
    if bytes[4] != VERSION {
        return Err(MemoError::Format(format!("unsupported format version {}", bytes[4])));
    }
    Dtype::from_flag(bytes[5]).ok_or_else(|| MemoError::Format(format!("unknown dtype flag {}", bytes[5])))
}

pub fn decode_model<F: Real>(bytes: &[u8]) -> Result<MemoModel<F>> {
    let dtype = peek_dtype(bytes)?;
    if dtype.flag() != F::WIDTH {
        return Err(MemoError::Format(format!(
            "file holds {}-byte elements, expected {}",
            dtype.flag(),
            F::WIDTH
        )));
    }
    let mut r = Reader { bytes, pos: 6 };
    let n = r.size("vocabulary size")?;
    let d = r.size("dimension")?;
    let h = r.size("head count")?;
    let l = r.size("layer count")?;
    let seed = r.u64("seed")?;
    let rng = r.u64("generator id")?;
    if rng != RNG_ALGORITHM_ID {
        return Err(MemoError::Format(format!(
            "model was generated with generator {rng}, this build provides {RNG_ALGORITHM_ID}"
        )));
    }
    let params = MemoParams { h, l, d, seed };
    if params.window().is_err() || d < 2 || d % h != 0 {
        return Err(MemoError::Corrupt { offset: 6, reason: format!("invalid shape h={h} l={l} d={d}") });
    }
    let cells = d
        .checked_mul(d)
        .and_then(|c| c.checked_mul(l + 1))
        .and_then(|c| c.checked_mul(F::WIDTH as usize))
        .ok_or_else(|| r.corrupt("matrix size overflows"))?;
    if bytes.len() - r.pos < cells {
        return Err(MemoError::Corrupt { offset: bytes.len() as u64, reason: "file ends inside the memories".into() });
    }
    let w = F::WIDTH as usize;
    let mut mems = Vec::with_capacity(l + 1);
    for _ in 0..=l {
        let raw = r.take(d * d * w, "a memory")?;
        let vals: Vec<F> = raw.chunks_exact(w).map(F::read_le).collect();
        mems.push(CorrelationMemory::from_matrix(Array2::from_shape_vec((d, d), vals).expect("d*d values")));
    }
    let last = mems.pop().expect("l+1 memories");

    let count = r.size("vocabulary count")?;
    if count != n {
        return Err(r.corrupt(format!("vocabulary lists {count} words, header says {n}")));
    }
    let mut words = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = r.u32("word length")? as usize;
        let at = r.pos;
        let raw = r.take(len, "a word")?;
        let w = std::str::from_utf8(raw)
            .map_err(|_| MemoError::Corrupt { offset: at as u64, reason: "word is not UTF-8".into() })?;
        words.push(w);
    }
    if r.pos != bytes.len() {
        return Err(r.corrupt("trailing bytes after the vocabulary"));
    }
    if words.first() != Some(&PAD_WORD) {
        return Err(r.corrupt("vocabulary does not start with the padding token"));
    }
    let vocab = Vocabulary::from_words(words[1..].iter().copied()).map_err(|e| r.corrupt(e.to_string()))?;
    if vocab.len() != n {
        return Err(r.corrupt("vocabulary holds duplicate words"));
    }
    MemoModel::from_parts(vocab, params, mems, last).map_err(|e| r.corrupt(e.to_string()))
}

pub fn load_model<F: Real>(path: impl AsRef<Path>) -> Result<MemoModel<F>> {
    decode_model(&std::fs::read(path)?)
}

/// A model of either element type.
#[derive(Debug, Clone)]
pub enum AnyModel {
    F32(MemoModel<f32>),
    F64(MemoModel<f64>),
}

/// Loads a model with whatever element type its header names.
pub fn load_any(path: impl AsRef<Path>) -> Result<AnyModel> {
    let bytes = std::fs::read(path)?;
    match peek_dtype(&bytes)? {
        Dtype::F32 => decode_model(&bytes).map(AnyModel::F32),
        Dtype::F64 => decode_model(&bytes).map(AnyModel::F64),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<u8> {
        let mut md = MemoModel::<f64>::new(
            Vocabulary::from_text("a b c d e").unwrap(),
            MemoParams { h: 2, l: 1, d: 8, seed: 1 },
        )
        .unwrap();
        md.memorize_window(&[1, 2, 3]).unwrap();
        let mut out = Vec::new();
        write_model(&md, &mut out).unwrap();
        out
    }

    #[test]
    fn size_matches_layout() {
        let b = sample();
        let vocab = 8 + (4 + 5) + 5 * (4 + 1);
        assert_eq!(b.len(), HEADER_LEN + 2 * 64 * 8 + vocab);
    }

    #[test]
    fn header_errors_are_format_errors() {
        let b = sample();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_model::<f64>(&bad), Err(MemoError::Format(_))));
        let mut bad = b.clone();
        bad[4] = 9;
        assert!(matches!(decode_model::<f64>(&bad), Err(MemoError::Format(_))));
        let mut bad = b.clone();
        bad[5] = 2;
        assert!(matches!(decode_model::<f64>(&bad), Err(MemoError::Format(_))));
        assert!(matches!(decode_model::<f32>(&b), Err(MemoError::Format(_))));
    }

    #[test]
    fn truncation_reports_offset() {
        let b = sample();
        for cut in [10, HEADER_LEN + 100, b.len() - 3] {
            match decode_model::<f64>(&b[..cut]) {
                Err(MemoError::Corrupt { offset, .. }) => assert!(offset as usize <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn roundtrip_preserves_memories() {
        let b = sample();
        let md = decode_model::<f64>(&b).unwrap();
        let mut again = Vec::new();
        write_model(&md, &mut again).unwrap();
        assert_eq!(b, again);
    }
}
