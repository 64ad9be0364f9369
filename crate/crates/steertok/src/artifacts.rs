//! Binary checkpoint (`STLM`) and embedding-bank (`STBK`) files.
//!
//! All integers and floats are little-endian.
//!
//! Checkpoint layout:
//!
//! ```text
//! "STLM" | version u32 | vocab_size u32 | d_model u32 | n_layers u32
//!        | n_heads u32 | max_seq_len u32 | seed u64
//!        | weights f32 × n_params (in ModelParams::specs() order)
//!        | fingerprint [u8; 32]
//! ```
//!
//! Bank layout:
//!
//! ```text
//! "STBK" | version u32 | d u32 | model fingerprint [u8; 32] | count u32
//!        | count × (name_len u32 | name utf-8 | frozen u8 | f32 × d)
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use steertok_core::distill::EmbeddingBank;
use steertok_core::model::{Fingerprint, LMConfig, ModelParams};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"STLM";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const BANK_MAGIC: &[u8; 4] = b"STBK";
pub const BANK_VERSION: u32 = 1;

/// Writes `bytes` to a sibling temp file, syncs it and renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::Usage(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    path: &'a Path,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.path, "size overflow"))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn fingerprint(&mut self) -> Result<Fingerprint> {
        Ok(Fingerprint(self.take(32)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4).ok() != Some(&magic[..]) {
            return Err(Error::format(
                self.path,
                format!("not a {} file (bad magic)", String::from_utf8_lossy(magic)),
            ));
        }
        let found = self.u32()?;
        if found != version {
            return Err(Error::Version { path: self.path.to_path_buf(), found, expected: version });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes after the last record"));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(params: &ModelParams) -> Vec<u8> {
    let c = params.config();
    let mut out = Vec::with_capacity(48 + 4 * params.flat().len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.max_seq_len] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&c.seed.to_le_bytes());
    for w in params.flat() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out.extend_from_slice(&params.fingerprint().0);
    out
}

pub fn decode_checkpoint(path: &Path, bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { path, buf: bytes, pos: 0 };
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = LMConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        max_seq_len: dims[4],
        seed: r.u64()?,
    };
    config.validate()?;
    let n = config.n_params();
    let data = r.f32s(n)?;
    let stored = r.fingerprint()?;
    r.finish()?;
    let params = ModelParams::from_flat(config, data)?;
    if params.fingerprint() != stored {
        return Err(Error::format(path, "checkpoint fingerprint does not match its weights"));
    }
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<()> {
    write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(path, &read(path)?)
}

pub fn encode_bank(bank: &EmbeddingBank) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(BANK_MAGIC);
    out.extend_from_slice(&BANK_VERSION.to_le_bytes());
    put_u32(&mut out, bank.d());
    out.extend_from_slice(&bank.fingerprint().0);
    put_u32(&mut out, bank.len());
    for e in bank.entries() {
        put_u32(&mut out, e.name.len());
        out.extend_from_slice(e.name.as_bytes());
        out.push(e.frozen as u8);
        for v in &e.vector {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_bank(path: &Path, bytes: &[u8]) -> Result<EmbeddingBank> {
    let mut r = Reader { path, buf: bytes, pos: 0 };
    r.header(BANK_MAGIC, BANK_VERSION)?;
    let d = r.u32()? as usize;
    let fp = r.fingerprint()?;
    let count = r.u32()? as usize;
    let mut bank = EmbeddingBank::new(d, fp);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "entry name is not UTF-8"))?
            .to_string();
        let frozen = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(Error::format(path, format!("bad frozen flag {b} for `{name}`"))),
        };
        let v = r.f32s(d)?;
        if bank.get(&name).is_some() {
            return Err(Error::format(path, format!("duplicate entry `{name}`")));
        }
        bank.insert(&name, v, frozen)?;
    }
    r.finish()?;
    Ok(bank)
}

pub fn save_bank(path: &Path, bank: &EmbeddingBank) -> Result<()> {
    write_atomic(path, &encode_bank(bank))
}

pub fn load_bank(path: &Path) -> Result<EmbeddingBank> {
    decode_bank(path, &read(path)?)
}

/// Loads the bank at `path` if it exists, otherwise returns an empty bank
/// for `params`. An existing bank must match the model.
pub fn load_or_new_bank(path: &Path, params: &ModelParams) -> Result<EmbeddingBank> {
    let bank = if path.exists() { load_bank(path)? } else { EmbeddingBank::for_model(params) };
    bank.check_model(params)?;
    Ok(bank)
}
