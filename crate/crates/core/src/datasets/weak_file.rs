//! Binary container for a [`QueryResponseDataset`].
//!
//! Little-endian layout:
//!
//! ```text
//! magic       b"SQWK"
//! version     u32
//! b"PROV"     k u32, m u32, seed u64, source_len u32, source utf-8 bytes
//! b"DATA"     n u64, d u32
//! features    n*d f32
//! subsets     per row: size u8, then size u16 members
//! responses   ceil(n/8) bytes, row i at bit i%8 of byte i/8
//! checksum    SHA-256 of every preceding byte
//! ```
//!
//! Structural invariants are checked while parsing, the checksum last.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{Provenance, QueryResponseDataset};
use crate::error::{Error, Result};
use crate::query::{LabelSpace, LabelSubset, QueryConfig, Response};

pub const WEAK_FILE_MAGIC: [u8; 4] = *b"SQWK";
pub const WEAK_FILE_VERSION: u32 = 1;
const PROV_TAG: [u8; 4] = *b"PROV";
const DATA_TAG: [u8; 4] = *b"DATA";
const CHECKSUM_LEN: usize = 32;

pub fn save_weak(data: &QueryResponseDataset, path: &Path) -> Result<()> {
    fs::write(path, encode(data)?).map_err(|e| Error::io(path, e))
}

pub fn load_weak(path: &Path) -> Result<QueryResponseDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn encode(data: &QueryResponseDataset) -> Result<Vec<u8>> {
    let prov = data.provenance();
    if prov.k > u16::MAX as usize || prov.m > u8::MAX as usize {
        return Err(Error::Format(format!("k = {} / m = {} do not fit the weak file layout", prov.k, prov.m)));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&WEAK_FILE_MAGIC);
    out.extend_from_slice(&WEAK_FILE_VERSION.to_le_bytes());
    out.extend_from_slice(&PROV_TAG);
    out.extend_from_slice(&(prov.k as u32).to_le_bytes());
    out.extend_from_slice(&(prov.m as u32).to_le_bytes());
    out.extend_from_slice(&prov.seed.to_le_bytes());
    out.extend_from_slice(&(prov.source_id.len() as u32).to_le_bytes());
    out.extend_from_slice(prov.source_id.as_bytes());
    out.extend_from_slice(&DATA_TAG);
    out.extend_from_slice(&(data.n() as u64).to_le_bytes());
    out.extend_from_slice(&(data.d() as u32).to_le_bytes());
    for &v in data.features() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    for l in data.subsets() {
        out.push(l.len() as u8);
        for &y in l.members() {
            out.extend_from_slice(&(y as u16).to_le_bytes());
        }
    }
    let mut bits = vec![0u8; data.n().div_ceil(8)];
    for (i, s) in data.responses().iter().enumerate() {
        bits[i / 8] |= s.bit() << (i % 8);
    }
    out.extend_from_slice(&bits);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated {
            path: self.path.into(),
            detail: format!("file ends inside {what}"),
        })?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
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

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8], path: &Path) -> Result<QueryResponseDataset> {
    let mut cur = Cursor { bytes, at: 0, path };
    let magic = cur.take(4, "magic")?;
    if magic != WEAK_FILE_MAGIC {
        return Err(Error::WrongMagic {
            path: path.into(),
            expected: u32::from_be_bytes(WEAK_FILE_MAGIC),
            found: u32::from_be_bytes(magic.try_into().unwrap()),
        });
    }
    let version = cur.u32("version")?;
    if version != WEAK_FILE_VERSION {
        return Err(Error::VersionMismatch { found: version, expected: WEAK_FILE_VERSION });
    }
    if cur.take(4, "provenance tag")? != PROV_TAG {
        return Err(Error::Format("missing provenance block".into()));
    }
    let k = cur.u32("provenance")? as usize;
    let m = cur.u32("provenance")? as usize;
    let seed = cur.u64("provenance")?;
    let source_len = cur.u32("provenance")? as usize;
    let source_id = std::str::from_utf8(cur.take(source_len, "source id")?)
        .map_err(|_| Error::Format("source id is not utf-8".into()))?
        .to_string();
    let cfg = QueryConfig::new(k, m).map_err(|e| Error::Invariant(format!("provenance (k = {k}, m = {m}): {e}")))?;
    let space = LabelSpace::new(k)?;
    if cur.take(4, "data tag")? != DATA_TAG {
        return Err(Error::Format("missing data block".into()));
    }
    let n = cur.u64("dimensions")? as usize;
    let d = cur.u32("dimensions")? as usize;
    if n == 0 || d == 0 {
        return Err(Error::Invariant(format!("empty dataset (n = {n}, d = {d})")));
    }
    let count = n.checked_mul(d).ok_or_else(|| Error::Invariant("n * d overflows".into()))?;
    if count.saturating_mul(4) > bytes.len() {
        return Err(Error::Truncated { path: path.into(), detail: format!("{n} x {d} features declared") });
    }
    let mut features = Vec::with_capacity(count);
    for _ in 0..count {
        let v = cur.f32("features")?;
        if !v.is_finite() {
            return Err(Error::Invariant("non-finite feature value".into()));
        }
        features.push(v as f64);
    }
    let mut subsets = Vec::with_capacity(n);
    for i in 0..n {
        let size = cur.u8("subset sizes")? as usize;
        if size != cfg.m() {
            return Err(Error::Invariant(format!("row {i}: subset size {size} != m = {}", cfg.m())));
        }
        let mut members = Vec::with_capacity(size);
        for _ in 0..size {
            members.push(cur.u16("subset members")? as usize);
        }
        let l = LabelSubset::new(members, space).map_err(|e| Error::Invariant(format!("row {i}: {e}")))?;
        if l.len() != size {
            return Err(Error::Invariant(format!("row {i}: repeated subset member")));
        }
        subsets.push(l);
    }
    let bits = cur.take(n.div_ceil(8), "response bits")?;
    let responses: Vec<Response> = (0..n).map(|i| Response::from_bit((bits[i / 8] >> (i % 8)) & 1).unwrap()).collect();
    if !n.is_multiple_of(8) && bits[n / 8] >> (n % 8) != 0 {
        return Err(Error::Invariant("padding bits in response block are set".into()));
    }
    let body_end = cur.at;
    let stored = cur.take(CHECKSUM_LEN, "checksum")?;
    if cur.at != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checksum", bytes.len() - cur.at)));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != stored {
        return Err(Error::Checksum);
    }
    QueryResponseDataset::new(features, d, subsets, responses, Provenance { source_id, seed, k, m })
}
