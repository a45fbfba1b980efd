//! Binary feature archive.
//!
//! Layout (little-endian): `AUDF`, version byte, then records of
//! `u16` id length, UTF-8 id, `u32` frame count, `u32` dim and
//! `n_frames * dim` row-major `f32` values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"AUDF";
pub const ARCHIVE_VERSION: u8 = 1;

pub fn write_feature_archive(features: &BTreeMap<String, FeatureMatrix>, path: &Path) -> Result<()> {
    let bytes = encode_archive(features)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_feature_archive(path: &Path) -> Result<BTreeMap<String, FeatureMatrix>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes, &path.display().to_string())
}

pub(crate) fn encode_archive(features: &BTreeMap<String, FeatureMatrix>) -> Result<Vec<u8>> {
    let first = features
        .values()
        .next()
        .ok_or_else(|| Error::InvalidInput("cannot write an empty feature archive".into()))?;
    let dim = first.dim();
    let mut out = Vec::new();
    out.extend_from_slice(ARCHIVE_MAGIC);
    out.push(ARCHIVE_VERSION);
    for (id, m) in features {
        if m.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: m.dim(),
                context: format!("archive record {id}"),
            });
        }
        let id_len = u16::try_from(id.len())
            .map_err(|_| Error::InvalidInput(format!("utterance id too long: {id}")))?;
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id.as_bytes());
        out.extend_from_slice(&(m.n_frames() as u32).to_le_bytes());
        out.extend_from_slice(&(m.dim() as u32).to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::TruncatedRecord(format!(
                "{}: {what} at byte {}",
                self.source, self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub(crate) fn decode_archive(bytes: &[u8], source: &str) -> Result<BTreeMap<String, FeatureMatrix>> {
    if bytes.len() < 5 || &bytes[..4] != ARCHIVE_MAGIC {
        return Err(Error::BadMagic(source.to_string()));
    }
    if bytes[4] != ARCHIVE_VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let mut cur = Cursor {
        bytes,
        pos: 5,
        source,
    };
    let mut out = BTreeMap::new();
    let mut archive_dim = None;
    while cur.pos < bytes.len() {
        let id_len = cur.u16("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "utterance id")?)
            .map_err(|_| Error::InvalidInput(format!("{source}: utterance id is not UTF-8")))?
            .to_string();
        let n_frames = cur.u32("frame count")? as usize;
        let dim = cur.u32("dim")? as usize;
        match archive_dim {
            None => archive_dim = Some(dim),
            Some(d) if d != dim => {
                return Err(Error::DimMismatch {
                    expected: d,
                    got: dim,
                    context: format!("{source}: record {id}"),
                })
            }
            _ => {}
        }
        let payload = cur.take(n_frames * dim * 4, &format!("payload of {id}"))?;
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = FeatureMatrix::new(id.clone(), n_frames, dim, data)?;
        if out.insert(id.clone(), m).is_some() {
            return Err(Error::InvalidInput(format!("{source}: duplicate utterance id {id}")));
        }
    }
    Ok(out)
}
