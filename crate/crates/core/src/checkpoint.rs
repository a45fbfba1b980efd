//! Trained model container and its binary checkpoint format.
//!
//! Layout: `"HSHM"`, version byte, `u32` header length, JSON header, then every
//! posterior array as little-endian `f64` in header order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamLayout, PhoneLoop};
use crate::subspace::{HyperShape, HyperSubspace, LanguageParams, PriorConfig, VariationalGaussian};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"HSHM";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub name: String,
    /// Label of each unit: phone symbols for transcribed languages, `au<N>` otherwise.
    pub unit_names: Vec<String>,
    pub params: LanguageParams,
    /// Stick-breaking posterior, present for languages trained on a phone loop.
    pub phone_loop: Option<PhoneLoop>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HshmmModel {
    pub layout: ParamLayout,
    pub prior: PriorConfig,
    pub hyper: HyperSubspace,
    pub languages: Vec<LanguageModel>,
    /// Completed EM iterations of the stage that produced this model.
    pub iteration: usize,
}

impl HshmmModel {
    pub fn shape(&self) -> HyperShape {
        self.hyper.shape
    }

    pub fn language_index(&self, name: &str) -> Option<usize> {
        self.languages.iter().position(|l| l.name == name)
    }
}

#[derive(Serialize, Deserialize)]
struct LanguageHeader {
    name: String,
    unit_names: Vec<String>,
    n_units: usize,
    phone_loop_concentration: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layout: ParamLayout,
    shape: HyperShape,
    prior: PriorConfig,
    iteration: usize,
    languages: Vec<LanguageHeader>,
}

fn push_all(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &HshmmModel) -> Result<Vec<u8>> {
    let header = Header {
        layout: model.layout,
        shape: model.hyper.shape,
        prior: model.prior,
        iteration: model.iteration,
        languages: model
            .languages
            .iter()
            .map(|l| LanguageHeader {
                name: l.name.clone(),
                unit_names: l.unit_names.clone(),
                n_units: l.params.n_units,
                phone_loop_concentration: l.phone_loop.as_ref().map(|p| p.concentration),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    push_all(&mut out, &model.hyper.q.mean);
    push_all(&mut out, &model.hyper.q.log_var);
    for l in &model.languages {
        push_all(&mut out, &l.params.q.mean);
        push_all(&mut out, &l.params.q.log_var);
        if let Some(p) = &l.phone_loop {
            push_all(&mut out, &p.a);
            push_all(&mut out, &p.b);
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::TruncatedRecord(format!("checkpoint {}", self.source)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8], source: &str) -> Result<HshmmModel> {
    let mut r = Reader { bytes, pos: 0, source };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic(source.to_string()));
    }
    let version = r.take(1)?[0];
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| Error::Parse {
        line: 0,
        msg: format!("checkpoint header of {source}: {e}"),
    })?;
    if header.shape.rows != header.layout.len() || header.shape.bias_len != header.layout.bias_len() {
        return Err(Error::DimMismatch {
            expected: header.layout.len(),
            got: header.shape.rows,
            context: format!("hyper-subspace rows in {source}"),
        });
    }
    let n = header.shape.len();
    let hyper = HyperSubspace {
        shape: header.shape,
        q: VariationalGaussian::new(r.f64s(n)?, r.f64s(n)?)?,
    };
    let mut languages = Vec::with_capacity(header.languages.len());
    for lh in header.languages {
        if lh.unit_names.len() != lh.n_units {
            return Err(Error::InvalidInput(format!("unit names of {} do not match its unit count", lh.name)));
        }
        let n = LanguageParams::flat_len(header.shape.language_dim, header.shape.cols, lh.n_units);
        let params = LanguageParams {
            language_dim: header.shape.language_dim,
            embedding_dim: header.shape.cols,
            n_units: lh.n_units,
            q: VariationalGaussian::new(r.f64s(n)?, r.f64s(n)?)?,
        };
        let phone_loop = match lh.phone_loop_concentration {
            Some(g) => Some(PhoneLoop::from_parts(r.f64s(lh.n_units)?, r.f64s(lh.n_units)?, g)?),
            None => None,
        };
        languages.push(LanguageModel {
            name: lh.name,
            unit_names: lh.unit_names,
            params,
            phone_loop,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::InvalidInput(format!("trailing bytes in checkpoint {source}")));
    }
    Ok(HshmmModel {
        layout: header.layout,
        prior: header.prior,
        hyper,
        languages,
        iteration: header.iteration,
    })
}

pub fn write_checkpoint(model: &HshmmModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<HshmmModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
