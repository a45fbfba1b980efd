//! Frame-level acoustic features and the text formats that accompany them.
//!
//! Features are stored as `f32` so that archives round-trip bit-exactly; all
//! numerical work converts rows to `f64` on the fly.

mod archive;
mod mfcc;
mod text;

pub use archive::{read_feature_archive, write_feature_archive, ARCHIVE_MAGIC, ARCHIVE_VERSION};
pub use mfcc::{add_deltas, extract_features, frame_count, FeatureConfig};
pub use text::{
    read_alignments, read_manifest, read_transcripts, write_alignments, write_manifest,
    write_transcripts, Alignments, CorpusManifest, ManifestEntry, Segment, Transcripts,
};

use crate::error::{Error, Result};

pub const DEFAULT_FRAME_SHIFT_MS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub utterance_id: String,
    n_frames: usize,
    dim: usize,
    data: Vec<f32>,
    pub frame_shift_ms: f64,
}

impl FeatureMatrix {
    pub fn new(
        utterance_id: impl Into<String>,
        n_frames: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let utterance_id = utterance_id.into();
        if n_frames == 0 || dim == 0 {
            return Err(Error::InvalidInput(format!(
                "feature matrix for {utterance_id} must have at least one frame and one dimension"
            )));
        }
        if data.len() != n_frames * dim {
            return Err(Error::DimMismatch {
                expected: n_frames * dim,
                got: data.len(),
                context: format!("feature data for {utterance_id}"),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "feature {utterance_id} frame {} dim {}",
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self {
            utterance_id,
            n_frames,
            dim,
            data,
            frame_shift_ms: DEFAULT_FRAME_SHIFT_MS,
        })
    }

    /// Builds a matrix from `f64` rows, rounding to `f32`.
    pub fn from_rows(utterance_id: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (n, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimMismatch {
                    expected: dim,
                    got: row.len(),
                    context: format!("row {n}"),
                });
            }
            data.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(utterance_id, rows.len(), dim, data)
    }

    pub fn with_frame_shift(mut self, frame_shift_ms: f64) -> Self {
        self.frame_shift_ms = frame_shift_ms;
        self
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, n: usize) -> &[f32] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn row_f64(&self, n: usize) -> Vec<f64> {
        self.row(n).iter().map(|&v| f64::from(v)).collect()
    }

    /// All rows widened to `f64`.
    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_frames).map(|n| self.row_f64(n)).collect()
    }

    pub fn duration_ms(&self) -> f64 {
        self.n_frames as f64 * self.frame_shift_ms
    }
}
