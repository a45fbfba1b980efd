//! Transcript, alignment and manifest text formats.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{read_feature_archive, FeatureMatrix};
use crate::error::{Error, Result};

pub type Transcripts = BTreeMap<String, Vec<String>>;
pub type Alignments = BTreeMap<String, Vec<Segment>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start_ms: f64,
    pub end_ms: f64,
    pub label: String,
}

impl Segment {
    pub fn new(start_ms: f64, end_ms: f64, label: impl Into<String>) -> Self {
        Self {
            start_ms,
            end_ms,
            label: label.into(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// `id<TAB>tok tok tok`, one utterance per line.
pub fn read_transcripts(path: &Path) -> Result<Transcripts> {
    parse_transcripts(&read_text(path)?)
}

pub(crate) fn parse_transcripts(text: &str) -> Result<Transcripts> {
    let mut out = Transcripts::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            continue;
        }
        let (id, rest) = match line.split_once('\t') {
            Some(parts) => parts,
            None => line.split_once(char::is_whitespace).unwrap_or((line, "")),
        };
        let id = id.trim();
        if id.is_empty() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "missing utterance id".into(),
            });
        }
        let tokens = rest.split_whitespace().map(str::to_string).collect();
        if out.insert(id.to_string(), tokens).is_some() {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("duplicate utterance id {id}"),
            });
        }
    }
    Ok(out)
}

pub fn write_transcripts(transcripts: &Transcripts, path: &Path) -> Result<()> {
    let mut s = String::new();
    for (id, toks) in transcripts {
        let _ = writeln!(s, "{id}\t{}", toks.join(" "));
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// `id start_ms end_ms label`, one segment per line.
pub fn read_alignments(path: &Path) -> Result<Alignments> {
    parse_alignments(&read_text(path)?)
}

pub(crate) fn parse_alignments(text: &str) -> Result<Alignments> {
    let mut out = Alignments::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let time = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line: lineno + 1,
                    msg: format!("bad time '{s}'"),
                })
        };
        let seg = Segment::new(time(fields[1])?, time(fields[2])?, fields[3]);
        if seg.end_ms <= seg.start_ms {
            return Err(Error::BadSegments(fields[0].to_string()));
        }
        out.entry(fields[0].to_string()).or_insert_with(Vec::new).push(seg);
    }
    for (id, segs) in out.iter_mut() {
        segs.sort_by(|a, b| a.start_ms.total_cmp(&b.start_ms));
        if segs.windows(2).any(|w| w[1].start_ms < w[0].end_ms) {
            return Err(Error::BadSegments(id.clone()));
        }
    }
    Ok(out)
}

pub fn write_alignments(alignments: &Alignments, path: &Path) -> Result<()> {
    fs::write(path, format_alignments(alignments)).map_err(|e| Error::io(path, e))
}

pub(crate) fn format_alignments(alignments: &Alignments) -> String {
    let mut s = String::new();
    for (id, segs) in alignments {
        for seg in segs {
            let _ = writeln!(s, "{id} {} {} {}", seg.start_ms, seg.end_ms, seg.label);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub utterance_id: String,
    pub feature_path: PathBuf,
    pub transcript: Option<Vec<String>>,
    pub alignment: Option<Vec<Segment>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
}

fn resolve(base: &Path, field: &str) -> Option<PathBuf> {
    if field.is_empty() || field == "-" {
        return None;
    }
    let p = Path::new(field);
    Some(if p.is_absolute() { p.to_path_buf() } else { base.join(p) })
}

/// Manifest TSV: `id<TAB>feature_archive[<TAB>transcript_file[<TAB>alignment_file]]`.
///
/// Relative paths resolve against the manifest's directory; `-` marks an
/// absent optional column.
pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut transcripts: HashMap<PathBuf, Transcripts> = HashMap::new();
    let mut alignments: HashMap<PathBuf, Alignments> = HashMap::new();
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: "manifest lines need at least an id and a feature path".into(),
            });
        }
        let id = fields[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                line: lineno + 1,
                msg: format!("duplicate utterance id {id}"),
            });
        }
        let feature_path = resolve(base, fields[1]).ok_or_else(|| Error::Parse {
            line: lineno + 1,
            msg: "missing feature path".into(),
        })?;
        if !feature_path.exists() {
            return Err(Error::io(
                &feature_path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "feature archive not found"),
            ));
        }
        let transcript = match fields.get(2).and_then(|f| resolve(base, f)) {
            Some(p) => {
                if !transcripts.contains_key(&p) {
                    transcripts.insert(p.clone(), read_transcripts(&p)?);
                }
                let t = transcripts[&p].get(&id).cloned();
                if t.is_none() {
                    log::warn!("no transcript for {id} in {}", p.display());
                }
                t
            }
            None => None,
        };
        let alignment = match fields.get(3).and_then(|f| resolve(base, f)) {
            Some(p) => {
                if !alignments.contains_key(&p) {
                    alignments.insert(p.clone(), read_alignments(&p)?);
                }
                alignments[&p].get(&id).cloned()
            }
            None => None,
        };
        entries.push(ManifestEntry {
            utterance_id: id,
            feature_path,
            transcript,
            alignment,
        });
    }
    for (p, t) in &transcripts {
        for id in t.keys().filter(|id| !seen.contains(*id)) {
            log::warn!("transcript file {} mentions unknown utterance {id}", p.display());
        }
    }
    Ok(CorpusManifest { entries })
}

/// Writes a manifest pointing every entry at the given files (written relative to
/// the manifest directory when possible).
pub fn write_manifest(
    path: &Path,
    ids: &[String],
    feature_path: &Path,
    transcript_path: Option<&Path>,
    alignment_path: Option<&Path>,
) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let rel = |p: &Path| -> String {
        p.strip_prefix(base)
            .unwrap_or(p)
            .to_string_lossy()
            .into_owned()
    };
    let mut s = String::new();
    for id in ids {
        let _ = write!(s, "{id}\t{}", rel(feature_path));
        let _ = write!(s, "\t{}", transcript_path.map_or("-".to_string(), rel));
        let _ = write!(s, "\t{}", alignment_path.map_or("-".to_string(), rel));
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

impl CorpusManifest {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Loads every entry's feature matrix, reading each archive once.
    pub fn load_features(&self) -> Result<Vec<FeatureMatrix>> {
        let mut cache: HashMap<&Path, BTreeMap<String, FeatureMatrix>> = HashMap::new();
        let mut out = Vec::with_capacity(self.entries.len());
        let mut dim = None;
        for e in &self.entries {
            if !cache.contains_key(e.feature_path.as_path()) {
                cache.insert(e.feature_path.as_path(), read_feature_archive(&e.feature_path)?);
            }
            let m = cache[e.feature_path.as_path()]
                .get(&e.utterance_id)
                .cloned()
                .ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "utterance {} not found in {}",
                        e.utterance_id,
                        e.feature_path.display()
                    ))
                })?;
            match dim {
                None => dim = Some(m.dim()),
                Some(d) if d != m.dim() => {
                    return Err(Error::DimMismatch {
                        expected: d,
                        got: m.dim(),
                        context: format!("utterance {}", e.utterance_id),
                    })
                }
                _ => {}
            }
            out.push(m);
        }
        Ok(out)
    }

    pub fn alignments(&self) -> Alignments {
        self.entries
            .iter()
            .filter_map(|e| e.alignment.clone().map(|a| (e.utterance_id.clone(), a)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transcript_line() {
        let t = parse_transcripts("utt1\tah b ah\n").unwrap();
        assert_eq!(t["utt1"], vec!["ah", "b", "ah"]);
    }

    #[test]
    fn ordered_segments() {
        let a = parse_alignments("utt1 120 310 b\nutt1 0 120 ah\n").unwrap();
        assert_eq!(
            a["utt1"],
            vec![Segment::new(0.0, 120.0, "ah"), Segment::new(120.0, 310.0, "b")]
        );
    }

    #[test]
    fn overlapping_segments_name_the_utterance() {
        match parse_alignments("utt1 0 120 a\nutt1 100 200 b\n") {
            Err(Error::BadSegments(id)) => assert_eq!(id, "utt1"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_alignments("utt2 50 10 a\n"),
            Err(Error::BadSegments(_))
        ));
    }

    #[test]
    fn malformed_alignment_lines() {
        assert!(matches!(parse_alignments("u 0 10\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_alignments("u 0 x a\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn alignment_format_round_trips() {
        let text = "u1 0 120 ah\nu1 120 310 b\nu2 0 50 c\n";
        let a = parse_alignments(text).unwrap();
        assert_eq!(format_alignments(&a), text);
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        use crate::features::write_feature_archive;
        let dir = tempfile::tempdir().unwrap();
        let mut feats = BTreeMap::new();
        feats.insert("u1".to_string(), FeatureMatrix::from_rows("u1", &[vec![1.0, 2.0]]).unwrap());
        write_feature_archive(&feats, &dir.path().join("f.audf")).unwrap();
        fs::write(dir.path().join("t.txt"), "u1\ta b\nghost\tc\n").unwrap();
        fs::write(dir.path().join("m.tsv"), "u1\tf.audf\tt.txt\t-\n").unwrap();
        let m = read_manifest(&dir.path().join("m.tsv")).unwrap();
        assert_eq!(m.entries[0].transcript.as_deref(), Some(&["a".to_string(), "b".to_string()][..]));
        assert_eq!(m.load_features().unwrap()[0].row(0), &[1.0, 2.0]);

        fs::write(dir.path().join("bad.tsv"), "u1\tmissing.audf\n").unwrap();
        assert!(matches!(read_manifest(&dir.path().join("bad.tsv")), Err(Error::Io { .. })));
    }
}
