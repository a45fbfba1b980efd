//! Seeded synthetic corpora sampled from a known hierarchical subspace model,
//! and exhaustive path-enumeration oracles for small graphs.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{
    write_alignments, write_feature_archive, write_manifest, write_transcripts, Alignments, FeatureMatrix,
    Segment, Transcripts,
};
use crate::math::log_sum_exp;
use crate::model::{DecodingGraph, GaussianParams, ParamLayout, FORWARD_PROB};
use crate::rng::{standard_normals, stream, stream_rng};
use crate::subspace::{compose_subspace, decode_unit_params, HyperShape, PriorConfig};

pub const TARGET_LANGUAGE: &str = "target";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub dim: usize,
    pub embedding_dim: usize,
    pub language_dim: usize,
    pub n_units: usize,
    pub n_components: usize,
    pub n_source_languages: usize,
    /// Utterances per language.
    pub n_utterances: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub frame_shift_ms: f64,
    /// Standard deviations the ground-truth parameters are drawn with.
    pub prior: PriorConfig,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            dim: 2,
            embedding_dim: 4,
            language_dim: 2,
            n_units: 5,
            n_components: 4,
            n_source_languages: 2,
            n_utterances: 200,
            min_frames: 20,
            max_frames: 60,
            frame_shift_ms: 10.0,
            prior: PriorConfig::default(),
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_units == 0 || self.n_components == 0 {
            return Err(Error::InvalidInput("dim, n_units and n_components must be positive".into()));
        }
        if self.embedding_dim == 0 || self.language_dim == 0 {
            return Err(Error::InvalidInput("embedding dimensions must be positive".into()));
        }
        if self.min_frames < 3 || self.min_frames > self.max_frames {
            return Err(Error::InvalidInput("need 3 <= min_frames <= max_frames".into()));
        }
        if !(self.frame_shift_ms > 0.0) {
            return Err(Error::InvalidInput("frame shift must be positive".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<ParamLayout> {
        ParamLayout::new(self.dim, self.n_components)
    }

    pub fn language_names(&self) -> Vec<String> {
        (0..self.n_source_languages)
            .map(|l| format!("source{l}"))
            .chain(std::iter::once(TARGET_LANGUAGE.to_string()))
            .collect()
    }
}

/// Ground truth of one language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageTruth {
    pub name: String,
    pub alpha: Vec<f64>,
    pub embeddings: Vec<Vec<f64>>,
    pub unit_labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLanguage {
    pub truth: LanguageTruth,
    pub units: Vec<GaussianParams>,
    pub features: BTreeMap<String, FeatureMatrix>,
    pub alignments: Alignments,
    pub transcripts: Transcripts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub spec: GeneratorSpec,
    /// Flat hyper-subspace sample `[M_0, m_0, M_1, m_1, ...]`.
    pub hyper: Vec<f64>,
    /// Source languages first, the target last.
    pub languages: Vec<SyntheticLanguage>,
}

impl SyntheticCorpus {
    pub fn target(&self) -> &SyntheticLanguage {
        self.languages.last().expect("corpus has a target language")
    }

    pub fn sources(&self) -> &[SyntheticLanguage] {
        &self.languages[..self.languages.len() - 1]
    }
}

fn scaled_normals(rng: &mut ChaCha8Rng, n: usize, sigma: f64) -> Vec<f64> {
    standard_normals(rng, n).into_iter().map(|z| z * sigma).collect()
}

fn sample_categorical(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return j;
        }
    }
    weights.len() - 1
}

/// Frames of one complete pass through a unit HMM.
fn sample_unit_frames(rng: &mut ChaCha8Rng, unit: &GaussianParams) -> Vec<Vec<f64>> {
    let mut frames = Vec::new();
    for gmm in &unit.states {
        loop {
            let j = sample_categorical(rng, &gmm.weights);
            let z = standard_normals(rng, gmm.means[j].len());
            frames.push(
                gmm.means[j]
                    .iter()
                    .zip(&gmm.vars[j])
                    .zip(z)
                    .map(|((m, v), z)| m + v.sqrt() * z)
                    .collect(),
            );
            if rng.random::<f64>() >= 1.0 - FORWARD_PROB {
                break;
            }
        }
    }
    frames
}

fn sample_utterance(
    rng: &mut ChaCha8Rng,
    spec: &GeneratorSpec,
    units: &[GaussianParams],
) -> (Vec<Vec<f64>>, Vec<(usize, usize)>) {
    let target_len = rng.random_range(spec.min_frames..=spec.max_frames);
    loop {
        let mut frames: Vec<Vec<f64>> = Vec::new();
        let mut occurrences = Vec::new();
        let mut prev: Option<usize> = None;
        while frames.len() < target_len {
            let u = if units.len() == 1 {
                0
            } else {
                loop {
                    let u = rng.random_range(0..units.len());
                    if Some(u) != prev {
                        break u;
                    }
                }
            };
            let f = sample_unit_frames(rng, &units[u]);
            occurrences.push((u, f.len()));
            frames.extend(f);
            prev = Some(u);
        }
        if frames.len() <= spec.max_frames {
            return (frames, occurrences);
        }
    }
}

/// Samples the hyper-subspace, every language's embeddings and all utterances.
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let layout = spec.layout()?;
    let shape = HyperShape::new(&layout, spec.embedding_dim, spec.language_dim)?;
    let p = &spec.prior;

    let mut rng = stream_rng(spec.seed, &[stream::SYNTH, 0]);
    let mut hyper = Vec::with_capacity(shape.len());
    for _ in 0..shape.n_bases() {
        hyper.extend(scaled_normals(&mut rng, shape.basis_len(), p.sigma_basis));
        hyper.extend(scaled_normals(&mut rng, shape.bias_len, p.sigma_bias));
    }

    let mut languages = Vec::new();
    for (l, name) in spec.language_names().into_iter().enumerate() {
        let mut rng = stream_rng(spec.seed, &[stream::SYNTH, 1, l as u64]);
        let alpha = scaled_normals(&mut rng, spec.language_dim, p.sigma_alpha);
        let embeddings: Vec<Vec<f64>> = (0..spec.n_units)
            .map(|_| scaled_normals(&mut rng, spec.embedding_dim, p.sigma_embedding))
            .collect();
        let (w, b) = compose_subspace(&shape, &hyper, &alpha)?;
        let units = embeddings
            .iter()
            .map(|e| decode_unit_params(&w, &b, e, &layout, false))
            .collect::<Result<Vec<_>>>()?;
        let prefix = if name == TARGET_LANGUAGE { String::new() } else { format!("{name}_") };
        let unit_labels: Vec<String> = (0..spec.n_units).map(|u| format!("{prefix}p{u}")).collect();

        let mut features = BTreeMap::new();
        let mut alignments = Alignments::new();
        let mut transcripts = Transcripts::new();
        for n in 0..spec.n_utterances {
            let mut rng = stream_rng(spec.seed, &[stream::SYNTH, 2, l as u64, n as u64]);
            let id = format!("{name}_{n:04}");
            let (frames, occ) = sample_utterance(&mut rng, spec, &units);
            let mut t = 0usize;
            let mut segs = Vec::with_capacity(occ.len());
            for &(u, len) in &occ {
                segs.push(Segment::new(
                    t as f64 * spec.frame_shift_ms,
                    (t + len) as f64 * spec.frame_shift_ms,
                    unit_labels[u].clone(),
                ));
                t += len;
            }
            transcripts.insert(id.clone(), occ.iter().map(|&(u, _)| unit_labels[u].clone()).collect());
            alignments.insert(id.clone(), segs);
            features.insert(
                id.clone(),
                FeatureMatrix::from_rows(id, &frames)?.with_frame_shift(spec.frame_shift_ms),
            );
        }
        languages.push(SyntheticLanguage {
            truth: LanguageTruth {
                name,
                alpha,
                embeddings,
                unit_labels,
            },
            units,
            features,
            alignments,
            transcripts,
        });
    }
    Ok(SyntheticCorpus {
        spec: spec.clone(),
        hyper,
        languages,
    })
}

#[derive(Serialize, Deserialize)]
struct GeneratorRecord {
    spec: GeneratorSpec,
    hyper: Vec<f64>,
    languages: Vec<LanguageTruth>,
}

/// Writes `generator.json` and, per language, `features.audf`,
/// `alignments.txt`, `transcripts.txt` and `manifest.tsv`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let record = GeneratorRecord {
        spec: corpus.spec.clone(),
        hyper: corpus.hyper.clone(),
        languages: corpus.languages.iter().map(|l| l.truth.clone()).collect(),
    };
    let path = dir.join("generator.json");
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    for lang in &corpus.languages {
        let ldir = dir.join(&lang.truth.name);
        std::fs::create_dir_all(&ldir).map_err(|e| Error::io(&ldir, e))?;
        write_feature_archive(&lang.features, &ldir.join("features.audf"))?;
        write_alignments(&lang.alignments, &ldir.join("alignments.txt"))?;
        write_transcripts(&lang.transcripts, &ldir.join("transcripts.txt"))?;
        let ids: Vec<String> = lang.features.keys().cloned().collect();
        write_manifest(
            &ldir.join("manifest.tsv"),
            &ids,
            Path::new("features.audf"),
            Some(Path::new("transcripts.txt")),
            Some(Path::new("alignments.txt")),
        )?;
    }
    Ok(())
}

/// Reads the generator spec recorded by [`write_corpus`].
pub fn read_generator_spec(path: &Path) -> Result<GeneratorSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let record: GeneratorRecord = serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        msg: e.to_string(),
    })?;
    Ok(record.spec)
}

pub const MAX_ORACLE_FRAMES: usize = 8;
pub const MAX_ORACLE_STATES: usize = 12;

fn check_budget(graph: &DecodingGraph, llh: &[Vec<f64>]) -> Result<()> {
    crate::inference::check_shape(graph, llh)?;
    if llh.len() > MAX_ORACLE_FRAMES || graph.n_states() > MAX_ORACLE_STATES {
        return Err(Error::BudgetExceeded(format!(
            "{} frames over {} states (limits {MAX_ORACLE_FRAMES} and {MAX_ORACLE_STATES})",
            llh.len(),
            graph.n_states()
        )));
    }
    Ok(())
}

/// Every admissible path with its total score, in depth-first order.
fn enumerate_paths(graph: &DecodingGraph, llh: &[Vec<f64>]) -> Vec<(Vec<usize>, f64)> {
    fn extend(
        graph: &DecodingGraph,
        llh: &[Vec<f64>],
        path: &mut Vec<usize>,
        score: f64,
        out: &mut Vec<(Vec<usize>, f64)>,
    ) {
        let s = *path.last().unwrap();
        if path.len() == llh.len() {
            let total = score + graph.final_[s];
            if total > f64::NEG_INFINITY {
                out.push((path.clone(), total));
            }
            return;
        }
        let t = path.len();
        for tr in &graph.transitions[s] {
            let sc = score + graph.arc_score(tr.log_prob, tr.entry) + llh[t][graph.states[tr.to].emission];
            if sc == f64::NEG_INFINITY {
                continue;
            }
            path.push(tr.to);
            extend(graph, llh, path, sc, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    for s in 0..graph.n_states() {
        if graph.initial[s] == f64::NEG_INFINITY {
            continue;
        }
        let mut path = vec![s];
        extend(graph, llh, &mut path, graph.initial_score(s) + llh[0][graph.states[s].emission], &mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactMarginals {
    pub state: Vec<Vec<f64>>,
    pub log_marginal: f64,
}

pub fn brute_force_marginals(graph: &DecodingGraph, llh: &[Vec<f64>]) -> Result<ExactMarginals> {
    check_budget(graph, llh)?;
    let paths = enumerate_paths(graph, llh);
    if paths.is_empty() {
        return Err(Error::InfeasibleAlignment);
    }
    let scores: Vec<f64> = paths.iter().map(|p| p.1).collect();
    let log_marginal = log_sum_exp(&scores);
    let mut state = vec![vec![0.0; graph.n_states()]; llh.len()];
    for (path, score) in &paths {
        let w = (score - log_marginal).exp();
        for (t, &s) in path.iter().enumerate() {
            state[t][s] += w;
        }
    }
    Ok(ExactMarginals { state, log_marginal })
}

/// Highest-scoring path; among equal scores the first in enumeration order.
pub fn brute_force_best_path(graph: &DecodingGraph, llh: &[Vec<f64>]) -> Result<(Vec<usize>, f64)> {
    check_budget(graph, llh)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for (p, s) in enumerate_paths(graph, llh) {
        if best.as_ref().is_none_or(|b| s > b.1) {
            best = Some((p, s));
        }
    }
    best.ok_or(Error::InfeasibleAlignment)
}
