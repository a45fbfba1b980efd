//! Viterbi decoding with expected log-likelihoods and conversion of state
//! paths to time-stamped unit segments.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::HshmmModel;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Segment};
use crate::inference::{check_shape, expected_log_likelihoods, sample_unit_params, EmissionEstimator, NoiseBank};
use crate::model::{build_phone_loop_graph, DecodingGraph, GraphState};

#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub states: Vec<usize>,
    pub score: f64,
}

/// Best state path. Ties go to the lowest state index.
pub fn viterbi(graph: &DecodingGraph, llh: &[Vec<f64>]) -> Result<ViterbiPath> {
    check_shape(graph, llh)?;
    let n = llh.len();
    let ns = graph.n_states();
    let emit = |t: usize, s: usize| llh[t][graph.states[s].emission];
    let mut delta: Vec<f64> = (0..ns)
        .map(|s| {
            if graph.initial[s] > f64::NEG_INFINITY {
                graph.initial_score(s) + emit(0, s)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let mut back = vec![vec![usize::MAX; ns]; n];
    for t in 1..n {
        let mut next = vec![f64::NEG_INFINITY; ns];
        for s in 0..ns {
            let mut best = f64::NEG_INFINITY;
            let mut arg = usize::MAX;
            for inc in &graph.incoming[s] {
                let v = delta[inc.from] + graph.arc_score(inc.log_prob, inc.entry);
                if v > best {
                    best = v;
                    arg = inc.from;
                }
            }
            if arg != usize::MAX {
                next[s] = best + emit(t, s);
                back[t][s] = arg;
            }
        }
        delta = next;
    }
    let mut best = f64::NEG_INFINITY;
    let mut last = usize::MAX;
    for s in 0..ns {
        let v = delta[s] + graph.final_[s];
        if v > best {
            best = v;
            last = s;
        }
    }
    if last == usize::MAX || !best.is_finite() {
        return Err(Error::InfeasibleAlignment);
    }
    let mut states = vec![0; n];
    states[n - 1] = last;
    for t in (1..n).rev() {
        states[t - 1] = back[t][states[t]];
    }
    Ok(ViterbiPath { states, score: best })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitSegment {
    pub start_ms: f64,
    pub end_ms: f64,
    pub unit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTranscription {
    pub utterance_id: String,
    pub segments: Vec<UnitSegment>,
}

pub fn unit_label(unit: usize) -> String {
    format!("au{unit}")
}

impl UnitTranscription {
    /// Segments with `au<N>` labels, in the alignment file format.
    pub fn to_segments(&self) -> Vec<Segment> {
        self.segments
            .iter()
            .map(|s| Segment::new(s.start_ms, s.end_ms, unit_label(s.unit)))
            .collect()
    }
}

/// Merges consecutive frames of one unit occurrence; a new segment starts when
/// the unit changes or its state sequence restarts.
pub fn path_to_units(utterance_id: &str, path: &[GraphState], frame_shift_ms: f64) -> UnitTranscription {
    let mut segments: Vec<UnitSegment> = Vec::new();
    let mut prev: Option<GraphState> = None;
    for (t, st) in path.iter().enumerate() {
        let start = t as f64 * frame_shift_ms;
        let end = (t + 1) as f64 * frame_shift_ms;
        let split = match prev {
            None => true,
            Some(p) => p.unit != st.unit || st.hmm_state < p.hmm_state,
        };
        if split {
            segments.push(UnitSegment {
                start_ms: start,
                end_ms: end,
                unit: st.unit,
            });
        } else if let Some(last) = segments.last_mut() {
            last.end_ms = end;
        }
        prev = Some(*st);
    }
    UnitTranscription {
        utterance_id: utterance_id.to_string(),
        segments,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub seed: u64,
    pub n_samples: usize,
    pub estimator: EmissionEstimator,
    pub strict: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_samples: 5,
            estimator: EmissionEstimator::default(),
            strict: false,
        }
    }
}

/// Decodes every utterance with the phone loop of language `language`.
///
/// Languages without stick-breaking weights decode with uniform unit weights.
pub fn decode_corpus(
    model: &HshmmModel,
    language: usize,
    features: &[FeatureMatrix],
    cfg: &DecodeConfig,
) -> Result<Vec<UnitTranscription>> {
    if cfg.n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let lang = model
        .languages
        .get(language)
        .ok_or_else(|| Error::InvalidInput(format!("no language with index {language}")))?;
    for f in features {
        if f.dim() != model.layout.dim {
            return Err(Error::DimMismatch {
                expected: model.layout.dim,
                got: f.dim(),
                context: format!("features of {}", f.utterance_id),
            });
        }
    }
    let weights = match &lang.phone_loop {
        Some(p) => p.expected_log_weights(),
        None => vec![0.0; lang.params.n_units],
    };
    let graph = build_phone_loop_graph(&model.layout, &weights)?;
    let noise = NoiseBank::draw(
        cfg.seed,
        0,
        cfg.n_samples,
        model.hyper.q.len(),
        &[(language as u64, lang.params.q.len())],
    );
    let samples = sample_unit_params(
        &model.hyper,
        &lang.params,
        &noise.hyper,
        &noise.languages[0],
        &model.layout,
        cfg.strict,
    )?;
    features
        .par_iter()
        .map(|f| {
            let scores = expected_log_likelihoods(&samples, f, cfg.estimator)?;
            let path = viterbi(&graph, &scores.llh)?;
            let states: Vec<GraphState> = path.states.iter().map(|&s| graph.states[s]).collect();
            Ok(path_to_units(&f.utterance_id, &states, f.frame_shift_ms))
        })
        .collect()
}
