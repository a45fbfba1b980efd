//! Expected per-frame log-likelihoods under posterior parameter samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::math::log_sum_exp;
use crate::model::{GaussianParams, StateGmm};

/// How sample-averaged state log-likelihoods are formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmissionEstimator {
    /// `ln Σ_j exp((1/S) Σ_s [ln π_sj + ln N_sj(x)])`: the component-level bound,
    /// consistent with the responsibilities and the M-step objective.
    #[default]
    ComponentBound,
    /// `(1/S) Σ_s ln Σ_j π_sj N_sj(x)`.
    MixtureAverage,
}

/// Per-frame scores for every `(unit, hmm state)` column.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionScores {
    /// `n_frames × n_columns` state log-likelihoods.
    pub llh: Vec<Vec<f64>>,
    /// Log responsibilities within each column's mixture, `[frame][column * K + j]`.
    pub log_resp: Vec<Vec<f64>>,
    pub n_components: usize,
}

impl EmissionScores {
    pub fn n_columns(&self) -> usize {
        self.llh.first().map_or(0, Vec::len)
    }
}

/// `samples[s][u]` holds unit `u`'s parameters under posterior sample `s`.
pub fn expected_log_likelihoods(
    samples: &[Vec<GaussianParams>],
    features: &FeatureMatrix,
    estimator: EmissionEstimator,
) -> Result<EmissionScores> {
    let n_samples = samples.len();
    if n_samples == 0 {
        return Err(Error::InvalidInput("need at least one posterior sample".into()));
    }
    let n_units = samples[0].len();
    if n_units == 0 || samples.iter().any(|s| s.len() != n_units) {
        return Err(Error::InvalidInput("posterior samples disagree on unit count".into()));
    }
    let n_hmm = samples[0][0].states.len();
    let k = samples[0][0].states[0].weights.len();
    let dim = samples[0][0].states[0].means[0].len();
    if features.dim() != dim {
        return Err(Error::DimMismatch {
            expected: dim,
            got: features.dim(),
            context: format!("features of {}", features.utterance_id),
        });
    }
    let n_cols = n_units * n_hmm;
    let mut llh = Vec::with_capacity(features.n_frames());
    let mut log_resp = Vec::with_capacity(features.n_frames());
    let mut per_sample = vec![0.0; k];
    let mut avg = vec![0.0; k];
    for n in 0..features.n_frames() {
        let x = features.row_f64(n);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("frame {n} of {}", features.utterance_id)));
        }
        let mut row = Vec::with_capacity(n_cols);
        let mut resp = Vec::with_capacity(n_cols * k);
        for u in 0..n_units {
            for i in 0..n_hmm {
                let lse = state_score(samples.iter().map(|s| &s[u].states[i]), &x, estimator, &mut avg, &mut per_sample);
                row.push(lse);
                let norm = log_sum_exp(&avg);
                resp.extend(avg.iter().map(|a| a - norm));
            }
        }
        if let Some(c) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "log-likelihood of column {c} at frame {n} of {}",
                features.utterance_id
            )));
        }
        llh.push(row);
        log_resp.push(resp);
    }
    Ok(EmissionScores {
        llh,
        log_resp,
        n_components: k,
    })
}

/// Score of one HMM state for frame `x` given its mixture under every sample.
/// Leaves the sample-averaged joint component log-densities in `avg`.
pub(crate) fn state_score<'a>(
    gmms: impl ExactSizeIterator<Item = &'a StateGmm>,
    x: &[f64],
    estimator: EmissionEstimator,
    avg: &mut [f64],
    per_sample: &mut [f64],
) -> f64 {
    let inv_s = 1.0 / gmms.len() as f64;
    avg.fill(0.0);
    let mut mix_avg = 0.0;
    for gmm in gmms {
        for (j, slot) in per_sample.iter_mut().enumerate() {
            *slot = gmm.log_weights[j] + gmm.component_log_density(j, x);
            avg[j] += *slot * inv_s;
        }
        if estimator == EmissionEstimator::MixtureAverage {
            mix_avg += log_sum_exp(per_sample) * inv_s;
        }
    }
    match estimator {
        EmissionEstimator::ComponentBound => log_sum_exp(avg),
        EmissionEstimator::MixtureAverage => mix_avg,
    }
}
