//! Log-domain forward-backward over a decoding graph.

use crate::error::{Error, Result};
use crate::math::{log_add, log_sum_exp};
use crate::model::DecodingGraph;

#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `n_frames × n_states` occupation probabilities.
    pub state: Vec<Vec<f64>>,
    pub log_marginal: f64,
    /// Expected number of entries into each unit.
    pub unit_entries: Vec<f64>,
}

impl Posteriors {
    /// State posteriors summed over states sharing an emission column.
    pub fn emission_posteriors(&self, graph: &DecodingGraph) -> Vec<Vec<f64>> {
        self.state
            .iter()
            .map(|row| {
                let mut out = vec![0.0; graph.n_emissions];
                for (s, p) in row.iter().enumerate() {
                    out[graph.states[s].emission] += p;
                }
                out
            })
            .collect()
    }
}

pub(crate) fn check_shape(graph: &DecodingGraph, llh: &[Vec<f64>]) -> Result<()> {
    if llh.is_empty() {
        return Err(Error::InvalidInput("no frames to align".into()));
    }
    if let Some(row) = llh.iter().find(|r| r.len() < graph.n_emissions) {
        return Err(Error::DimMismatch {
            expected: graph.n_emissions,
            got: row.len(),
            context: "log-likelihood columns".into(),
        });
    }
    Ok(())
}

pub fn forward_backward(graph: &DecodingGraph, llh: &[Vec<f64>]) -> Result<Posteriors> {
    check_shape(graph, llh)?;
    let n = llh.len();
    let ns = graph.n_states();
    let emit = |t: usize, s: usize| llh[t][graph.states[s].emission];

    let mut alpha = vec![vec![f64::NEG_INFINITY; ns]; n];
    for s in 0..ns {
        if graph.initial[s] > f64::NEG_INFINITY {
            alpha[0][s] = graph.initial_score(s) + emit(0, s);
        }
    }
    for t in 1..n {
        let (prev, cur) = alpha.split_at_mut(t);
        let prev = &prev[t - 1];
        for s in 0..ns {
            let mut acc = f64::NEG_INFINITY;
            for inc in &graph.incoming[s] {
                acc = log_add(acc, prev[inc.from] + graph.arc_score(inc.log_prob, inc.entry));
            }
            cur[0][s] = if acc > f64::NEG_INFINITY { acc + emit(t, s) } else { acc };
        }
    }
    let log_marginal = log_sum_exp(
        &(0..ns)
            .map(|s| alpha[n - 1][s] + graph.final_[s])
            .collect::<Vec<_>>(),
    );
    if !log_marginal.is_finite() {
        return Err(Error::InfeasibleAlignment);
    }

    let mut beta = vec![vec![f64::NEG_INFINITY; ns]; n];
    beta[n - 1].clone_from(&graph.final_);
    for t in (0..n - 1).rev() {
        let (cur, next) = beta.split_at_mut(t + 1);
        let next = &next[0];
        for s in 0..ns {
            let mut acc = f64::NEG_INFINITY;
            for tr in &graph.transitions[s] {
                acc = log_add(
                    acc,
                    graph.arc_score(tr.log_prob, tr.entry) + emit(t + 1, tr.to) + next[tr.to],
                );
            }
            cur[t][s] = acc;
        }
    }

    let state: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            (0..ns)
                .map(|s| (alpha[t][s] + beta[t][s] - log_marginal).exp())
                .collect()
        })
        .collect();

    let mut unit_entries = vec![0.0; graph.n_units];
    for s in 0..ns {
        if graph.initial[s] > f64::NEG_INFINITY {
            unit_entries[graph.states[s].unit] += state[0][s];
        }
    }
    for t in 1..n {
        for s in 0..ns {
            if alpha[t - 1][s] == f64::NEG_INFINITY {
                continue;
            }
            for tr in graph.transitions[s].iter().filter(|tr| tr.entry) {
                let xi = alpha[t - 1][s] + graph.arc_score(tr.log_prob, true) + emit(t, tr.to)
                    + beta[t][tr.to]
                    - log_marginal;
                unit_entries[graph.states[tr.to].unit] += xi.exp();
            }
        }
    }

    Ok(Posteriors {
        state,
        log_marginal,
        unit_entries,
    })
}
