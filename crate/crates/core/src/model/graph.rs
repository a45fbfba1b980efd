//! Log-domain decoding graphs: the unit phone loop and forced-alignment chains.

use std::collections::HashMap;

use super::layout::ParamLayout;
use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// Within-unit transition probabilities (fixed, not learned).
pub const SELF_LOOP_PROB: f64 = 0.5;
pub const FORWARD_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphState {
    pub unit: usize,
    pub hmm_state: usize,
    /// Column of the log-likelihood matrix this state reads.
    pub emission: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub to: usize,
    pub log_prob: f64,
    /// Arc enters a new unit occurrence.
    pub entry: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incoming {
    pub from: usize,
    pub log_prob: f64,
    pub entry: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodingGraph {
    pub states: Vec<GraphState>,
    pub transitions: Vec<Vec<Transition>>,
    pub incoming: Vec<Vec<Incoming>>,
    /// Log-probability of starting in each state (each start is a unit entry).
    pub initial: Vec<f64>,
    /// Log-probability of ending in each state.
    pub final_: Vec<f64>,
    /// Log-score added to every unit entry, including the initial one.
    pub entry_log_penalty: f64,
    /// Number of log-likelihood columns the graph reads.
    pub n_emissions: usize,
    pub n_units: usize,
}

impl DecodingGraph {
    /// Validated constructor for arbitrary graphs.
    pub fn from_parts(
        states: Vec<GraphState>,
        transitions: Vec<Vec<Transition>>,
        initial: Vec<f64>,
        final_: Vec<f64>,
        entry_log_penalty: f64,
    ) -> Result<Self> {
        let n = states.len();
        if n == 0 || transitions.len() != n || initial.len() != n || final_.len() != n {
            return Err(Error::InvalidInput("graph component lengths disagree".into()));
        }
        if transitions.iter().flatten().any(|t| t.to >= n || t.log_prob.is_nan()) {
            return Err(Error::InvalidInput("graph has a dangling or NaN transition".into()));
        }
        if initial.iter().chain(&final_).any(|v| v.is_nan()) || entry_log_penalty.is_nan() {
            return Err(Error::InvalidInput("graph has NaN weights".into()));
        }
        let n_emissions = states.iter().map(|s| s.emission + 1).max().unwrap_or(0);
        Ok(Self::new(states, transitions, initial, final_, entry_log_penalty, n_emissions))
    }

    fn new(
        states: Vec<GraphState>,
        transitions: Vec<Vec<Transition>>,
        initial: Vec<f64>,
        final_: Vec<f64>,
        entry_log_penalty: f64,
        n_emissions: usize,
    ) -> Self {
        let n_units = states.iter().map(|s| s.unit + 1).max().unwrap_or(0);
        let mut incoming = vec![Vec::new(); states.len()];
        for (from, arcs) in transitions.iter().enumerate() {
            for t in arcs {
                incoming[t.to].push(Incoming {
                    from,
                    log_prob: t.log_prob,
                    entry: t.entry,
                });
            }
        }
        for inc in &mut incoming {
            inc.sort_by_key(|i| i.from);
        }
        Self {
            states,
            transitions,
            incoming,
            initial,
            final_,
            entry_log_penalty,
            n_emissions,
            n_units,
        }
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn initial_score(&self, s: usize) -> f64 {
        self.initial[s] + self.entry_log_penalty
    }

    pub fn arc_score(&self, log_prob: f64, entry: bool) -> f64 {
        if entry {
            log_prob + self.entry_log_penalty
        } else {
            log_prob
        }
    }

    /// Score of the arc `from -> to`, `-inf` when absent.
    pub fn transition_score(&self, from: usize, to: usize) -> f64 {
        self.transitions[from]
            .iter()
            .find(|t| t.to == to)
            .map_or(f64::NEG_INFINITY, |t| self.arc_score(t.log_prob, t.entry))
    }

    /// Outgoing probability mass of `s`. Chain ends have no forward arc, so
    /// their exit is carried by the final weight and counted here.
    pub fn outgoing_mass(&self, s: usize) -> f64 {
        let mut logs: Vec<f64> = self.transitions[s].iter().map(|t| t.log_prob).collect();
        if !self.transitions[s].iter().any(|t| t.to != s) {
            logs.push(self.final_[s]);
        }
        log_sum_exp(&logs).exp()
    }

    /// Total score of a state path with the given emissions.
    pub fn path_score(&self, path: &[usize], llh: &[Vec<f64>]) -> f64 {
        let Some(&first) = path.first() else {
            return f64::NEG_INFINITY;
        };
        let mut score = self.initial_score(first) + llh[0][self.states[first].emission];
        for (t, w) in path.windows(2).enumerate() {
            score += self.transition_score(w[0], w[1]) + llh[t + 1][self.states[w[1]].emission];
        }
        score + self.final_[*path.last().unwrap()]
    }
}

/// Phone loop over `expected_log_weights.len()` units.
///
/// Entry weights are normalised over units; the normaliser `ln Σ exp(w_u)` is
/// charged on every entry as `entry_log_penalty`, so each entry into unit `u`
/// scores exactly its expected log weight while the transition rows stay
/// stochastic.
pub fn build_phone_loop_graph(layout: &ParamLayout, expected_log_weights: &[f64]) -> Result<DecodingGraph> {
    let n_units = expected_log_weights.len();
    if n_units == 0 {
        return Err(Error::InvalidInput("phone loop needs at least one unit".into()));
    }
    if expected_log_weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("unit log weights".into()));
    }
    let n_hmm = layout.n_states;
    let norm = log_sum_exp(expected_log_weights);
    let entry: Vec<f64> = expected_log_weights.iter().map(|w| w - norm).collect();
    let self_lp = SELF_LOOP_PROB.ln();
    let fwd_lp = FORWARD_PROB.ln();

    let mut states = Vec::with_capacity(n_units * n_hmm);
    let mut transitions = Vec::with_capacity(n_units * n_hmm);
    let mut initial = vec![f64::NEG_INFINITY; n_units * n_hmm];
    let mut final_ = vec![f64::NEG_INFINITY; n_units * n_hmm];
    for u in 0..n_units {
        for i in 0..n_hmm {
            let s = u * n_hmm + i;
            states.push(GraphState {
                unit: u,
                hmm_state: i,
                emission: s,
            });
            let mut arcs = vec![Transition {
                to: s,
                log_prob: self_lp,
                entry: false,
            }];
            if i + 1 < n_hmm {
                arcs.push(Transition {
                    to: s + 1,
                    log_prob: fwd_lp,
                    entry: false,
                });
            } else {
                arcs.extend((0..n_units).map(|v| Transition {
                    to: v * n_hmm,
                    log_prob: fwd_lp + entry[v],
                    entry: true,
                }));
                final_[s] = fwd_lp;
            }
            transitions.push(arcs);
        }
        initial[u * n_hmm] = entry[u];
    }
    Ok(DecodingGraph::new(
        states,
        transitions,
        initial,
        final_,
        norm,
        n_units * n_hmm,
    ))
}

/// Left-to-right chain through the units of `transcript`.
pub fn build_alignment_graph(
    transcript: &[String],
    token_to_unit: &HashMap<String, usize>,
    n_units: usize,
    layout: &ParamLayout,
) -> Result<DecodingGraph> {
    if transcript.is_empty() {
        return Err(Error::InvalidInput("empty transcript".into()));
    }
    let units = transcript
        .iter()
        .map(|tok| {
            token_to_unit
                .get(tok)
                .copied()
                .filter(|&u| u < n_units)
                .ok_or_else(|| Error::UnmappedToken(tok.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let n_hmm = layout.n_states;
    let n = units.len() * n_hmm;
    let self_lp = SELF_LOOP_PROB.ln();
    let fwd_lp = FORWARD_PROB.ln();
    let mut states = Vec::with_capacity(n);
    let mut transitions = Vec::with_capacity(n);
    for (k, &u) in units.iter().enumerate() {
        for i in 0..n_hmm {
            let s = k * n_hmm + i;
            states.push(GraphState {
                unit: u,
                hmm_state: i,
                emission: u * n_hmm + i,
            });
            let mut arcs = vec![Transition {
                to: s,
                log_prob: self_lp,
                entry: false,
            }];
            if s + 1 < n {
                arcs.push(Transition {
                    to: s + 1,
                    log_prob: fwd_lp,
                    entry: i + 1 == n_hmm,
                });
            }
            transitions.push(arcs);
        }
    }
    let mut initial = vec![f64::NEG_INFINITY; n];
    initial[0] = 0.0;
    let mut final_ = vec![f64::NEG_INFINITY; n];
    final_[n - 1] = fwd_lp;
    let mut graph = DecodingGraph::new(states, transitions, initial, final_, 0.0, n_units * n_hmm);
    graph.n_units = n_units;
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> ParamLayout {
        ParamLayout::new(2, 4).unwrap()
    }

    fn assert_stochastic(g: &DecodingGraph) {
        for s in 0..g.n_states() {
            assert!((g.outgoing_mass(s) - 1.0).abs() < 1e-10, "state {s}");
        }
        let init: Vec<f64> = g.initial.clone();
        assert!((log_sum_exp(&init).exp() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn single_unit_loop() {
        let g = build_phone_loop_graph(&layout(), &[-1.0]).unwrap();
        assert_eq!(g.n_states(), 3);
        assert!(g.transition_score(2, 0).is_finite());
        assert!(g.transition_score(1, 0).is_infinite());
        assert_stochastic(&g);
    }

    #[test]
    fn hundred_unit_loop() {
        let w: Vec<f64> = (0..100).map(|u| -(u as f64) * 0.1 - 0.5).collect();
        let g = build_phone_loop_graph(&layout(), &w).unwrap();
        assert_eq!(g.n_states(), 300);
        assert_stochastic(&g);
        // an entry scores exactly the expected log weight
        let s = g.transition_score(2, 3 * 7) - FORWARD_PROB.ln();
        assert!((s - w[7]).abs() < 1e-12);
        assert!((g.initial_score(3 * 4) - w[4]).abs() < 1e-12);
    }

    #[test]
    fn swapping_identical_units_is_a_symmetry() {
        let g = build_phone_loop_graph(&layout(), &[-0.7, -0.7]).unwrap();
        let swap = |s: usize| (s + 3) % 6;
        for a in 0..6 {
            for b in 0..6 {
                assert_eq!(g.transition_score(a, b), g.transition_score(swap(a), swap(b)));
            }
        }
    }

    #[test]
    fn non_finite_weights_rejected() {
        assert!(build_phone_loop_graph(&layout(), &[0.0, f64::NAN]).is_err());
        assert!(build_phone_loop_graph(&layout(), &[]).is_err());
    }

    fn map() -> HashMap<String, usize> {
        [("a".to_string(), 0), ("b".to_string(), 1)].into_iter().collect()
    }

    #[test]
    fn alignment_chains() {
        let g = build_alignment_graph(&["a".into()], &map(), 2, &layout()).unwrap();
        assert_eq!(g.n_states(), 3);
        assert_stochastic(&g);

        let g = build_alignment_graph(&["a".into(), "b".into()], &map(), 2, &layout()).unwrap();
        assert_eq!(g.n_states(), 6);
        assert!(g.transition_score(2, 3).is_finite());
        assert!(g.transition_score(3, 2).is_infinite());
        assert_eq!(g.states[4].emission, 4);
        assert_stochastic(&g);
    }

    #[test]
    fn alignment_errors() {
        assert!(matches!(
            build_alignment_graph(&[], &map(), 2, &layout()),
            Err(Error::InvalidInput(_))
        ));
        match build_alignment_graph(&["a".into(), "zz".into()], &map(), 2, &layout()) {
            Err(Error::UnmappedToken(t)) => assert_eq!(t, "zz"),
            other => panic!("{other:?}"),
        }
    }
}
