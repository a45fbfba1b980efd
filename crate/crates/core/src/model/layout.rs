//! Flat parameter layout of one acoustic unit and the GMM parameters it maps to.
//!
//! A unit is a 3-state left-to-right HMM; each state emits through a `K`-component
//! diagonal GMM. The flat vector is laid out state by state as
//! `[K mean blocks (D each), K log-variance blocks (D each), K-1 weight logits]`.
//! The mean block holds precision-scaled means, so the structured parameters are
//! `var = exp(log_var)`, `mean = var * mean_block` and
//! `weights = softmax([logits, 0])`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_HMM_STATES: usize = 3;
pub const DEFAULT_COMPONENTS: usize = 4;

pub const VAR_FLOOR: f64 = 1e-8;
pub const VAR_CEIL: f64 = 1e8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub dim: usize,
    pub n_states: usize,
    pub n_components: usize,
}

impl ParamLayout {
    pub fn new(dim: usize, n_components: usize) -> Result<Self> {
        if dim == 0 || n_components == 0 {
            return Err(Error::InvalidInput(
                "layout needs positive feature dim and component count".into(),
            ));
        }
        Ok(Self {
            dim,
            n_states: N_HMM_STATES,
            n_components,
        })
    }

    pub fn n_logits(&self) -> usize {
        self.n_components - 1
    }

    pub fn state_len(&self) -> usize {
        2 * self.n_components * self.dim + self.n_logits()
    }

    /// Length of the flat per-unit vector.
    pub fn len(&self) -> usize {
        self.n_states * self.state_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean_offset(&self, state: usize, comp: usize) -> usize {
        state * self.state_len() + comp * self.dim
    }

    pub fn log_var_offset(&self, state: usize, comp: usize) -> usize {
        state * self.state_len() + (self.n_components + comp) * self.dim
    }

    pub fn logit_offset(&self, state: usize) -> usize {
        state * self.state_len() + 2 * self.n_components * self.dim
    }

    /// Per-state bias block: `[mean bias (D), log-variance bias (D), logits (K-1)]`,
    /// shared by all components of the state.
    pub fn bias_state_len(&self) -> usize {
        2 * self.dim + self.n_logits()
    }

    pub fn bias_len(&self) -> usize {
        self.n_states * self.bias_state_len()
    }

    /// Bias entry feeding flat index `index`.
    pub fn bias_index(&self, index: usize) -> usize {
        let state = index / self.state_len();
        let r = index % self.state_len();
        let kd = self.n_components * self.dim;
        let base = state * self.bias_state_len();
        if r < kd {
            base + r % self.dim
        } else if r < 2 * kd {
            base + self.dim + (r - kd) % self.dim
        } else {
            base + 2 * self.dim + (r - 2 * kd)
        }
    }

    /// `bias_index` for every flat index.
    pub fn bias_map(&self) -> Vec<usize> {
        (0..self.len()).map(|p| self.bias_index(p)).collect()
    }

    /// Number of Gaussian components in one unit.
    pub fn components_per_unit(&self) -> usize {
        self.n_states * self.n_components
    }
}

/// Structured view of one state's slice of the flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBlocks {
    pub mean: Vec<Vec<f64>>,
    pub log_var: Vec<Vec<f64>>,
    pub logits: Vec<f64>,
}

/// The flat vector split into its named blocks, state by state.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaBlocks {
    pub states: Vec<StateBlocks>,
}

pub fn unpack_eta(eta: &[f64], layout: &ParamLayout) -> Result<EtaBlocks> {
    if eta.len() != layout.len() {
        return Err(Error::DimMismatch {
            expected: layout.len(),
            got: eta.len(),
            context: "unit parameter vector".into(),
        });
    }
    let d = layout.dim;
    let states = (0..layout.n_states)
        .map(|i| StateBlocks {
            mean: (0..layout.n_components)
                .map(|j| eta[layout.mean_offset(i, j)..][..d].to_vec())
                .collect(),
            log_var: (0..layout.n_components)
                .map(|j| eta[layout.log_var_offset(i, j)..][..d].to_vec())
                .collect(),
            logits: eta[layout.logit_offset(i)..][..layout.n_logits()].to_vec(),
        })
        .collect();
    Ok(EtaBlocks { states })
}

pub fn pack_eta(blocks: &EtaBlocks, layout: &ParamLayout) -> Result<Vec<f64>> {
    let shape_err = |what: &str| Error::InvalidInput(format!("eta blocks do not match layout: {what}"));
    if blocks.states.len() != layout.n_states {
        return Err(shape_err("state count"));
    }
    let mut eta = Vec::with_capacity(layout.len());
    for s in &blocks.states {
        if s.mean.len() != layout.n_components
            || s.log_var.len() != layout.n_components
            || s.logits.len() != layout.n_logits()
        {
            return Err(shape_err("component count"));
        }
        for block in s.mean.iter().chain(&s.log_var) {
            if block.len() != layout.dim {
                return Err(shape_err("feature dim"));
            }
            eta.extend_from_slice(block);
        }
        eta.extend_from_slice(&s.logits);
    }
    Ok(eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateGmm {
    pub weights: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub vars: Vec<Vec<f64>>,
    pub log_vars: Vec<Vec<f64>>,
}

impl StateGmm {
    /// `ln N(x; mean_j, diag(var_j))` for component `j`.
    pub fn component_log_density(&self, j: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xd, &m), (&v, &lv)) in x
            .iter()
            .zip(&self.means[j])
            .zip(self.vars[j].iter().zip(&self.log_vars[j]))
        {
            let diff = xd - m;
            acc += LN_2PI + lv + diff * diff / v;
        }
        -0.5 * acc
    }

    /// `ln Σ_j π_j N(x; μ_j, Σ_j)`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|j| self.log_weights[j] + self.component_log_density(j, x))
            .collect();
        crate::math::log_sum_exp(&terms)
    }
}

/// Emission parameters of one unit: weights, means and diagonal covariances per state.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub states: Vec<StateGmm>,
}

fn log_softmax_with_zero(logits: &[f64]) -> Vec<f64> {
    let mut full = logits.to_vec();
    full.push(0.0);
    let lse = crate::math::log_sum_exp(&full);
    full.iter().map(|l| l - lse).collect()
}

impl GaussianParams {
    /// Applies the mapping from a flat unit vector to GMM parameters.
    ///
    /// Variances are `exp` of the log-variance block clamped to
    /// `[VAR_FLOOR, VAR_CEIL]`; with `strict` set, leaving that range is an error.
    pub fn from_eta(eta: &[f64], layout: &ParamLayout, strict: bool) -> Result<Self> {
        if eta.len() != layout.len() {
            return Err(Error::DimMismatch {
                expected: layout.len(),
                got: eta.len(),
                context: "unit parameter vector".into(),
            });
        }
        let d = layout.dim;
        let mut states = Vec::with_capacity(layout.n_states);
        for i in 0..layout.n_states {
            let logits = &eta[layout.logit_offset(i)..][..layout.n_logits()];
            if logits.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFinite(format!("weight logits of state {i}")));
            }
            let log_weights = log_softmax_with_zero(logits);
            let weights: Vec<f64> = log_weights.iter().map(|l| l.exp()).collect();
            let mut means = Vec::with_capacity(layout.n_components);
            let mut vars = Vec::with_capacity(layout.n_components);
            let mut log_vars = Vec::with_capacity(layout.n_components);
            for j in 0..layout.n_components {
                let component = i * layout.n_components + j;
                let h_var = &eta[layout.log_var_offset(i, j)..][..d];
                let h_mean = &eta[layout.mean_offset(i, j)..][..d];
                let mut v = Vec::with_capacity(d);
                for &h in h_var {
                    let e = h.exp();
                    if h.is_nan() || (strict && !(VAR_FLOOR..=VAR_CEIL).contains(&e)) {
                        return Err(Error::CovarianceOverflow { component });
                    }
                    v.push(e.clamp(VAR_FLOOR, VAR_CEIL));
                }
                let m: Vec<f64> = v.iter().zip(h_mean).map(|(v, a)| v * a).collect();
                if m.iter().any(|x| !x.is_finite()) {
                    return Err(Error::CovarianceOverflow { component });
                }
                log_vars.push(v.iter().map(|x| x.ln()).collect());
                vars.push(v);
                means.push(m);
            }
            states.push(StateGmm {
                weights,
                log_weights,
                means,
                vars,
                log_vars,
            });
        }
        Ok(Self { states })
    }

    /// Inverse of [`GaussianParams::from_eta`] for unclamped parameters.
    pub fn to_eta(&self, layout: &ParamLayout) -> Result<Vec<f64>> {
        self.validate(layout)?;
        let k = layout.n_components;
        let blocks = EtaBlocks {
            states: self
                .states
                .iter()
                .map(|s| StateBlocks {
                    mean: s
                        .means
                        .iter()
                        .zip(&s.vars)
                        .map(|(m, v)| m.iter().zip(v).map(|(m, v)| m / v).collect())
                        .collect(),
                    log_var: s.vars.iter().map(|v| v.iter().map(|x| x.ln()).collect()).collect(),
                    logits: (0..k - 1)
                        .map(|j| s.weights[j].ln() - s.weights[k - 1].ln())
                        .collect(),
                })
                .collect(),
        };
        pack_eta(&blocks, layout)
    }

    pub fn validate(&self, layout: &ParamLayout) -> Result<()> {
        if self.states.len() != layout.n_states {
            return Err(Error::DimMismatch {
                expected: layout.n_states,
                got: self.states.len(),
                context: "HMM states".into(),
            });
        }
        for (i, s) in self.states.iter().enumerate() {
            if s.weights.len() != layout.n_components || s.means.len() != layout.n_components {
                return Err(Error::DimMismatch {
                    expected: layout.n_components,
                    got: s.weights.len(),
                    context: format!("components of state {i}"),
                });
            }
            let total: f64 = s.weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 || s.weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
                return Err(Error::InvalidInput(format!(
                    "weights of state {i} sum to {total}"
                )));
            }
            for j in 0..layout.n_components {
                if s.vars[j].len() != layout.dim || s.means[j].len() != layout.dim {
                    return Err(Error::DimMismatch {
                        expected: layout.dim,
                        got: s.vars[j].len(),
                        context: format!("state {i} component {j}"),
                    });
                }
                if s.vars[j].iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(Error::CovarianceOverflow {
                        component: i * layout.n_components + j,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Packs GMM parameters into the flat unit vector.
pub fn pack_gaussian_params(params: &GaussianParams, layout: &ParamLayout) -> Result<Vec<f64>> {
    params.to_eta(layout)
}
