//! Hierarchical subspace: variational posteriors over the hyper-subspace bases,
//! language embeddings and unit embeddings, and the maps from samples of those
//! to unit GMM parameters.
//!
//! A language subspace is `W = M_0 + Σ_k α_k M_k`, `b = m_0 + Σ_k α_k m_k`;
//! unit `u` of that language has flat parameters `W e_u + b` (bias broadcast
//! over mixture components) decoded by [`GaussianParams::from_eta`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GaussianParams, ParamLayout};
use crate::rng::{standard_normals, stream, stream_rng};

pub const DEFAULT_EMBEDDING_DIM: usize = 100;
pub const DEFAULT_LANGUAGE_DIM: usize = 6;
pub const DEFAULT_INIT_LOG_VAR: f64 = -4.605_170_185_988_091; // ln 1e-2

/// Diagonal Gaussian `N(mean, diag(exp(log_var)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationalGaussian {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl VariationalGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        if mean.len() != log_var.len() {
            return Err(Error::DimMismatch {
                expected: mean.len(),
                got: log_var.len(),
                context: "posterior log-variance".into(),
            });
        }
        if mean.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("posterior parameters".into()));
        }
        Ok(Self { mean, log_var })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            mean: vec![0.0; n],
            log_var: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Reparameterised draw `mean + exp(log_var / 2) * eps`.
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.len() {
            return Err(Error::DimMismatch {
                expected: self.len(),
                got: eps.len(),
                context: "noise vector".into(),
            });
        }
        Ok(self
            .mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect())
    }

    /// KL to `N(0, sigma² I)`.
    pub fn kl_to_isotropic(&self, sigma: f64) -> Result<f64> {
        kl_range(&self.mean, &self.log_var, sigma)
    }
}

pub fn sample_posterior(q: &VariationalGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    q.sample(eps)
}

pub fn kl_diag_gaussian(q: &VariationalGaussian, sigma: f64) -> Result<f64> {
    q.kl_to_isotropic(sigma)
}

/// KL of a slice of diagonal-Gaussian coordinates to `N(0, sigma²)`.
pub(crate) fn kl_range(mean: &[f64], log_var: &[f64], sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("prior std must be positive, got {sigma}")));
    }
    let s2 = sigma * sigma;
    let ln_s2 = s2.ln();
    Ok(0.5
        * mean
            .iter()
            .zip(log_var)
            .map(|(m, lv)| (m * m + lv.exp()) / s2 - 1.0 - lv + ln_s2)
            .sum::<f64>())
}

/// Adds the gradient of `-KL` w.r.t. `(mean, log_var)` into the given buffers.
pub(crate) fn neg_kl_grad(
    mean: &[f64],
    log_var: &[f64],
    sigma: f64,
    grad_mean: &mut [f64],
    grad_log_var: &mut [f64],
) {
    let s2 = sigma * sigma;
    for i in 0..mean.len() {
        grad_mean[i] -= mean[i] / s2;
        grad_log_var[i] -= 0.5 * (log_var[i].exp() / s2 - 1.0);
    }
}

/// Standard deviations of the zero-mean Gaussian priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    pub sigma_alpha: f64,
    pub sigma_basis: f64,
    pub sigma_bias: f64,
    pub sigma_embedding: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma_alpha: 1.0,
            sigma_basis: 1.0,
            sigma_bias: 1.0,
            sigma_embedding: 1.0,
        }
    }
}

/// Shape of the hyper-subspace: `K_h + 1` bases of `rows × cols` and biases of `bias_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperShape {
    pub language_dim: usize,
    pub rows: usize,
    pub cols: usize,
    pub bias_len: usize,
}

impl HyperShape {
    pub fn new(layout: &ParamLayout, embedding_dim: usize, language_dim: usize) -> Result<Self> {
        if embedding_dim == 0 || language_dim == 0 {
            return Err(Error::InvalidInput(
                "embedding and language dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            language_dim,
            rows: layout.len(),
            cols: embedding_dim,
            bias_len: layout.bias_len(),
        })
    }

    pub fn language_dim(&self) -> usize {
        self.language_dim
    }

    pub fn n_bases(&self) -> usize {
        self.language_dim + 1
    }

    pub fn basis_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn block_len(&self) -> usize {
        self.basis_len() + self.bias_len
    }

    pub fn len(&self) -> usize {
        self.n_bases() * self.block_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn basis_offset(&self, k: usize) -> usize {
        k * self.block_len()
    }

    pub fn bias_offset(&self, k: usize) -> usize {
        k * self.block_len() + self.basis_len()
    }

    pub fn basis<'a>(&self, flat: &'a [f64], k: usize) -> &'a [f64] {
        &flat[self.basis_offset(k)..][..self.basis_len()]
    }

    pub fn bias<'a>(&self, flat: &'a [f64], k: usize) -> &'a [f64] {
        &flat[self.bias_offset(k)..][..self.bias_len]
    }

    /// Whether flat index `i` belongs to a basis matrix (as opposed to a bias).
    pub fn is_basis_index(&self, i: usize) -> bool {
        i % self.block_len() < self.basis_len()
    }
}

/// Posterior over `M_0..M_K` and `m_0..m_K`, stored as one flat diagonal Gaussian.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperSubspace {
    pub shape: HyperShape,
    pub q: VariationalGaussian,
}

impl HyperSubspace {
    pub fn kl(&self, prior: &PriorConfig) -> Result<f64> {
        let s = &self.shape;
        let mut total = 0.0;
        for k in 0..s.n_bases() {
            let (o, n) = (s.basis_offset(k), s.basis_len());
            total += kl_range(&self.q.mean[o..o + n], &self.q.log_var[o..o + n], prior.sigma_basis)?;
            let (o, n) = (s.bias_offset(k), s.bias_len);
            total += kl_range(&self.q.mean[o..o + n], &self.q.log_var[o..o + n], prior.sigma_bias)?;
        }
        Ok(total)
    }

    /// Serialised posterior parameters, used to fingerprint the block.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 * self.q.len());
        for v in self.q.mean.iter().chain(&self.q.log_var) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }
}

/// Posterior over one language's embedding `α` and its unit embeddings `e_u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageParams {
    pub language_dim: usize,
    pub embedding_dim: usize,
    pub n_units: usize,
    pub q: VariationalGaussian,
}

impl LanguageParams {
    pub fn flat_len(language_dim: usize, embedding_dim: usize, n_units: usize) -> usize {
        language_dim + n_units * embedding_dim
    }

    pub fn unit_offset(&self, u: usize) -> usize {
        self.language_dim + u * self.embedding_dim
    }

    pub fn alpha<'a>(&self, flat: &'a [f64]) -> &'a [f64] {
        &flat[..self.language_dim]
    }

    pub fn unit<'a>(&self, flat: &'a [f64], u: usize) -> &'a [f64] {
        &flat[self.unit_offset(u)..][..self.embedding_dim]
    }

    pub fn alpha_posterior(&self) -> VariationalGaussian {
        VariationalGaussian {
            mean: self.q.mean[..self.language_dim].to_vec(),
            log_var: self.q.log_var[..self.language_dim].to_vec(),
        }
    }

    pub fn kl(&self, prior: &PriorConfig) -> Result<f64> {
        let k = self.language_dim;
        Ok(kl_range(&self.q.mean[..k], &self.q.log_var[..k], prior.sigma_alpha)?
            + kl_range(&self.q.mean[k..], &self.q.log_var[k..], prior.sigma_embedding)?)
    }
}

/// `W = M_0 + Σ_k α_k M_k` and `b = m_0 + Σ_k α_k m_k` from a flat hyper-subspace sample.
pub fn compose_subspace(shape: &HyperShape, hyper: &[f64], alpha: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if alpha.len() != shape.language_dim() {
        return Err(Error::DimMismatch {
            expected: shape.language_dim(),
            got: alpha.len(),
            context: "language embedding".into(),
        });
    }
    if hyper.len() != shape.len() {
        return Err(Error::DimMismatch {
            expected: shape.len(),
            got: hyper.len(),
            context: "hyper-subspace sample".into(),
        });
    }
    let mut w = shape.basis(hyper, 0).to_vec();
    let mut b = shape.bias(hyper, 0).to_vec();
    for (k, &a) in alpha.iter().enumerate() {
        for (dst, src) in w.iter_mut().zip(shape.basis(hyper, k + 1)) {
            *dst += a * src;
        }
        for (dst, src) in b.iter_mut().zip(shape.bias(hyper, k + 1)) {
            *dst += a * src;
        }
    }
    Ok((w, b))
}

/// Flat unit vector `W e + b` with the bias broadcast through `bias_map`.
pub fn unit_eta(w: &[f64], b: &[f64], e: &[f64], bias_map: &[usize]) -> Vec<f64> {
    let cols = e.len();
    bias_map
        .iter()
        .enumerate()
        .map(|(p, &bi)| {
            let row = &w[p * cols..(p + 1) * cols];
            row.iter().zip(e).map(|(x, y)| x * y).sum::<f64>() + b[bi]
        })
        .collect()
}

/// GMM parameters of one unit from a language subspace sample and a unit embedding sample.
pub fn decode_unit_params(
    w: &[f64],
    b: &[f64],
    e: &[f64],
    layout: &ParamLayout,
    strict: bool,
) -> Result<GaussianParams> {
    if w.len() != layout.len() * e.len() || b.len() != layout.bias_len() {
        return Err(Error::DimMismatch {
            expected: layout.len() * e.len(),
            got: w.len(),
            context: "subspace matrix".into(),
        });
    }
    let eta = unit_eta(w, b, e, &layout.bias_map());
    GaussianParams::from_eta(&eta, layout, strict)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub init_scale: f64,
    pub init_log_var: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            init_scale: 0.1,
            init_log_var: DEFAULT_INIT_LOG_VAR,
        }
    }
}

fn init_gaussian(seed: u64, path: &[u64], n: usize, init: &InitConfig) -> VariationalGaussian {
    let mut rng = stream_rng(seed, path);
    let mean = standard_normals(&mut rng, n)
        .into_iter()
        .map(|z| z * init.init_scale)
        .collect();
    VariationalGaussian {
        mean,
        log_var: vec![init.init_log_var; n],
    }
}

pub fn init_hyper_subspace(seed: u64, shape: HyperShape, init: &InitConfig) -> HyperSubspace {
    HyperSubspace {
        shape,
        q: init_gaussian(seed, &[stream::INIT_HYPER], shape.len(), init),
    }
}

/// Language posterior; `language_index` selects an independent random stream.
pub fn init_language(
    seed: u64,
    language_index: u64,
    shape: &HyperShape,
    n_units: usize,
    init: &InitConfig,
) -> LanguageParams {
    let n = LanguageParams::flat_len(shape.language_dim(), shape.cols, n_units);
    LanguageParams {
        language_dim: shape.language_dim(),
        embedding_dim: shape.cols,
        n_units,
        q: init_gaussian(seed, &[stream::INIT_LANGUAGE, language_index], n, init),
    }
}

/// Hyper-subspace plus one language posterior per entry of `units_per_language`.
pub fn init_posteriors(
    seed: u64,
    shape: HyperShape,
    units_per_language: &[usize],
    init: &InitConfig,
) -> (HyperSubspace, Vec<LanguageParams>) {
    let hyper = init_hyper_subspace(seed, shape, init);
    let langs = units_per_language
        .iter()
        .enumerate()
        .map(|(l, &u)| init_language(seed, l as u64, &shape, u, init))
        .collect();
    (hyper, langs)
}
