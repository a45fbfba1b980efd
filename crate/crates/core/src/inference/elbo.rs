//! Empirical ELBO over posterior samples and its reparameterised gradient.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{GaussianParams, ParamLayout, VAR_CEIL, VAR_FLOOR};
use crate::rng::{standard_normals, stream, stream_rng};
use crate::subspace::{
    compose_subspace, neg_kl_grad, unit_eta, HyperShape, HyperSubspace, LanguageParams, PriorConfig,
};

use super::stats::SufficientStats;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Standard-normal draws for every sample of the hyper-subspace and of each language.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBank {
    /// `[sample][coordinate]`.
    pub hyper: Vec<Vec<f64>>,
    /// `[language][sample][coordinate]`.
    pub languages: Vec<Vec<Vec<f64>>>,
}

impl NoiseBank {
    /// Draws from per-`(key, language, sample)` streams, so a language's noise
    /// does not depend on which other languages are present.
    pub fn draw(
        seed: u64,
        key: u64,
        n_samples: usize,
        hyper_len: usize,
        languages: &[(u64, usize)],
    ) -> Self {
        let hyper = (0..n_samples as u64)
            .map(|s| standard_normals(&mut stream_rng(seed, &[stream::EPS_HYPER, key, s]), hyper_len))
            .collect();
        let languages = languages
            .iter()
            .map(|&(id, len)| {
                (0..n_samples as u64)
                    .map(|s| {
                        standard_normals(&mut stream_rng(seed, &[stream::EPS_LANGUAGE, key, id, s]), len)
                    })
                    .collect()
            })
            .collect();
        Self { hyper, languages }
    }

    pub fn n_samples(&self) -> usize {
        self.hyper.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ElboOptions {
    pub strict: bool,
    /// Compute gradients for the hyper-subspace posterior.
    pub train_hyper: bool,
}

/// Parts of the empirical objective; `total()` is their signed sum.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboTerms {
    /// Sample-averaged expected log-likelihood per language.
    pub data: Vec<f64>,
    pub kl_theta: f64,
    pub kl_hyper: f64,
}

impl ElboTerms {
    pub fn total(&self) -> f64 {
        self.data.iter().sum::<f64>() - self.kl_theta - self.kl_hyper
    }
}

/// Gradient of the objective w.r.t. posterior means and log-variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ElboGradient {
    /// Empty when the hyper-subspace is frozen.
    pub hyper_mean: Vec<f64>,
    pub hyper_log_var: Vec<f64>,
    pub language_mean: Vec<Vec<f64>>,
    pub language_log_var: Vec<Vec<f64>>,
}

fn check_inputs(
    stats: &[SufficientStats],
    hyper: &HyperSubspace,
    languages: &[LanguageParams],
    noise: &NoiseBank,
    layout: &ParamLayout,
) -> Result<()> {
    if stats.len() != languages.len() || noise.languages.len() != languages.len() {
        return Err(Error::InvalidInput("statistics, languages and noise disagree in count".into()));
    }
    if noise.n_samples() == 0 {
        return Err(Error::InvalidInput("need at least one posterior sample".into()));
    }
    let shape = &hyper.shape;
    if shape.rows != layout.len() || shape.bias_len != layout.bias_len() {
        return Err(Error::DimMismatch {
            expected: layout.len(),
            got: shape.rows,
            context: "hyper-subspace rows".into(),
        });
    }
    for (l, (lang, st)) in languages.iter().zip(stats).enumerate() {
        let per_unit = layout.components_per_unit();
        if st.n_components() != lang.n_units * per_unit || st.dim != layout.dim {
            return Err(Error::DimMismatch {
                expected: lang.n_units * per_unit,
                got: st.n_components(),
                context: format!("statistics of language {l}"),
            });
        }
        if noise.languages[l].iter().any(|e| e.len() != lang.q.len()) {
            return Err(Error::DimMismatch {
                expected: lang.q.len(),
                got: noise.languages[l].first().map_or(0, Vec::len),
                context: format!("noise of language {l}"),
            });
        }
    }
    if noise.hyper.iter().any(|e| e.len() != hyper.q.len()) {
        return Err(Error::DimMismatch {
            expected: hyper.q.len(),
            got: noise.hyper[0].len(),
            context: "hyper-subspace noise".into(),
        });
    }
    Ok(())
}

/// Sum over the components of unit `u` of the expected log-likelihood of the
/// statistics under `params`; optionally adds `∂/∂η` into `grad`.
pub fn unit_data_term(
    stats: &SufficientStats,
    unit: usize,
    params: &GaussianParams,
    eta: &[f64],
    layout: &ParamLayout,
    mut grad: Option<&mut [f64]>,
) -> Result<f64> {
    let d = layout.dim;
    let k = layout.n_components;
    let mut total = 0.0;
    for (i, gmm) in params.states.iter().enumerate() {
        let base = (unit * layout.n_states + i) * k;
        let n_state: f64 = stats.zeroth[base..base + k].iter().sum();
        if n_state == 0.0 {
            continue;
        }
        for j in 0..k {
            let c = base + j;
            let n = stats.zeroth[c];
            let phi = stats.first_of(c);
            let big_phi = stats.second_of(c);
            let a = &eta[layout.mean_offset(i, j)..][..d];
            let h = &eta[layout.log_var_offset(i, j)..][..d];
            let v = &gmm.vars[j];
            let lv = &gmm.log_vars[j];
            let mut quad = 0.0;
            let mut lin = 0.0;
            let mut tr = 0.0;
            let mut logdet = 0.0;
            for t in 0..d {
                quad += v[t] * a[t] * a[t];
                lin += phi[t] * a[t];
                tr += big_phi[t] / v[t];
                logdet += lv[t];
            }
            let term = n * (gmm.log_weights[j] - 0.5 * logdet - 0.5 * quad - d as f64 * HALF_LN_2PI)
                + lin
                - 0.5 * tr;
            if !term.is_finite() {
                return Err(Error::NonFinite(format!("expected log-likelihood of component {c}")));
            }
            total += term;
            if let Some(g) = grad.as_deref_mut() {
                let mo = layout.mean_offset(i, j);
                let vo = layout.log_var_offset(i, j);
                for t in 0..d {
                    g[mo + t] += phi[t] - n * v[t] * a[t];
                    let e = h[t].exp();
                    if e > VAR_FLOOR && e < VAR_CEIL {
                        g[vo + t] += -0.5 * n - 0.5 * n * v[t] * a[t] * a[t] + 0.5 * big_phi[t] / v[t];
                    }
                }
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            let lo = layout.logit_offset(i);
            for j in 0..k - 1 {
                g[lo + j] += stats.zeroth[base + j] - n_state * gmm.weights[j];
            }
        }
    }
    Ok(total)
}

struct SampleResult {
    data: Vec<f64>,
    hyper_grad: Vec<f64>,
    language_grads: Vec<Vec<f64>>,
}

fn unit_has_data(stats: &SufficientStats, unit: usize, per_unit: usize) -> bool {
    stats.zeroth[unit * per_unit..(unit + 1) * per_unit].iter().any(|&n| n > 0.0)
}

#[allow(clippy::too_many_arguments)]
fn sample_objective(
    stats: &[SufficientStats],
    shape: &HyperShape,
    hyper_x: &[f64],
    languages: &[LanguageParams],
    language_x: &[Vec<f64>],
    layout: &ParamLayout,
    bias_map: &[usize],
    opts: &ElboOptions,
) -> Result<SampleResult> {
    let rows = shape.rows;
    let cols = shape.cols;
    let per_unit = layout.components_per_unit();
    let mut data = Vec::with_capacity(languages.len());
    let mut hyper_grad = if opts.train_hyper { vec![0.0; shape.len()] } else { Vec::new() };
    let mut language_grads = Vec::with_capacity(languages.len());
    for (l, lang) in languages.iter().enumerate() {
        let x = &language_x[l];
        let alpha = lang.alpha(x);
        let (w, b) = compose_subspace(shape, hyper_x, alpha)?;
        let mut g_w = vec![0.0; rows * cols];
        let mut g_b = vec![0.0; shape.bias_len];
        let mut g_x = vec![0.0; x.len()];
        let mut g_eta = vec![0.0; rows];
        let mut value = 0.0;
        for u in 0..lang.n_units {
            if !unit_has_data(&stats[l], u, per_unit) {
                continue;
            }
            let e = lang.unit(x, u);
            let eta = unit_eta(&w, &b, e, bias_map);
            let params = GaussianParams::from_eta(&eta, layout, opts.strict)?;
            g_eta.iter_mut().for_each(|g| *g = 0.0);
            value += unit_data_term(&stats[l], u, &params, &eta, layout, Some(&mut g_eta))?;
            let g_e = &mut g_x[lang.unit_offset(u)..][..cols];
            for (p, &gp) in g_eta.iter().enumerate() {
                if gp == 0.0 {
                    continue;
                }
                let w_row = &w[p * cols..(p + 1) * cols];
                let gw_row = &mut g_w[p * cols..(p + 1) * cols];
                for c in 0..cols {
                    gw_row[c] += gp * e[c];
                    g_e[c] += gp * w_row[c];
                }
                g_b[bias_map[p]] += gp;
            }
        }
        for k in 0..alpha.len() {
            g_x[k] = crate::math::dot(shape.basis(hyper_x, k + 1), &g_w)
                + crate::math::dot(shape.bias(hyper_x, k + 1), &g_b);
        }
        if opts.train_hyper {
            for k in 0..shape.n_bases() {
                let scale = if k == 0 { 1.0 } else { alpha[k - 1] };
                let bo = shape.basis_offset(k);
                for (dst, src) in hyper_grad[bo..bo + g_w.len()].iter_mut().zip(&g_w) {
                    *dst += scale * src;
                }
                let mo = shape.bias_offset(k);
                for (dst, src) in hyper_grad[mo..mo + g_b.len()].iter_mut().zip(&g_b) {
                    *dst += scale * src;
                }
            }
        }
        data.push(value);
        language_grads.push(g_x);
    }
    Ok(SampleResult {
        data,
        hyper_grad,
        language_grads,
    })
}

/// Adds the reparameterisation chain rule for one sample into the mean and
/// log-variance gradients.
fn chain_sample(g_x: &[f64], eps: &[f64], log_var: &[f64], inv_s: f64, gm: &mut [f64], glv: &mut [f64]) {
    for i in 0..g_x.len() {
        gm[i] += g_x[i] * inv_s;
        glv[i] += g_x[i] * 0.5 * (0.5 * log_var[i]).exp() * eps[i] * inv_s;
    }
}

/// Empirical objective `(1/S) Σ_s Σ_c T_c(θ_s) − KL(θ) − KL(M)` for fixed
/// statistics and noise, with its exact gradient.
pub fn empirical_elbo(
    stats: &[SufficientStats],
    hyper: &HyperSubspace,
    languages: &[LanguageParams],
    prior: &PriorConfig,
    noise: &NoiseBank,
    layout: &ParamLayout,
    opts: &ElboOptions,
) -> Result<(ElboTerms, ElboGradient)> {
    check_inputs(stats, hyper, languages, noise, layout)?;
    let shape = hyper.shape;
    let bias_map = layout.bias_map();
    let n_samples = noise.n_samples();
    let inv_s = 1.0 / n_samples as f64;

    let per_sample: Vec<Result<SampleResult>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let hyper_x = hyper.q.sample(&noise.hyper[s])?;
            let language_x = languages
                .iter()
                .enumerate()
                .map(|(l, lang)| lang.q.sample(&noise.languages[l][s]))
                .collect::<Result<Vec<_>>>()?;
            sample_objective(stats, &shape, &hyper_x, languages, &language_x, layout, &bias_map, opts)
        })
        .collect();

    let mut data = vec![0.0; languages.len()];
    let (mut hyper_mean, mut hyper_log_var) = if opts.train_hyper {
        (vec![0.0; hyper.q.len()], vec![0.0; hyper.q.len()])
    } else {
        (Vec::new(), Vec::new())
    };
    let mut language_mean: Vec<Vec<f64>> = languages.iter().map(|l| vec![0.0; l.q.len()]).collect();
    let mut language_log_var = language_mean.clone();
    for (s, res) in per_sample.into_iter().enumerate() {
        let res = res?;
        for (acc, v) in data.iter_mut().zip(&res.data) {
            *acc += v * inv_s;
        }
        if opts.train_hyper {
            chain_sample(
                &res.hyper_grad,
                &noise.hyper[s],
                &hyper.q.log_var,
                inv_s,
                &mut hyper_mean,
                &mut hyper_log_var,
            );
        }
        for (l, g_x) in res.language_grads.iter().enumerate() {
            chain_sample(
                g_x,
                &noise.languages[l][s],
                &languages[l].q.log_var,
                inv_s,
                &mut language_mean[l],
                &mut language_log_var[l],
            );
        }
    }

    let mut kl_theta = 0.0;
    for (l, lang) in languages.iter().enumerate() {
        kl_theta += lang.kl(prior)?;
        let k = lang.language_dim;
        let (gm, glv) = (&mut language_mean[l], &mut language_log_var[l]);
        neg_kl_grad(&lang.q.mean[..k], &lang.q.log_var[..k], prior.sigma_alpha, &mut gm[..k], &mut glv[..k]);
        neg_kl_grad(
            &lang.q.mean[k..],
            &lang.q.log_var[k..],
            prior.sigma_embedding,
            &mut gm[k..],
            &mut glv[k..],
        );
    }
    let kl_hyper = hyper.kl(prior)?;
    if opts.train_hyper {
        for k in 0..shape.n_bases() {
            for (off, len, sigma) in [
                (shape.basis_offset(k), shape.basis_len(), prior.sigma_basis),
                (shape.bias_offset(k), shape.bias_len, prior.sigma_bias),
            ] {
                let r = off..off + len;
                neg_kl_grad(
                    &hyper.q.mean[r.clone()],
                    &hyper.q.log_var[r.clone()],
                    sigma,
                    &mut hyper_mean[r.clone()],
                    &mut hyper_log_var[r],
                );
            }
        }
    }
    let terms = ElboTerms {
        data,
        kl_theta,
        kl_hyper,
    };
    if !terms.total().is_finite() {
        return Err(Error::NonFinite("empirical objective".into()));
    }
    Ok((
        terms,
        ElboGradient {
            hyper_mean,
            hyper_log_var,
            language_mean,
            language_log_var,
        },
    ))
}

/// Unit parameters of one language under every sample of `noise`:
/// `result[s][u]`.
pub fn sample_unit_params(
    hyper: &HyperSubspace,
    language: &LanguageParams,
    hyper_noise: &[Vec<f64>],
    language_noise: &[Vec<f64>],
    layout: &ParamLayout,
    strict: bool,
) -> Result<Vec<Vec<GaussianParams>>> {
    let bias_map = layout.bias_map();
    hyper_noise
        .iter()
        .zip(language_noise)
        .map(|(eh, el)| {
            let hx = hyper.q.sample(eh)?;
            let lx = language.q.sample(el)?;
            let (w, b) = compose_subspace(&hyper.shape, &hx, language.alpha(&lx))?;
            (0..language.n_units)
                .map(|u| GaussianParams::from_eta(&unit_eta(&w, &b, language.unit(&lx, u), &bias_map), layout, strict))
                .collect()
        })
        .collect()
}
