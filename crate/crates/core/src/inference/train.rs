//! Variational EM drivers for the two training stages.
//!
//! Each EM iteration draws one noise bank, runs the E-step with the unit
//! parameters it induces, then maximises the empirical objective over the same
//! draws. The M-step keeps the best iterate it visits, so with common random
//! numbers the reported bound never decreases.

use std::collections::{BTreeSet, HashMap};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{HshmmModel, LanguageModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{
    build_alignment_graph, build_phone_loop_graph, DecodingGraph, GaussianParams, ParamLayout, PhoneLoop,
    DEFAULT_COMPONENTS, DEFAULT_CONCENTRATION, DEFAULT_TRUNCATION,
};
use crate::subspace::{
    init_hyper_subspace, init_language, HyperShape, InitConfig, LanguageParams, PriorConfig,
    DEFAULT_EMBEDDING_DIM, DEFAULT_LANGUAGE_DIM,
};

use super::adam::{adam_step, AdamState, DEFAULT_LEARNING_RATE};
use super::elbo::{empirical_elbo, sample_unit_params, ElboOptions, NoiseBank};
use super::emission::{expected_log_likelihoods, EmissionEstimator};
use super::forward_backward::forward_backward;
use super::stats::{accumulate_stats, component_responsibilities, SufficientStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub n_samples: usize,
    pub learning_rate: f64,
    pub em_iterations: usize,
    pub gradient_steps: usize,
    pub seed: u64,
    pub strict: bool,
    /// Reuse the same posterior noise in every EM iteration.
    pub common_random_numbers: bool,
    pub estimator: EmissionEstimator,
    pub n_components: usize,
    pub embedding_dim: usize,
    pub language_dim: usize,
    pub truncation: usize,
    pub concentration: f64,
    pub prior: PriorConfig,
    pub init: InitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 5,
            learning_rate: DEFAULT_LEARNING_RATE,
            em_iterations: 30,
            gradient_steps: 1000,
            seed: 0,
            strict: false,
            common_random_numbers: true,
            estimator: EmissionEstimator::default(),
            n_components: DEFAULT_COMPONENTS,
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            language_dim: DEFAULT_LANGUAGE_DIM,
            truncation: DEFAULT_TRUNCATION,
            concentration: DEFAULT_CONCENTRATION,
            prior: PriorConfig::default(),
            init: InitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_samples", self.n_samples),
            ("n_components", self.n_components),
            ("embedding_dim", self.embedding_dim),
            ("language_dim", self.language_dim),
            ("truncation", self.truncation),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidInput(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::InvalidInput("concentration must be positive".into()));
        }
        let p = &self.prior;
        if [p.sigma_alpha, p.sigma_basis, p.sigma_bias, p.sigma_embedding]
            .iter()
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::InvalidInput("prior standard deviations must be positive".into()));
        }
        Ok(())
    }

    fn noise_key(&self, iteration: usize) -> u64 {
        if self.common_random_numbers {
            0
        } else {
            iteration as u64 + 1
        }
    }
}

/// Bound and its parts at the start of an EM iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboReport {
    pub iteration: usize,
    pub total: f64,
    /// Forward-backward log marginal per trained language.
    pub log_likelihood: Vec<f64>,
    pub kl_theta: f64,
    pub kl_hyper: f64,
    pub kl_sticks: f64,
    pub n_frames: usize,
    pub skipped_utterances: usize,
    pub wall_time_s: f64,
}

impl ElboReport {
    pub fn parts_sum(&self) -> f64 {
        self.log_likelihood.iter().sum::<f64>() - self.kl_theta - self.kl_hyper - self.kl_sticks
    }
}

/// Transcribed utterances of one source language.
#[derive(Debug, Clone)]
pub struct SourceCorpus {
    pub name: String,
    pub utterances: Vec<(FeatureMatrix, Vec<String>)>,
}

impl SourceCorpus {
    /// Sorted token inventory; a token's unit index is its rank.
    pub fn inventory(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.utterances.iter().flat_map(|(_, t)| t).collect();
        set.into_iter().cloned().collect()
    }
}

struct EStep {
    stats: SufficientStats,
    log_likelihood: f64,
    n_frames: usize,
    skipped: usize,
}

fn e_step(
    utterances: &[(&FeatureMatrix, DecodingGraph)],
    samples: &[Vec<GaussianParams>],
    layout: &ParamLayout,
    n_units: usize,
    estimator: EmissionEstimator,
) -> Result<EStep> {
    let n_comp = n_units * layout.components_per_unit();
    type Utt = (SufficientStats, f64, usize);
    let per_utt: Vec<Result<Option<Utt>>> = utterances
        .par_iter()
        .map(|(feats, graph)| {
            let scores = expected_log_likelihoods(samples, feats, estimator)?;
            let post = match forward_backward(graph, &scores.llh) {
                Ok(p) => p,
                Err(Error::InfeasibleAlignment) => {
                    warn!("skipping {}: infeasible alignment", feats.utterance_id);
                    return Ok(None);
                }
                Err(e) => return Err(e),
            };
            let columns = post.emission_posteriors(graph);
            let resp = component_responsibilities(&columns, &scores);
            let mut stats = accumulate_stats(&resp, feats)?;
            if stats.n_components() != n_comp {
                return Err(Error::DimMismatch {
                    expected: n_comp,
                    got: stats.n_components(),
                    context: "utterance statistics".into(),
                });
            }
            stats.unit_counts = post.unit_entries;
            stats.unit_counts.resize(n_units, 0.0);
            Ok(Some((stats, post.log_marginal, feats.n_frames())))
        })
        .collect();
    let mut total = SufficientStats::zeros(n_comp, layout.dim, n_units);
    let mut log_likelihood = 0.0;
    let mut n_frames = 0;
    let mut skipped = 0;
    for r in per_utt {
        match r? {
            Some((s, ll, n)) => {
                total.merge(&s)?;
                log_likelihood += ll;
                n_frames += n;
            }
            None => skipped += 1,
        }
    }
    Ok(EStep {
        stats: total,
        log_likelihood,
        n_frames,
        skipped,
    })
}

/// Trainable posteriors flattened as `[hyper mean, hyper log_var]?` followed by
/// `[mean, log_var]` of each trained language.
fn pack(model: &HshmmModel, train_hyper: bool, langs: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    if train_hyper {
        out.extend_from_slice(&model.hyper.q.mean);
        out.extend_from_slice(&model.hyper.q.log_var);
    }
    for &l in langs {
        out.extend_from_slice(&model.languages[l].params.q.mean);
        out.extend_from_slice(&model.languages[l].params.q.log_var);
    }
    out
}

fn unpack(flat: &[f64], model: &mut HshmmModel, train_hyper: bool, langs: &[usize]) {
    let mut pos = 0;
    let mut take = |dst: &mut Vec<f64>| {
        let n = dst.len();
        dst.copy_from_slice(&flat[pos..pos + n]);
        pos += n;
    };
    if train_hyper {
        take(&mut model.hyper.q.mean);
        take(&mut model.hyper.q.log_var);
    }
    for &l in langs {
        take(&mut model.languages[l].params.q.mean);
        take(&mut model.languages[l].params.q.log_var);
    }
}

/// Runs `gradient_steps` Adam steps on the empirical objective and keeps the
/// best parameters seen, including the starting point.
fn m_step(
    model: &mut HshmmModel,
    stats: &[SufficientStats],
    langs: &[usize],
    noise: &NoiseBank,
    train_hyper: bool,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<f64> {
    let opts = ElboOptions {
        strict: cfg.strict,
        train_hyper,
    };
    let evaluate = |m: &HshmmModel| {
        let params: Vec<LanguageParams> = langs.iter().map(|&l| m.languages[l].params.clone()).collect();
        empirical_elbo(stats, &m.hyper, &params, &m.prior, noise, &m.layout, &opts)
    };
    let mut flat = pack(model, train_hyper, langs);
    let mut best = (f64::NEG_INFINITY, flat.clone());
    for _ in 0..cfg.gradient_steps {
        let (terms, grad) = evaluate(model)?;
        let value = terms.total();
        if value > best.0 {
            best = (value, flat.clone());
        }
        let mut g = Vec::with_capacity(flat.len());
        g.extend_from_slice(&grad.hyper_mean);
        g.extend_from_slice(&grad.hyper_log_var);
        for (m, v) in grad.language_mean.iter().zip(&grad.language_log_var) {
            g.extend_from_slice(m);
            g.extend_from_slice(v);
        }
        adam_step(&mut flat, &g, state, cfg.learning_rate);
        unpack(&flat, model, train_hyper, langs);
    }
    let value = evaluate(model)?.0.total();
    if value > best.0 {
        best = (value, flat);
    }
    unpack(&best.1, model, train_hyper, langs);
    Ok(best.0)
}

fn language_noise(model: &HshmmModel, cfg: &TrainConfig, iteration: usize, langs: &[usize]) -> NoiseBank {
    let spec: Vec<(u64, usize)> = langs
        .iter()
        .map(|&l| (l as u64, model.languages[l].params.q.len()))
        .collect();
    NoiseBank::draw(cfg.seed, cfg.noise_key(iteration), cfg.n_samples, model.hyper.q.len(), &spec)
}

/// Fresh model for the source corpora, before any EM iteration.
pub fn init_supervised(corpora: &[SourceCorpus], dim: usize, cfg: &TrainConfig) -> Result<HshmmModel> {
    cfg.validate()?;
    if corpora.is_empty() || corpora.iter().all(|c| c.utterances.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    let layout = ParamLayout::new(dim, cfg.n_components)?;
    let shape = HyperShape::new(&layout, cfg.embedding_dim, cfg.language_dim)?;
    let hyper = init_hyper_subspace(cfg.seed, shape, &cfg.init);
    let languages = corpora
        .iter()
        .enumerate()
        .map(|(l, c)| {
            let unit_names = c.inventory();
            LanguageModel {
                name: c.name.clone(),
                params: init_language(cfg.seed, l as u64, &shape, unit_names.len().max(1), &cfg.init),
                unit_names: if unit_names.is_empty() { vec!["<none>".into()] } else { unit_names },
                phone_loop: None,
            }
        })
        .collect();
    Ok(HshmmModel {
        layout,
        prior: cfg.prior,
        hyper,
        languages,
        iteration: 0,
    })
}

fn check_dims<'a>(features: impl Iterator<Item = &'a FeatureMatrix>, layout: &ParamLayout) -> Result<()> {
    for f in features {
        if f.dim() != layout.dim {
            return Err(Error::DimMismatch {
                expected: layout.dim,
                got: f.dim(),
                context: format!("features of {}", f.utterance_id),
            });
        }
    }
    Ok(())
}

/// Continues stage-one training of `model` for `iterations` EM iterations.
///
/// Returns one report per iteration plus a final report for the trained model.
pub fn run_supervised(
    model: &mut HshmmModel,
    corpora: &[SourceCorpus],
    cfg: &TrainConfig,
    iterations: usize,
    mut on_report: impl FnMut(&ElboReport),
) -> Result<Vec<ElboReport>> {
    cfg.validate()?;
    if corpora.len() != model.languages.len() {
        return Err(Error::InvalidInput("corpus count differs from model languages".into()));
    }
    check_dims(corpora.iter().flat_map(|c| c.utterances.iter().map(|(f, _)| f)), &model.layout)?;
    let mut graphs: Vec<Vec<(&FeatureMatrix, DecodingGraph)>> = Vec::with_capacity(corpora.len());
    for (c, lang) in corpora.iter().zip(&model.languages) {
        let map: HashMap<String, usize> =
            lang.unit_names.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut gs = Vec::with_capacity(c.utterances.len());
        for (f, t) in &c.utterances {
            match build_alignment_graph(t, &map, lang.params.n_units, &model.layout) {
                Ok(g) => gs.push((f, g)),
                Err(e @ Error::UnmappedToken(_)) => return Err(e),
                Err(e) => warn!("skipping {}: {e}", f.utterance_id),
            }
        }
        graphs.push(gs);
    }
    if graphs.iter().all(Vec::is_empty) {
        return Err(Error::EmptyCorpus);
    }
    let langs: Vec<usize> = (0..model.languages.len()).collect();
    let mut adam = AdamState::new(pack(model, true, &langs).len());
    let mut reports = Vec::with_capacity(iterations + 1);
    for step in 0..=iterations {
        let start = Instant::now();
        let it = model.iteration;
        let noise = language_noise(model, cfg, it, &langs);
        let mut all_stats = Vec::with_capacity(langs.len());
        let mut lls = Vec::with_capacity(langs.len());
        let (mut n_frames, mut skipped) = (0, 0);
        for &l in &langs {
            let lang = &model.languages[l];
            let samples = sample_unit_params(
                &model.hyper,
                &lang.params,
                &noise.hyper,
                &noise.languages[l],
                &model.layout,
                cfg.strict,
            )?;
            let e = e_step(&graphs[l], &samples, &model.layout, lang.params.n_units, cfg.estimator)?;
            lls.push(e.log_likelihood);
            n_frames += e.n_frames;
            skipped += e.skipped;
            all_stats.push(e.stats);
        }
        let kl_theta = model.languages.iter().map(|l| l.params.kl(&model.prior)).sum::<Result<f64>>()?;
        let kl_hyper = model.hyper.kl(&model.prior)?;
        let mut report = ElboReport {
            iteration: it,
            total: 0.0,
            log_likelihood: lls,
            kl_theta,
            kl_hyper,
            kl_sticks: 0.0,
            n_frames,
            skipped_utterances: skipped,
            wall_time_s: 0.0,
        };
        report.total = report.parts_sum();
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!("bound at iteration {it}")));
        }
        if step < iterations {
            m_step(model, &all_stats, &langs, &noise, true, &mut adam, cfg)?;
            model.iteration += 1;
        }
        report.wall_time_s = start.elapsed().as_secs_f64();
        info!("supervised iteration {it}: elbo {:.6}", report.total);
        on_report(&report);
        reports.push(report);
    }
    Ok(reports)
}

pub fn train_supervised(
    corpora: &[SourceCorpus],
    cfg: &TrainConfig,
    on_report: impl FnMut(&ElboReport),
) -> Result<(HshmmModel, Vec<ElboReport>)> {
    let dim = corpora
        .iter()
        .flat_map(|c| c.utterances.first())
        .map(|(f, _)| f.dim())
        .next()
        .ok_or(Error::EmptyCorpus)?;
    let mut model = init_supervised(corpora, dim, cfg)?;
    let reports = run_supervised(&mut model, corpora, cfg, cfg.em_iterations, on_report)?;
    Ok((model, reports))
}

/// Adds an untranscribed target language with `cfg.truncation` units to a
/// stage-one model and resets the iteration counter.
pub fn add_target_language(model: &HshmmModel, name: &str, cfg: &TrainConfig) -> Result<(HshmmModel, usize)> {
    cfg.validate()?;
    if model.language_index(name).is_some() {
        return Err(Error::InvalidInput(format!("language {name} already in the model")));
    }
    let mut out = model.clone();
    let index = out.languages.len();
    let shape = out.shape();
    out.languages.push(LanguageModel {
        name: name.to_string(),
        unit_names: (0..cfg.truncation).map(|u| format!("au{u}")).collect(),
        params: init_language(cfg.seed, index as u64, &shape, cfg.truncation, &cfg.init),
        phone_loop: Some(PhoneLoop::new(cfg.truncation, cfg.concentration)?),
    });
    out.iteration = 0;
    Ok((out, index))
}

/// Continues stage-two training of language `target` with the hyper-subspace frozen.
pub fn run_unsupervised(
    model: &mut HshmmModel,
    target: usize,
    features: &[FeatureMatrix],
    cfg: &TrainConfig,
    iterations: usize,
    mut on_report: impl FnMut(&ElboReport),
) -> Result<Vec<ElboReport>> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_dims(features.iter(), &model.layout)?;
    if model.languages[target].phone_loop.is_none() {
        return Err(Error::InvalidInput("target language has no phone loop".into()));
    }
    let langs = [target];
    let mut adam = AdamState::new(pack(model, false, &langs).len());
    let mut reports = Vec::with_capacity(iterations + 1);
    for step in 0..=iterations {
        let start = Instant::now();
        let it = model.iteration;
        let noise = language_noise(model, cfg, it, &langs);
        let lang = &model.languages[target];
        let sticks = lang.phone_loop.as_ref().expect("checked above");
        let graph = build_phone_loop_graph(&model.layout, &sticks.expected_log_weights())?;
        let utts: Vec<(&FeatureMatrix, DecodingGraph)> = features.iter().map(|f| (f, graph.clone())).collect();
        let samples = sample_unit_params(
            &model.hyper,
            &lang.params,
            &noise.hyper,
            &noise.languages[0],
            &model.layout,
            cfg.strict,
        )?;
        let e = e_step(&utts, &samples, &model.layout, lang.params.n_units, cfg.estimator)?;
        let mut report = ElboReport {
            iteration: it,
            total: 0.0,
            log_likelihood: vec![e.log_likelihood],
            kl_theta: lang.params.kl(&model.prior)?,
            kl_hyper: model.hyper.kl(&model.prior)?,
            kl_sticks: sticks.kl_divergence(),
            n_frames: e.n_frames,
            skipped_utterances: e.skipped,
            wall_time_s: 0.0,
        };
        report.total = report.parts_sum();
        if !report.total.is_finite() {
            return Err(Error::NonFinite(format!("bound at iteration {it}")));
        }
        if step < iterations {
            let counts = e.stats.unit_counts.clone();
            m_step(model, std::slice::from_ref(&e.stats), &langs, &noise, false, &mut adam, cfg)?;
            let lang = &mut model.languages[target];
            lang.phone_loop = Some(lang.phone_loop.as_ref().expect("checked above").update(&counts)?);
            model.iteration += 1;
        }
        report.wall_time_s = start.elapsed().as_secs_f64();
        info!("unsupervised iteration {it}: elbo {:.6}", report.total);
        on_report(&report);
        reports.push(report);
    }
    Ok(reports)
}

/// Stage two: discovers units on `features` with the hyper-subspace of `model` frozen.
pub fn train_unsupervised(
    model: &HshmmModel,
    target_name: &str,
    features: &[FeatureMatrix],
    cfg: &TrainConfig,
    on_report: impl FnMut(&ElboReport),
) -> Result<(HshmmModel, Vec<ElboReport>)> {
    let (mut out, target) = add_target_language(model, target_name, cfg)?;
    let reports = run_unsupervised(&mut out, target, features, cfg, cfg.em_iterations, on_report)?;
    Ok((out, reports))
}
