//! Command implementations behind the `hshmm` binary.
//!
//! Every command writes its artifacts under a run directory together with a
//! `config.json` echo of the effective [`RunConfig`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use log::info;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use hshmm::decode::{decode_corpus, DecodeConfig, UnitTranscription};
use hshmm::eval::{evaluate, Metrics, DEFAULT_TOLERANCE_MS};
use hshmm::features::{read_alignments, read_manifest, write_alignments, Alignments, DEFAULT_FRAME_SHIFT_MS};
use hshmm::inference::{
    add_target_language, run_unsupervised, train_supervised, ElboReport, EmissionEstimator, SourceCorpus,
    TrainConfig,
};
use hshmm::model::{DEFAULT_COMPONENTS, DEFAULT_CONCENTRATION, DEFAULT_TRUNCATION};
use hshmm::subspace::{InitConfig, PriorConfig, DEFAULT_EMBEDDING_DIM, DEFAULT_LANGUAGE_DIM};
use hshmm::synthgen::{generate_corpus, write_corpus, GeneratorSpec, SyntheticCorpus};
use hshmm::{read_checkpoint, write_checkpoint, HshmmModel};

pub const THREADS_ENV: &str = "HSHMM_THREADS";
pub const CONFIG_FILE: &str = "config.json";
pub const MODEL_FILE: &str = "model.hshm";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub embedding_dim: usize,
    pub language_dim: usize,
    pub truncation: usize,
    pub n_components: usize,
    pub n_samples: usize,
    pub learning_rate: f64,
    pub supervised_iterations: usize,
    pub unsupervised_iterations: usize,
    pub gradient_steps: usize,
    pub seed: u64,
    pub decode_seed: u64,
    pub strict: bool,
    pub common_random_numbers: bool,
    pub estimator: EmissionEstimator,
    pub concentration: f64,
    pub prior: PriorConfig,
    pub init: InitConfig,
    /// Worker threads; 0 defers to the environment, then to rayon's default.
    pub threads: usize,
    pub deterministic: bool,
    pub tolerance_ms: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            embedding_dim: DEFAULT_EMBEDDING_DIM,
            language_dim: DEFAULT_LANGUAGE_DIM,
            truncation: DEFAULT_TRUNCATION,
            n_components: DEFAULT_COMPONENTS,
            n_samples: t.n_samples,
            learning_rate: t.learning_rate,
            supervised_iterations: 30,
            unsupervised_iterations: 50,
            gradient_steps: t.gradient_steps,
            seed: 0,
            decode_seed: 0,
            strict: false,
            common_random_numbers: true,
            estimator: EmissionEstimator::default(),
            concentration: DEFAULT_CONCENTRATION,
            
            prior: PriorConfig::default(),
            init: InitConfig::default(),
            threads: 0,
            deterministic: true,
            tolerance_ms: DEFAULT_TOLERANCE_MS,
        }
    }
}

impl RunConfig {
    /// Reads a JSON config; keys left out take their defaults.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("malformed config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies `key=value` overrides. Dotted keys reach nested tables
    /// (`prior.sigma_alpha=0.5`); values parse as JSON, falling back to a string.
    pub fn with_overrides(&self, overrides: &[String]) -> anyhow::Result<Self> {
        let mut v = serde_json::to_value(self)?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .with_context(|| format!("override {o:?} is not key=value"))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut slot = &mut v;
            for part in key.split('.') {
                slot = slot
                    .get_mut(part)
                    .with_context(|| format!("unknown config key {key:?}"))?;
            }
            *slot = value;
        }
        let cfg: RunConfig = serde_json::from_value(v).context("invalid override")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.train_config(1).validate()?;
        if !(self.tolerance_ms >= 0.0 && self.tolerance_ms.is_finite()) {
            bail!(hshmm::Error::InvalidInput("tolerance_ms must be non-negative".into()));
        }
        Ok(())
    }

    pub fn train_config(&self, iterations: usize) -> TrainConfig {
        TrainConfig {
            n_samples: self.n_samples,
            learning_rate: self.learning_rate,
            em_iterations: iterations,
            gradient_steps: self.gradient_steps,
            seed: self.seed,
            strict: self.strict,
            common_random_numbers: self.common_random_numbers,
            estimator: self.estimator,
            n_components: self.n_components,
            embedding_dim: self.embedding_dim,
            language_dim: self.language_dim,
            truncation: self.truncation,
            concentration: self.concentration,
            prior: self.prior,
            init: self.init,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            seed: self.decode_seed,
            n_samples: self.n_samples,
            estimator: self.estimator,
            strict: self.strict,
        }
    }

    /// Thread count from the config, else from `HSHMM_THREADS`.
    pub fn resolved_threads(&self) -> anyhow::Result<Option<usize>> {
        if self.threads > 0 {
            return Ok(Some(self.threads));
        }
        match std::env::var(THREADS_ENV) {
            Ok(v) if !v.trim().is_empty() => {
                let n: usize = v
                    .trim()
                    .parse()
                    .map_err(|_| hshmm::Error::InvalidInput(format!("{THREADS_ENV}={v:?} is not a count")))?;
                Ok((n > 0).then_some(n))
            }
            _ => Ok(None),
        }
    }
}

/// Maps an error chain to the exit-code convention.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hshmm::Error>() {
            return match e.kind() {
                hshmm::ErrorKind::Data => EXIT_DATA,
                hshmm::ErrorKind::Numeric => EXIT_NUMERIC,
            };
        }
    }
    EXIT_DATA
}

fn create_run_dir(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(CONFIG_FILE);
    fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct LogLine<'a> {
    stage: &'a str,
    #[serde(flatten)]
    report: &'a ElboReport,
}

fn write_log(path: &Path, stage: &str, reports: &[ElboReport]) -> anyhow::Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    for report in reports {
        serde_json::to_writer(&mut f, &LogLine { stage, report })?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// Hex SHA-256 of the serialized hyper-subspace posterior.
pub fn hyper_sha256(model: &HshmmModel) -> String {
    hex::encode(Sha256::digest(model.hyper.to_bytes()))
}

/// `name=manifest` pairs name the source languages.
pub fn parse_source(arg: &str) -> anyhow::Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => bail!(hshmm::Error::InvalidInput(format!("source {arg:?} is not name=manifest"))),
    }
}

/// Stage one: trains the hyper-subspace on transcribed source languages.
pub fn cmd_train_hyper(cfg: &RunConfig, sources: &[(String, PathBuf)], out_dir: &Path) -> anyhow::Result<HshmmModel> {
    if sources.is_empty() {
        bail!(hshmm::Error::InvalidInput("no source languages given".into()));
    }
    let mut corpora = Vec::with_capacity(sources.len());
    for (name, path) in sources {
        let manifest = read_manifest(path)?;
        let features = manifest.load_features()?;
        let mut utterances = Vec::with_capacity(features.len());
        for (entry, f) in manifest.entries.iter().zip(features) {
            let tokens = entry.transcript.clone().ok_or_else(|| {
                hshmm::Error::InvalidInput(format!("utterance {} of {name} has no transcript", entry.utterance_id))
            })?;
            utterances.push((f, tokens));
        }
        corpora.push(SourceCorpus {
            name: name.clone(),
            utterances,
        });
    }
    create_run_dir(out_dir, cfg)?;
    let tcfg = cfg.train_config(cfg.supervised_iterations);
    let (model, reports) = train_supervised(&corpora, &tcfg, |_| {})?;
    write_checkpoint(&model, &out_dir.join(MODEL_FILE))?;
    write_log(&out_dir.join(TRAIN_LOG_FILE), "supervised", &reports)?;
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoverSummary {
    pub language: String,
    pub hyper_sha256_before: String,
    pub hyper_sha256_after: String,
    pub final_elbo: f64,
}

/// Stage two: discovers units of an untranscribed target language with the
/// hyper-subspace of `checkpoint` frozen.
pub fn cmd_discover(
    cfg: &RunConfig,
    language: &str,
    manifest: &Path,
    checkpoint: &Path,
    out_dir: &Path,
) -> anyhow::Result<(HshmmModel, DiscoverSummary)> {
    let base = read_checkpoint(checkpoint)?;
    let features = read_manifest(manifest)?.load_features()?;
    let before = hyper_sha256(&base);
    let tcfg = cfg.train_config(cfg.unsupervised_iterations);
    let (mut model, target) = add_target_language(&base, language, &tcfg)?;
    create_run_dir(out_dir, cfg)?;
    let reports = run_unsupervised(&mut model, target, &features, &tcfg, tcfg.em_iterations, |_| {})?;
    let after = hyper_sha256(&model);
    let summary = DiscoverSummary {
        language: language.to_string(),
        hyper_sha256_before: before,
        hyper_sha256_after: after,
        final_elbo: reports.last().map_or(f64::NAN, |r| r.total),
    };
    write_checkpoint(&model, &out_dir.join(MODEL_FILE))?;
    write_log(&out_dir.join(TRAIN_LOG_FILE), "unsupervised", &reports)?;
    fs::write(out_dir.join("discover.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    info!("hyper-subspace sha256 {} -> {}", summary.hyper_sha256_before, summary.hyper_sha256_after);
    Ok((model, summary))
}

pub const UNITS_FILE: &str = "units.txt";

/// Decodes a manifest with the phone loop of `language` (the last language of
/// the checkpoint when `None`) and writes `units.txt` in alignment format.
pub fn cmd_decode(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest: &Path,
    language: Option<&str>,
    out_dir: &Path,
) -> anyhow::Result<Vec<UnitTranscription>> {
    let model = read_checkpoint(checkpoint)?;
    let index = match language {
        Some(name) => model
            .language_index(name)
            .ok_or_else(|| hshmm::Error::InvalidInput(format!("no language {name:?} in checkpoint")))?,
        None => model
            .languages
            .len()
            .checked_sub(1)
            .ok_or_else(|| hshmm::Error::InvalidInput("checkpoint has no languages".into()))?,
    };
    let features = read_manifest(manifest)?.load_features()?;
    let units = decode_corpus(&model, index, &features, &cfg.decode_config())?;
    create_run_dir(out_dir, cfg)?;
    let alignments: Alignments = units.iter().map(|u| (u.utterance_id.clone(), u.to_segments())).collect();
    write_alignments(&alignments, &out_dir.join(UNITS_FILE))?;
    Ok(units)
}

/// Reference alignments from an alignment file or a manifest's alignment column.
pub fn load_reference(path: &Path) -> anyhow::Result<Alignments> {
    if path.extension().is_some_and(|e| e == "tsv") {
        Ok(read_manifest(path)?.alignments())
    } else {
        Ok(read_alignments(path)?)
    }
}

/// Frame NMI and boundary scores of `hyp` against `reference`.
pub fn cmd_eval(reference: &Path, hyp: &Path, tolerance_ms: f64, frame_shift_ms: f64) -> anyhow::Result<Metrics> {
    let r = load_reference(reference)?;
    let h = read_alignments(hyp)?;
    Ok(evaluate(&r, &h, frame_shift_ms, tolerance_ms)?)
}

pub fn default_frame_shift_ms() -> f64 {
    DEFAULT_FRAME_SHIFT_MS
}

/// Generates a synthetic corpus and writes it under `out_dir`.
pub fn cmd_synth(spec: &GeneratorSpec, out_dir: &Path) -> anyhow::Result<SyntheticCorpus> {
    let corpus = generate_corpus(spec)?;
    write_corpus(&corpus, out_dir)?;
    Ok(corpus)
}

/// One row per language: name, `K_h` means of `α`, then `K_h` log-variances.
pub fn embeddings_tsv(model: &HshmmModel) -> String {
    let mut out = String::new();
    for lang in &model.languages {
        let q = lang.params.alpha_posterior();
        let fields: Vec<String> = std::iter::once(lang.name.clone())
            .chain(q.mean.iter().chain(&q.log_var).map(|v| v.to_string()))
            .collect();
        out.push_str(&fields.join("\t"));
        out.push('\n');
    }
    out
}

pub fn cmd_export_embeddings(checkpoint: &Path, out: Option<&Path>) -> anyhow::Result<String> {
    let tsv = embeddings_tsv(&read_checkpoint(checkpoint)?);
    if let Some(path) = out {
        fs::write(path, &tsv).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(tsv)
}
