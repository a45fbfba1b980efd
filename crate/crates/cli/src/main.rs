use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use hshmm::synthgen::GeneratorSpec;
use hshmm_cli::{
    cmd_decode, cmd_discover, cmd_eval, cmd_export_embeddings, cmd_synth, cmd_train_hyper, default_frame_shift_ms,
    exit_code, parse_source, RunConfig, EXIT_USAGE, THREADS_ENV,
};

#[derive(Parser)]
#[command(name = "hshmm", version, about = "Acoustic unit discovery with a hierarchical subspace HMM")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set seed=3` or `--set prior.sigma_alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (overrides the config and the environment).
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(t) = self.threads {
            cfg.threads = t;
        }
        if let Some(n) = cfg.resolved_threads()? {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .context("configuring the thread pool")?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the hyper-subspace on transcribed source languages.
    TrainHyper {
        #[command(flatten)]
        config: ConfigArgs,
        /// Source language as NAME=MANIFEST; repeat per language.
        #[arg(long = "source", required = true, value_name = "NAME=MANIFEST")]
        sources: Vec<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Discover units of an untranscribed language with the hyper-subspace frozen.
    Discover {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "target")]
        language: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Decode utterances into unit segments.
    Decode {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Language whose phone loop is used; defaults to the last one.
        #[arg(long)]
        language: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Score hypothesis segments against reference alignments.
    Eval {
        /// Alignment file, or a manifest (.tsv) with an alignment column.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long, default_value_t = hshmm::eval::DEFAULT_TOLERANCE_MS)]
        tolerance_ms: f64,
        #[arg(long, default_value_t = default_frame_shift_ms())]
        frame_shift_ms: f64,
    },
    /// Generate a synthetic corpus from a known model.
    Synth {
        /// JSON generator spec; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Write language embeddings as TSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_spec(path: Option<&Path>) -> anyhow::Result<GeneratorSpec> {
    let Some(path) = path else {
        return Ok(GeneratorSpec::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading spec {}", path.display()))?;
    let spec: GeneratorSpec =
        serde_json::from_str(&text).map_err(|e| hshmm::Error::InvalidInput(format!("{}: {e}", path.display())))?;
    Ok(spec)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::TrainHyper {
            config,
            sources,
            out_dir,
        } => {
            let cfg = config.resolve()?;
            let sources = sources.iter().map(|s| parse_source(s)).collect::<anyhow::Result<Vec<_>>>()?;
            cmd_train_hyper(&cfg, &sources, &out_dir)?;
        }
        Command::Discover {
            config,
            checkpoint,
            manifest,
            language,
            out_dir,
        } => {
            let cfg = config.resolve()?;
            let (_, summary) = cmd_discover(&cfg, &language, &manifest, &checkpoint, &out_dir)?;
            println!("{}", serde_json::to_string(&summary)?);
        }
        Command::Decode {
            config,
            checkpoint,
            manifest,
            language,
            out_dir,
        } => {
            let cfg = config.resolve()?;
            cmd_decode(&cfg, &checkpoint, &manifest, language.as_deref(), &out_dir)?;
        }
        Command::Eval {
            reference,
            hyp,
            tolerance_ms,
            frame_shift_ms,
        } => {
            let m = cmd_eval(&reference, &hyp, tolerance_ms, frame_shift_ms)?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Synth { spec, seed, out_dir } => {
            let mut spec = load_spec(spec.as_deref())?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            cmd_synth(&spec, &out_dir)?;
        }
        Command::ExportEmbeddings { checkpoint, out } => {
            let tsv = cmd_export_embeddings(&checkpoint, out.as_deref())?;
            if out.is_none() {
                print!("{tsv}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
