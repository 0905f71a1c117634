mod commands;
mod config;
mod data;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use conssent_core::Task;

use crate::config::RunConfig;

/// Bad flags, configuration or inputs. Exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A numerical check that did not hold. Exit code 3.
#[derive(Debug)]
pub struct NumericFailure(pub String);

impl fmt::Display for NumericFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericFailure {}

#[derive(Parser, Debug)]
#[command(
    name = "conssent",
    version,
    about = "Sentence encoders trained on consistency tasks"
)]
struct Cli {
    /// Worker threads for encoding and probing (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Single-threaded execution.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "CONSSENT_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Training corpus, one sentence per line (default: toy grammar).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    probe_corpus: Option<PathBuf>,
    /// D, P, I, R, C, N or MT.
    #[arg(long)]
    task: Option<Task>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    toy_sentences: Option<usize>,
    /// Also run the MLP probes.
    #[arg(long)]
    mlp: bool,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let t = &mut cfg.train;
        if let Some(v) = self.seed {
            t.seed = v;
        }
        if let Some(v) = self.task {
            t.task = v;
        }
        if let Some(v) = self.k {
            t.k = v;
        }
        if let Some(v) = self.hidden_dim {
            t.hidden_dim = v;
        }
        if let Some(v) = self.embed_dim {
            t.embed_dim = v;
        }
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = &self.corpus {
            cfg.corpus = Some(v.clone());
        }
        if let Some(v) = &self.probe_corpus {
            cfg.probe_corpus = Some(v.clone());
        }
        if let Some(v) = self.toy_sentences {
            cfg.toy_sentences = v;
        }
        cfg.mlp |= self.mlp;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the generated training and validation examples.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Also write the probe datasets.
        #[arg(long)]
        probes: bool,
    },
    /// Train an encoder and write its checkpoint and metrics.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate checkpoints (or an untrained encoder) on the probe tasks.
    Probe {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to probe; repeat to concatenate encoders.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Vocabulary file (default: vocab.txt beside the first checkpoint).
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Also probe a randomly initialised encoder of the same shape.
        #[arg(long)]
        untrained: bool,
    },
    /// Train and probe one model per k.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Inclusive range such as 2..6, or a single value.
        #[arg(long = "k-range", default_value = "2..6")]
        k_range: String,
    },
    /// Weighted average of probe classifiers over several encoders.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on random models.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        models: usize,
        #[arg(long, env = "CONSSENT_SEED", default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    let threads = if cli.deterministic {
        Some(1)
    } else {
        cli.threads
    };
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    match cli.command {
        Command::Gen { common, probes } => commands::gen(&common.resolve()?, &common.out, probes),
        Command::Train { common } => commands::train(&common.resolve()?, &common.out),
        Command::Probe {
            common,
            checkpoint,
            vocab,
            untrained,
        } => commands::probe(
            &common.resolve()?,
            &checkpoint,
            vocab.as_deref(),
            untrained,
            &common.out,
        )
        .map(drop),
        Command::Sweep {
            mut common,
            k_range,
        } => {
            let ks = commands::parse_k_range(&k_range)?;
            common.k = Some(ks[0]);
            commands::sweep(&common.resolve()?, &ks, &common.out)
        }
        Command::Ensemble {
            common,
            manifest,
            vocab,
        } => commands::ensemble(&common.resolve()?, &manifest, vocab.as_deref(), &common.out)
            .map(drop),
        Command::Gradcheck { models, seed } => commands::gradcheck(models, seed),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    if err.downcast_ref::<NumericFailure>().is_some() {
        return 3;
    }
    match err.downcast_ref::<conssent_core::Error>() {
        Some(conssent_core::Error::Config(_)) => 1,
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
