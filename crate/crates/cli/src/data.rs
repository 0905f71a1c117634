use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use conssent_core::corpus::synthetic::ToyGrammar;
use conssent_core::corpus::{split_corpus, tokenize};
use conssent_core::probes::ProbeTask;
use conssent_core::{Corpus, TokenSequence, Vocabulary};

use crate::config::RunConfig;

pub struct Data {
    pub corpus: Corpus,
    pub train: Vec<TokenSequence>,
    pub valid: Vec<TokenSequence>,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Training corpus and its train/validation split.
pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let lines = match &cfg.corpus {
        Some(path) => read_lines(path)?,
        None => ToyGrammar::default().generate(cfg.toy_sentences, cfg.train.seed),
    };
    let corpus = Corpus::from_lines(&lines, cfg.min_freq, cfg.max_vocab)?;
    let (train, valid) = split_corpus(&corpus.sentences, cfg.valid_fraction, cfg.train.seed)?;
    log::info!(
        "corpus: {} sentences ({} train / {} valid), vocabulary {}",
        corpus.len(),
        train.len(),
        valid.len(),
        corpus.vocab.len()
    );
    Ok(Data {
        corpus,
        train,
        valid,
    })
}

/// Probe sentences encoded with `vocab`. Without a probe corpus these are
/// the toy sentences that follow the training sample in generation order.
pub fn probe_sentences(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<TokenSequence>> {
    let lines = match &cfg.probe_corpus {
        Some(path) => read_lines(path)?,
        None => {
            let start = if cfg.corpus.is_some() {
                0
            } else {
                cfg.toy_sentences
            };
            ToyGrammar::default()
                .generate(start + cfg.probe_sentences, cfg.train.seed)
                .split_off(start)
        }
    };
    let mut out = Vec::with_capacity(lines.len());
    for line in &lines {
        if let Ok(tokens) = tokenize(line) {
            out.push(vocab.encode(&tokens)?);
        }
    }
    Ok(out)
}

pub fn probe_tasks(cfg: &RunConfig, vocab: &Vocabulary) -> Result<Vec<ProbeTask>> {
    let sentences = probe_sentences(cfg, vocab)?;
    Ok(cfg.probes.build(&sentences, vocab, cfg.train.seed)?)
}
