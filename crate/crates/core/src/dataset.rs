//! Generated datasets as tab-separated text.
//!
//! Single-sequence records: `label  kind  k  source_index  tokens`.
//! Pair records add a `part` column before the tokens; each candidate set is
//! one `anchor` line followed by its `cand` lines, the true continuation
//! labelled consistent. Probe records: `split  probe  0  source_index  tokens
//! class`. Tokens are space-joined words.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::corpus::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::perturb::{
    make_pair_batch, make_single_example, Label, LabeledExample, PairBatch, PairKind, PerturbKind,
};
use crate::probes::{ProbeExample, ProbeKind, ProbeTask, Split};
use crate::rng::{domain, RngStream};

fn kind_key(c: char) -> u64 {
    c as u64
}

/// One labelled example per sentence long enough for the perturbation;
/// returns the examples and the number of sentences skipped.
pub fn generate_single(
    sentences: &[TokenSequence],
    kind: PerturbKind,
    k: usize,
    gate_p: f64,
    vocab: &Vocabulary,
    seed: u64,
) -> (Vec<LabeledExample>, usize) {
    let results: Vec<Option<LabeledExample>> = sentences
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            if s.len() < kind.min_len(k) {
                return None;
            }
            let mut rng = RngStream::keyed(
                seed,
                &[domain::GEN, kind_key(kind.code()), k as u64, i as u64],
            );
            make_single_example(s, i, kind, k, gate_p, vocab, &mut rng).ok()
        })
        .collect();
    let skipped = results.iter().filter(|r| r.is_none()).count();
    (results.into_iter().flatten().collect(), skipped)
}

/// A pair batch with the corpus index of each of its sentences.
#[derive(Clone, Debug)]
pub struct SourcedBatch {
    pub batch: PairBatch,
    pub sources: Vec<usize>,
}

/// Shuffles the eligible sentences, cuts them into batches and draws one
/// candidate set per sentence. Trailing chunks smaller than `k` and batches
/// that cannot supply enough distinct candidates are skipped.
pub fn generate_pairs(
    sentences: &[TokenSequence],
    kind: PairKind,
    k: usize,
    batch_size: usize,
    seed: u64,
) -> Result<(Vec<SourcedBatch>, usize)> {
    if batch_size < k || k < 2 {
        return Err(Error::BatchTooSmall {
            batch: batch_size,
            needed: k,
        });
    }
    let code = kind_key(kind.code());
    let mut eligible: Vec<usize> = (0..sentences.len())
        .filter(|&i| sentences[i].len() >= kind.min_len())
        .collect();
    eligible.shuffle(&mut RngStream::keyed(
        seed,
        &[domain::GEN, domain::SHUFFLE, code, k as u64],
    ));
    let mut skipped = sentences.len() - eligible.len();
    let mut out = Vec::new();
    for (b, chunk) in eligible.chunks(batch_size).enumerate() {
        let sents: Vec<TokenSequence> = chunk.iter().map(|&i| sentences[i].clone()).collect();
        let mut rng = RngStream::keyed(
            seed,
            &[domain::GEN, domain::PAIRS, code, k as u64, b as u64],
        );
        match make_pair_batch(&sents, kind, k, &mut rng) {
            Ok(batch) => out.push(SourcedBatch {
                batch,
                sources: chunk.to_vec(),
            }),
            Err(Error::BatchTooSmall { .. }) => skipped += chunk.len(),
            Err(e) => return Err(e),
        }
    }
    Ok((out, skipped))
}

fn tokens_field(vocab: &Vocabulary, s: &[u32]) -> String {
    vocab.decode_joined(s)
}

pub fn write_single<W: Write>(
    mut w: W,
    examples: &[LabeledExample],
    vocab: &Vocabulary,
) -> Result<()> {
    for ex in examples {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}",
            ex.label,
            ex.kind.code(),
            ex.k,
            ex.source_index,
            tokens_field(vocab, &ex.tokens)
        )?;
    }
    Ok(())
}

pub fn write_pairs<W: Write>(mut w: W, batches: &[SourcedBatch], vocab: &Vocabulary) -> Result<()> {
    for SourcedBatch { batch, sources } in batches {
        let code = batch.kind.code();
        for set in &batch.sets {
            writeln!(
                w,
                "{}\t{code}\t{}\t{}\tanchor\t{}",
                Label::Consistent,
                batch.k,
                sources[set.anchor_source],
                tokens_field(vocab, &set.anchor)
            )?;
            for (c, (cand, &src)) in set
                .candidates
                .iter()
                .zip(&set.candidate_sources)
                .enumerate()
            {
                let label = if c == set.target_index {
                    Label::Consistent
                } else {
                    Label::Inconsistent
                };
                writeln!(
                    w,
                    "{label}\t{code}\t{}\t{}\tcand\t{}",
                    batch.k,
                    sources[src],
                    tokens_field(vocab, cand)
                )?;
            }
        }
    }
    Ok(())
}

pub fn write_probe<W: Write>(mut w: W, task: &ProbeTask, vocab: &Vocabulary) -> Result<()> {
    for split in Split::ALL {
        for ex in task.split(split) {
            writeln!(
                w,
                "{split}\t{}\t0\t{}\t{}\t{}",
                task.kind,
                ex.source_index,
                tokens_field(vocab, &ex.tokens),
                ex.class
            )?;
        }
    }
    Ok(())
}

fn parse_label(s: &str) -> Result<Label> {
    match s {
        "consistent" => Ok(Label::Consistent),
        "inconsistent" => Ok(Label::Inconsistent),
        other => Err(Error::format("label", other)),
    }
}

fn parse_num(field: &str, what: &'static str) -> Result<usize> {
    field.parse().map_err(|_| Error::format(what, field))
}

fn fields(line: &str, n: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = line.split('\t').collect();
    if f.len() != n {
        return Err(Error::format(
            "record",
            format!("expected {n} fields, got {}: {line:?}", f.len()),
        ));
    }
    Ok(f)
}

fn parse_tokens(vocab: &Vocabulary, field: &str) -> Result<TokenSequence> {
    let words: Vec<&str> = field.split(' ').filter(|w| !w.is_empty()).collect();
    vocab.encode(&words)
}

pub fn read_single<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f = fields(&line, 5)?;
        out.push(LabeledExample {
            label: parse_label(f[0])?,
            kind: f[1].parse()?,
            k: parse_num(f[2], "k")?,
            source_index: parse_num(f[3], "source index")?,
            tokens: parse_tokens(vocab, f[4])?,
        });
    }
    Ok(out)
}

/// Reads a probe dataset; the number of classes is taken as one more than
/// the largest class seen.
pub fn read_probe<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<ProbeTask> {
    let mut kind = None;
    let mut splits: [Vec<ProbeExample>; 3] = Default::default();
    for line in r.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f = fields(&line, 6)?;
        let split: Split = f[0].parse()?;
        let k: ProbeKind = f[1].parse()?;
        if *kind.get_or_insert(k) != k {
            return Err(Error::format("probe dataset", "mixes probe kinds"));
        }
        splits[split as usize].push(ProbeExample {
            source_index: parse_num(f[3], "source index")?,
            tokens: parse_tokens(vocab, f[4])?,
            class: parse_num(f[5], "class")?,
        });
    }
    let kind = kind.ok_or(Error::EmptyCorpus)?;
    let num_classes = splits
        .iter()
        .flatten()
        .map(|e| e.class + 1)
        .max()
        .unwrap_or(0)
        .max(2);
    let [train, valid, test] = splits;
    Ok(ProbeTask {
        kind,
        num_classes,
        train,
        valid,
        test,
    })
}
