//! Frozen-encoder probing: synthetic labelled datasets whose labels follow
//! from the tokens themselves, evaluated with logistic regression and a small
//! sigmoid MLP.

mod eval;
mod logreg;
mod mlp;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use self::eval::{
    encode_probe, eval_logreg, eval_mlp_probe, eval_untrained_baseline, evaluate_encoder,
    select_logreg, untrained_encoder, ProbeEncodings, ProbeResult, ProbeTable, SplitData,
};
pub use self::logreg::{fit_logreg, LogReg};
pub use self::mlp::{fit_mlp, Mlp, MlpSettings};
use crate::corpus::synthetic::ToyGrammar;
use crate::corpus::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{domain, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ProbeKind {
    SentLen,
    WordContent,
    BigramShift,
    /// Binary classification by which of two word sets a sentence uses.
    Downstream,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 4] = [
        ProbeKind::SentLen,
        ProbeKind::WordContent,
        ProbeKind::BigramShift,
        ProbeKind::Downstream,
    ];

    fn code(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for ProbeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProbeKind::SentLen => "SentLen",
            ProbeKind::WordContent => "WordContent",
            ProbeKind::BigramShift => "BigramShift",
            ProbeKind::Downstream => "Downstream",
        })
    }
}

impl FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProbeKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown probe {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeExample {
    pub tokens: TokenSequence,
    pub class: usize,
    /// Index of the corpus sentence the example was built from.
    pub source_index: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::format("split", other)),
        }
    }
}

/// A labelled probing dataset with fixed, source-disjoint splits.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeTask {
    pub kind: ProbeKind,
    pub num_classes: usize,
    pub train: Vec<ProbeExample>,
    pub valid: Vec<ProbeExample>,
    pub test: Vec<ProbeExample>,
}

impl ProbeTask {
    /// Splits `examples` 60/20/20 by a seeded shuffle.
    pub fn from_examples(
        kind: ProbeKind,
        num_classes: usize,
        mut examples: Vec<ProbeExample>,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!("{kind} needs at least two classes")));
        }
        examples.shuffle(&mut RngStream::keyed(
            seed,
            &[domain::PROBE, kind.code(), 0],
        ));
        let n = examples.len();
        let n_test = (n as f64 * 0.2).round() as usize;
        let n_valid = n_test;
        if n < 3 || n_test == 0 || n - n_test - n_valid == 0 {
            return Err(Error::TooSmall {
                train: n.saturating_sub(n_test + n_valid),
                valid: n_valid,
            });
        }
        let test = examples.split_off(n - n_test);
        let valid = examples.split_off(n - n_test - n_valid);
        Ok(ProbeTask {
            kind,
            num_classes,
            train: examples,
            valid,
            test,
        })
    }

    pub fn split(&self, split: Split) -> &[ProbeExample] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of examples of each class over all splits.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for split in Split::ALL {
            for ex in self.split(split) {
                counts[ex.class] += 1;
            }
        }
        counts
    }
}

/// Half-open length bins `[edges[i], edges[i+1])`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthBins(Vec<usize>);

impl LengthBins {
    pub fn new(edges: Vec<usize>) -> Result<Self> {
        if edges.len() < 3 || edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "length bins need at least three strictly increasing edges".into(),
            ));
        }
        Ok(LengthBins(edges))
    }

    pub fn edges(&self) -> &[usize] {
        &self.0
    }

    pub fn num_bins(&self) -> usize {
        self.0.len() - 1
    }

    pub fn bin(&self, len: usize) -> Result<usize> {
        self.0
            .windows(2)
            .position(|w| (w[0]..w[1]).contains(&len))
            .ok_or(Error::UncoveredLength(len))
    }
}

impl Default for LengthBins {
    /// Four bins over the toy grammar's 4–12 token range.
    fn default() -> Self {
        LengthBins(vec![4, 6, 8, 10, 13])
    }
}

pub fn gen_probe_sentlen(
    sentences: &[TokenSequence],
    bins: &LengthBins,
    seed: u64,
) -> Result<ProbeTask> {
    let examples = sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(ProbeExample {
                tokens: s.clone(),
                class: bins.bin(s.len())?,
                source_index: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ProbeTask::from_examples(ProbeKind::SentLen, bins.num_bins(), examples, seed)
}

/// Index of the only target present in `s`, if exactly one is.
pub fn word_content_class(s: &[u32], targets: &[u32]) -> Option<usize> {
    let mut found = None;
    for (c, t) in targets.iter().enumerate() {
        if s.contains(t) {
            if found.is_some() {
                return None;
            }
            found = Some(c);
        }
    }
    found
}

pub fn gen_probe_wordcontent(
    sentences: &[TokenSequence],
    targets: &[u32],
    min_count: usize,
    seed: u64,
) -> Result<ProbeTask> {
    let distinct: HashSet<&u32> = targets.iter().collect();
    if targets.len() < 2 || distinct.len() != targets.len() {
        return Err(Error::Config(
            "word content needs at least two distinct targets".into(),
        ));
    }
    let examples: Vec<ProbeExample> = sentences
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            word_content_class(s, targets).map(|class| ProbeExample {
                tokens: s.clone(),
                class,
                source_index: i,
            })
        })
        .collect();
    check_counts(&examples, targets.len(), min_count)?;
    ProbeTask::from_examples(ProbeKind::WordContent, targets.len(), examples, seed)
}

fn check_counts(examples: &[ProbeExample], num_classes: usize, min: usize) -> Result<()> {
    let mut counts = vec![0; num_classes];
    for ex in examples {
        counts[ex.class] += 1;
    }
    match counts.iter().position(|&c| c < min) {
        Some(class) => Err(Error::InsufficientExamples {
            class,
            count: counts[class],
            min,
        }),
        None => Ok(()),
    }
}

/// Targets for word content: tokens ranked by the number of sentences that
/// contain them, skipping the most widespread fifth of the ranking.
pub fn choose_targets(sentences: &[TokenSequence], count: usize) -> Vec<u32> {
    let mut doc_freq: BTreeMap<u32, usize> = BTreeMap::new();
    for s in sentences {
        let unique: HashSet<u32> = s.iter().copied().collect();
        for t in unique {
            *doc_freq.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(u32, usize)> = doc_freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let skip = ranked.len() / 5;
    ranked
        .into_iter()
        .skip(skip)
        .take(count)
        .map(|(t, _)| t)
        .collect()
}

/// Swaps the tokens at `i − 1` and `i`.
pub fn shift_at(s: &TokenSequence, i: usize) -> Result<TokenSequence> {
    if i == 0 || i >= s.len() {
        return Err(Error::Config(format!(
            "no adjacent pair ending at {i} in length {}",
            s.len()
        )));
    }
    let mut ids = s.ids().to_vec();
    ids.swap(i - 1, i);
    TokenSequence::new(ids)
}

/// With probability one half swaps a uniformly chosen adjacent pair of
/// distinct tokens; returns the sequence and whether it was shifted.
pub fn bigram_shift<R: Rng + ?Sized>(
    s: &TokenSequence,
    rng: &mut R,
) -> Result<(TokenSequence, bool)> {
    if s.len() < 3 {
        return Err(Error::TooShort {
            len: s.len(),
            needed: 3,
        });
    }
    let swappable: Vec<usize> = (1..s.len()).filter(|&i| s[i - 1] != s[i]).collect();
    if swappable.is_empty() {
        return Err(Error::NoDistinctArrangement);
    }
    if rng.random_bool(0.5) {
        let i = swappable[rng.random_range(0..swappable.len())];
        Ok((shift_at(s, i)?, true))
    } else {
        Ok((s.clone(), false))
    }
}

/// Class 0 = original order, class 1 = shifted. Sentences shorter than three
/// tokens, or with no pair of distinct neighbours, are left out.
pub fn gen_probe_bigramshift(sentences: &[TokenSequence], seed: u64) -> Result<ProbeTask> {
    let mut skipped = 0;
    let mut examples = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let mut rng = RngStream::keyed(
            seed,
            &[domain::PROBE, ProbeKind::BigramShift.code(), 1, i as u64],
        );
        match bigram_shift(s, &mut rng) {
            Ok((tokens, shifted)) => examples.push(ProbeExample {
                tokens,
                class: usize::from(shifted),
                source_index: i,
            }),
            Err(Error::TooShort { .. } | Error::NoDistinctArrangement) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        log::warn!("bigram shift: skipped {skipped} sentences");
    }
    ProbeTask::from_examples(ProbeKind::BigramShift, 2, examples, seed)
}

/// Class 0 when a sentence uses words of `set_a` only, class 1 for `set_b`
/// only; sentences touching both or neither are left out.
pub fn gen_probe_downstream(
    sentences: &[TokenSequence],
    set_a: &[u32],
    set_b: &[u32],
    min_count: usize,
    seed: u64,
) -> Result<ProbeTask> {
    let a: HashSet<u32> = set_a.iter().copied().collect();
    let b: HashSet<u32> = set_b.iter().copied().collect();
    if a.is_empty() || b.is_empty() || !a.is_disjoint(&b) {
        return Err(Error::Config(
            "downstream word sets must be non-empty and disjoint".into(),
        ));
    }
    let examples: Vec<ProbeExample> = sentences
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let in_a = s.iter().any(|t| a.contains(t));
            let in_b = s.iter().any(|t| b.contains(t));
            let class = match (in_a, in_b) {
                (true, false) => 0,
                (false, true) => 1,
                _ => return None,
            };
            Some(ProbeExample {
                tokens: s.clone(),
                class,
                source_index: i,
            })
        })
        .collect();
    check_counts(&examples, 2, min_count)?;
    ProbeTask::from_examples(ProbeKind::Downstream, 2, examples, seed)
}

/// Which probe tasks to build, and their parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSuite {
    pub kinds: Vec<ProbeKind>,
    pub length_bins: Vec<usize>,
    /// Number of word-content targets, picked by [`choose_targets`].
    pub word_targets: usize,
    /// Smallest class size accepted for word content and downstream.
    pub min_count: usize,
    /// Downstream word sets; words missing from the vocabulary are ignored.
    pub downstream_a: Vec<String>,
    pub downstream_b: Vec<String>,
}

impl Default for ProbeSuite {
    /// All four probes; downstream separates the first four toy topics from
    /// the last four.
    fn default() -> Self {
        let half = ToyGrammar::num_topics() / 2;
        ProbeSuite {
            kinds: ProbeKind::ALL.to_vec(),
            length_bins: LengthBins::default().edges().to_vec(),
            word_targets: 4,
            min_count: 20,
            downstream_a: ToyGrammar::topic_words(0..half),
            downstream_b: ToyGrammar::topic_words(half..ToyGrammar::num_topics()),
        }
    }
}

impl ProbeSuite {
    pub fn build(
        &self,
        sentences: &[TokenSequence],
        vocab: &Vocabulary,
        seed: u64,
    ) -> Result<Vec<ProbeTask>> {
        let ids = |words: &[String]| words.iter().filter_map(|w| vocab.id(w)).collect::<Vec<_>>();
        self.kinds
            .iter()
            .map(|kind| match kind {
                ProbeKind::SentLen => {
                    gen_probe_sentlen(sentences, &LengthBins::new(self.length_bins.clone())?, seed)
                }
                ProbeKind::WordContent => {
                    let targets = choose_targets(sentences, self.word_targets);
                    gen_probe_wordcontent(sentences, &targets, self.min_count, seed)
                }
                ProbeKind::BigramShift => gen_probe_bigramshift(sentences, seed),
                ProbeKind::Downstream => gen_probe_downstream(
                    sentences,
                    &ids(&self.downstream_a),
                    &ids(&self.downstream_b),
                    self.min_count,
                    seed,
                ),
            })
            .collect()
    }
}

/// Grids and optimizer settings for the probe classifiers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub mlp_hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub l2_grid: Vec<f64>,
    pub epochs: usize,
    pub mlp_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            mlp_hidden: vec![50, 100, 200],
            dropout: vec![0.0, 0.1, 0.2],
            l2_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            epochs: 40,
            mlp_lr: 0.005,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.mlp_hidden.is_empty() || self.dropout.is_empty() || self.l2_grid.is_empty() {
            return Err(Error::Config("probe grids must be non-empty".into()));
        }
        if self.mlp_hidden.contains(&0) || self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return Err(Error::Config(
                "hidden sizes must be positive and dropout in [0, 1)".into(),
            ));
        }
        if self.l2_grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config(
                "L2 values must be finite and non-negative".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || !(self.mlp_lr > 0.0) {
            return Err(Error::Config(
                "epochs, batch_size and mlp_lr must be positive".into(),
            ));
        }
        Ok(())
    }
}
