//! Consistent / inconsistent example generation.
//!
//! Single-sequence tasks corrupt a sentence by deleting, permuting, inserting
//! or replacing `k` tokens. Pair tasks split a sentence in two and ask which of
//! `k` candidate right parts belongs to a given left part; impostors come from
//! other sentences of the same minibatch.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSequence, Vocabulary};
use crate::error::{Error, Result};

const MAX_RESAMPLES: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PerturbKind {
    Delete,
    Permute,
    Insert,
    Replace,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 4] = [
        PerturbKind::Delete,
        PerturbKind::Permute,
        PerturbKind::Insert,
        PerturbKind::Replace,
    ];

    /// Shortest sentence the generator accepts for a given `k`.
    pub fn min_len(self, k: usize) -> usize {
        match self {
            PerturbKind::Delete => k + 1,
            PerturbKind::Permute => k.max(2),
            PerturbKind::Insert => 1,
            PerturbKind::Replace => k.max(1),
        }
    }

    pub fn code(self) -> char {
        match self {
            PerturbKind::Delete => 'D',
            PerturbKind::Permute => 'P',
            PerturbKind::Insert => 'I',
            PerturbKind::Replace => 'R',
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PerturbKind::Delete => "delete",
            PerturbKind::Permute => "permute",
            PerturbKind::Insert => "insert",
            PerturbKind::Replace => "replace",
        };
        f.write_str(s)
    }
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delete" | "D" => Ok(PerturbKind::Delete),
            "permute" | "P" => Ok(PerturbKind::Permute),
            "insert" | "I" => Ok(PerturbKind::Insert),
            "replace" | "R" => Ok(PerturbKind::Replace),
            _ => Err(Error::format("perturbation kind", s)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Consistent,
    Inconsistent,
}

impl Label {
    /// Class index used by the binary heads.
    pub fn class(self) -> usize {
        match self {
            Label::Consistent => 0,
            Label::Inconsistent => 1,
        }
    }

    pub fn from_class(class: usize) -> Self {
        if class == 0 {
            Label::Consistent
        } else {
            Label::Inconsistent
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Consistent => "consistent",
            Label::Inconsistent => "inconsistent",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledExample {
    pub tokens: TokenSequence,
    pub label: Label,
    pub kind: PerturbKind,
    pub k: usize,
    pub source_index: usize,
}

fn check_len(s: &[u32], needed: usize) -> Result<()> {
    if s.len() < needed {
        return Err(Error::TooShort {
            len: s.len(),
            needed,
        });
    }
    Ok(())
}

/// Sorted positions, `k` of `n`, uniform without replacement.
fn choose_positions<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut picked = index::sample(rng, n, k).into_vec();
    picked.sort_unstable();
    picked
}

/// Regular vocabulary ids that do not occur in `s`.
fn replacement_pool(s: &[u32], vocab: &Vocabulary) -> Vec<u32> {
    let present: HashSet<u32> = s.iter().copied().collect();
    vocab
        .regular_ids()
        .filter(|id| !present.contains(id))
        .collect()
}

fn draw_from_pool<R: Rng + ?Sized>(
    s: &[u32],
    k: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let pool = replacement_pool(s, vocab);
    if pool.len() < k || pool.is_empty() {
        return Err(Error::NoCandidates {
            available: pool.len(),
            needed: k.max(1),
        });
    }
    Ok(index::sample(rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect())
}

pub fn perturb_delete<R: Rng + ?Sized>(
    s: &TokenSequence,
    k: usize,
    rng: &mut R,
) -> Result<TokenSequence> {
    if k == 0 {
        return Err(Error::Config("deletion needs k >= 1".into()));
    }
    check_len(s, k + 1)?;
    let drop = choose_positions(rng, s.len(), k);
    let mut drop = drop.into_iter().peekable();
    let kept = s
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            if drop.peek() == Some(&i) {
                drop.next();
                None
            } else {
                Some(t)
            }
        })
        .collect();
    Ok(TokenSequence::from_vec(kept))
}

/// Rearranges `k` randomly chosen positions with a non-identity permutation.
///
/// When the chosen positions hold repeated tokens, permutations that leave the
/// token sequence unchanged are rejected as well, so the output always differs
/// from `s`.
pub fn perturb_permute<R: Rng + ?Sized>(
    s: &TokenSequence,
    k: usize,
    rng: &mut R,
) -> Result<TokenSequence> {
    if k < 2 {
        return Err(Error::Config("permutation needs k >= 2".into()));
    }
    check_len(s, k)?;
    let mut slots = Vec::new();
    for _ in 0..MAX_RESAMPLES {
        let candidate = choose_positions(rng, s.len(), k);
        let first = s[candidate[0]];
        if candidate.iter().any(|&p| s[p] != first) {
            slots = candidate;
            break;
        }
    }
    if slots.is_empty() {
        return Err(Error::NoDistinctArrangement);
    }
    let original: Vec<u32> = slots.iter().map(|&p| s[p]).collect();
    let mut order: Vec<usize> = (0..k).collect();
    loop {
        order.shuffle(rng);
        if order.iter().zip(&original).any(|(&o, &t)| original[o] != t) {
            break;
        }
    }
    let mut out = s.ids().to_vec();
    for (&slot, &o) in slots.iter().zip(&order) {
        out[slot] = original[o];
    }
    Ok(TokenSequence::from_vec(out))
}

/// Inserts `k` tokens absent from `s`; each goes into a uniform gap of the
/// sequence built so far.
pub fn perturb_insert<R: Rng + ?Sized>(
    s: &TokenSequence,
    k: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<TokenSequence> {
    if k == 0 {
        return Err(Error::Config("insertion needs k >= 1".into()));
    }
    let tokens = draw_from_pool(s, k, vocab, rng)?;
    let mut out = s.ids().to_vec();
    for t in tokens {
        let gap = rng.random_range(0..=out.len());
        out.insert(gap, t);
    }
    Ok(TokenSequence::from_vec(out))
}

/// Replaces `k` positions with distinct tokens absent from `s`.
pub fn perturb_replace<R: Rng + ?Sized>(
    s: &TokenSequence,
    k: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<TokenSequence> {
    if k == 0 {
        return Err(Error::Config("replacement needs k >= 1".into()));
    }
    check_len(s, k)?;
    let tokens = draw_from_pool(s, k, vocab, rng)?;
    let slots = choose_positions(rng, s.len(), k);
    let mut out = s.ids().to_vec();
    for (slot, t) in slots.into_iter().zip(tokens) {
        out[slot] = t;
    }
    Ok(TokenSequence::from_vec(out))
}

pub fn perturb<R: Rng + ?Sized>(
    s: &TokenSequence,
    kind: PerturbKind,
    k: usize,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<TokenSequence> {
    match kind {
        PerturbKind::Delete => perturb_delete(s, k, rng),
        PerturbKind::Permute => perturb_permute(s, k, rng),
        PerturbKind::Insert => perturb_insert(s, k, vocab, rng),
        PerturbKind::Replace => perturb_replace(s, k, vocab, rng),
    }
}

/// With probability `gate_p` emits a perturbed copy labelled inconsistent,
/// otherwise `s` itself labelled consistent.
pub fn make_single_example<R: Rng + ?Sized>(
    s: &TokenSequence,
    source_index: usize,
    kind: PerturbKind,
    k: usize,
    gate_p: f64,
    vocab: &Vocabulary,
    rng: &mut R,
) -> Result<LabeledExample> {
    let corrupt = rng.random_bool(gate_p.clamp(0.0, 1.0));
    let (tokens, label) = if corrupt {
        (perturb(s, kind, k, vocab, rng)?, Label::Inconsistent)
    } else {
        (s.clone(), Label::Consistent)
    };
    Ok(LabeledExample {
        tokens,
        label,
        kind,
        k,
        source_index,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairKind {
    Contiguous,
    NonContiguous,
}

impl PairKind {
    pub fn min_len(self) -> usize {
        match self {
            PairKind::Contiguous => 3,
            PairKind::NonContiguous => 2,
        }
    }

    pub fn code(self) -> char {
        match self {
            PairKind::Contiguous => 'C',
            PairKind::NonContiguous => 'N',
        }
    }
}

impl fmt::Display for PairKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PairKind::Contiguous => "contiguous",
            PairKind::NonContiguous => "noncontiguous",
        })
    }
}

/// A sentence split into two order-preserving parts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    pub left: TokenSequence,
    pub right: TokenSequence,
    /// `in_left[p]` tells which part position `p` of the source went to.
    pub in_left: Vec<bool>,
}

impl Partition {
    fn from_mask(s: &[u32], in_left: Vec<bool>) -> Self {
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (&t, &l) in s.iter().zip(&in_left) {
            if l {
                left.push(t)
            } else {
                right.push(t)
            }
        }
        Partition {
            left: TokenSequence::from_vec(left),
            right: TokenSequence::from_vec(right),
            in_left,
        }
    }

    /// Re-interleaves the two parts by the recorded source positions.
    pub fn merge(&self) -> Vec<u32> {
        merge_by_mask(&self.left, &self.right, &self.in_left)
    }
}

pub fn merge_by_mask(left: &[u32], right: &[u32], in_left: &[bool]) -> Vec<u32> {
    let (mut l, mut r) = (left.iter(), right.iter());
    in_left
        .iter()
        .filter_map(|&is_left| if is_left { l.next() } else { r.next() })
        .copied()
        .collect()
}

/// Splits before a position `i` drawn uniformly from `{2, .., n-1}` (1-based):
/// left gets `w_1 .. w_{i-1}`, right gets `w_i .. w_n`.
pub fn partition_contiguous<R: Rng + ?Sized>(s: &TokenSequence, rng: &mut R) -> Result<Partition> {
    check_len(s, 3)?;
    let i = rng.random_range(2..s.len());
    Ok(split_at(s, i))
}

/// Contiguous split with the 1-based split point `i` given explicitly.
pub fn split_at(s: &TokenSequence, i: usize) -> Partition {
    assert!(i >= 2 && i <= s.len(), "split point {i} out of range");
    let in_left = (0..s.len()).map(|p| p + 1 < i).collect();
    Partition::from_mask(s, in_left)
}

/// Each token goes left with probability 0.5; assignments with an empty side
/// are redrawn.
pub fn partition_noncontiguous<R: Rng + ?Sized>(
    s: &TokenSequence,
    rng: &mut R,
) -> Result<Partition> {
    check_len(s, 2)?;
    for _ in 0..MAX_RESAMPLES {
        let in_left: Vec<bool> = (0..s.len()).map(|_| rng.random_bool(0.5)).collect();
        let lefts = in_left.iter().filter(|&&b| b).count();
        if lefts > 0 && lefts < s.len() {
            return Ok(Partition::from_mask(s, in_left));
        }
    }
    Err(Error::DegenerateSplit {
        retries: MAX_RESAMPLES,
    })
}

pub fn partition<R: Rng + ?Sized>(
    s: &TokenSequence,
    kind: PairKind,
    rng: &mut R,
) -> Result<Partition> {
    match kind {
        PairKind::Contiguous => partition_contiguous(s, rng),
        PairKind::NonContiguous => partition_noncontiguous(s, rng),
    }
}

/// One ranking instance: which candidate completes the anchor?
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairCandidateSet {
    pub anchor: TokenSequence,
    pub candidates: Vec<TokenSequence>,
    pub target_index: usize,
    pub kind: PairKind,
    /// Batch position of the anchor's sentence.
    pub anchor_source: usize,
    /// Batch position of each candidate's sentence.
    pub candidate_sources: Vec<usize>,
}

/// Partitions of a minibatch plus one candidate set per anchor.
#[derive(Clone, Debug)]
pub struct PairBatch {
    pub kind: PairKind,
    pub k: usize,
    pub partitions: Vec<Partition>,
    pub sets: Vec<PairCandidateSet>,
}

pub fn make_pair_batch<R: Rng + ?Sized>(
    sentences: &[TokenSequence],
    kind: PairKind,
    k: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if k < 2 || sentences.len() < k {
        return Err(Error::BatchTooSmall {
            batch: sentences.len(),
            needed: k,
        });
    }
    let partitions = sentences
        .iter()
        .map(|s| partition(s, kind, rng))
        .collect::<Result<Vec<_>>>()?;
    let mut sets = Vec::with_capacity(partitions.len());
    for (i, own) in partitions.iter().enumerate() {
        let eligible: Vec<usize> = partitions
            .iter()
            .enumerate()
            .filter(|&(j, p)| j != i && p.right != own.right)
            .map(|(j, _)| j)
            .collect();
        if eligible.len() < k - 1 {
            return Err(Error::BatchTooSmall {
                batch: eligible.len() + 1,
                needed: k,
            });
        }
        let mut sources: Vec<usize> = index::sample(rng, eligible.len(), k - 1)
            .into_iter()
            .map(|e| eligible[e])
            .collect();
        sources.push(i);
        sources.shuffle(rng);
        let target_index = sources.iter().position(|&j| j == i).unwrap();
        sets.push(PairCandidateSet {
            anchor: own.left.clone(),
            candidates: sources
                .iter()
                .map(|&j| partitions[j].right.clone())
                .collect(),
            target_index,
            kind,
            anchor_source: i,
            candidate_sources: sources,
        });
    }
    Ok(PairBatch {
        kind,
        k,
        partitions,
        sets,
    })
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::rng::RngStream;

    fn vocab_of(words: &[&str]) -> Vocabulary {
        let line: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        Vocabulary::build(&[line], 1, None).unwrap()
    }

    fn seq(v: &Vocabulary, words: &[&str]) -> TokenSequence {
        v.encode(words).unwrap()
    }

    fn words(v: &Vocabulary, s: &TokenSequence) -> Vec<String> {
        v.decode(s)
    }

    fn frequencies<F: FnMut(&mut RngStream) -> Vec<u32>>(
        draws: usize,
        mut f: F,
    ) -> HashMap<Vec<u32>, f64> {
        let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
        for i in 0..draws {
            let mut rng = RngStream::new(1234, i as u64);
            *counts.entry(f(&mut rng)).or_default() += 1;
        }
        counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / draws as f64))
            .collect()
    }

    const MAYA: [&str; 5] = ["maya", "goes", "to", "school", "."];

    #[test]
    fn delete_examples() {
        let v = vocab_of(&["maya", "goes", "to", "school", ".", "a", "b", "c"]);
        let s = seq(&v, &MAYA);
        let mut seen_table_example = false;
        for i in 0..200 {
            let out = perturb_delete(&s, 1, &mut RngStream::new(0, i)).unwrap();
            assert_eq!(out.len(), 4);
            seen_table_example |= words(&v, &out) == ["maya", "goes", "to", "."];
        }
        assert!(seen_table_example);

        let ab = seq(&v, &["a", "b"]);
        for i in 0..50 {
            let out = perturb_delete(&ab, 1, &mut RngStream::new(0, i)).unwrap();
            assert!(out.ids() == seq(&v, &["a"]).ids() || out.ids() == seq(&v, &["b"]).ids());
        }
        assert!(matches!(
            perturb_delete(&ab, 2, &mut RngStream::new(0, 0)),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn delete_two_of_three_is_uniform() {
        let v = vocab_of(&["a", "b", "c"]);
        let s = seq(&v, &["a", "b", "c"]);
        let freq = frequencies(10_000, |rng| perturb_delete(&s, 2, rng).unwrap().into_ids());
        assert_eq!(freq.len(), 3);
        for f in freq.values() {
            assert!((0.30..=0.37).contains(f), "{f}");
        }
    }

    #[test]
    fn permute_examples() {
        let v = vocab_of(&MAYA);
        let s = seq(&v, &MAYA);
        let mut seen = false;
        for i in 0..300 {
            let out = perturb_permute(&s, 2, &mut RngStream::new(0, i)).unwrap();
            let diff: Vec<usize> = (0..5).filter(|&p| out[p] != s[p]).collect();
            assert_eq!(diff.len(), 2);
            assert_eq!(out[diff[0]], s[diff[1]]);
            assert_eq!(out[diff[1]], s[diff[0]]);
            seen |= words(&v, &out) == ["maya", "to", "goes", "school", "."];
        }
        assert!(seen);
        assert!(perturb_permute(&s, 6, &mut RngStream::new(0, 0)).is_err());
        let same = seq(&v, &["to", "to", "to"]);
        assert!(matches!(
            perturb_permute(&same, 2, &mut RngStream::new(0, 0)),
            Err(Error::NoDistinctArrangement)
        ));
    }

    #[test]
    fn permute_three_covers_non_identity_uniformly() {
        let v = vocab_of(&["a", "b", "c"]);
        let s = seq(&v, &["a", "b", "c"]);
        let freq = frequencies(10_000, |rng| {
            perturb_permute(&s, 3, rng).unwrap().into_ids()
        });
        assert_eq!(freq.len(), 5);
        assert!(!freq.contains_key(s.ids()));
        for f in freq.values() {
            assert!((0.17..=0.23).contains(f), "{f}");
        }
    }

    #[test]
    fn insert_examples() {
        let v = vocab_of(&["maya", "goes", "to", "school", ".", "are"]);
        let s = seq(&v, &MAYA);
        let mut seen = false;
        for i in 0..300 {
            let out = perturb_insert(&s, 1, &v, &mut RngStream::new(0, i)).unwrap();
            assert_eq!(out.len(), 6);
            seen |= words(&v, &out) == ["maya", "goes", "are", "to", "school", "."];
        }
        assert!(seen);

        let ab = vocab_of(&["a", "b"]);
        let a = seq(&ab, &["a"]);
        let freq = frequencies(200, |rng| {
            perturb_insert(&a, 1, &ab, rng).unwrap().into_ids()
        });
        let mut outcomes: Vec<Vec<String>> = freq.keys().map(|k| ab.decode(k)).collect();
        outcomes.sort();
        assert_eq!(outcomes, [["a", "b"], ["b", "a"]]);

        let full = seq(&ab, &["a", "b"]);
        assert!(matches!(
            perturb_insert(&full, 1, &ab, &mut RngStream::new(0, 0)),
            Err(Error::NoCandidates { .. })
        ));
    }

    #[test]
    fn insert_outcomes_uniform() {
        let v = vocab_of(&["a", "b", "c", "d"]);
        let s = seq(&v, &["a", "b"]);
        let freq = frequencies(10_000, |rng| {
            perturb_insert(&s, 1, &v, rng).unwrap().into_ids()
        });
        assert_eq!(freq.len(), 6);
        for f in freq.values() {
            assert!((0.14..=0.20).contains(f), "{f}");
        }
    }

    #[test]
    fn replace_examples() {
        let v = vocab_of(&["maya", "goes", "to", "school", ".", "doesn't"]);
        let s = seq(&v, &MAYA);
        let mut seen = false;
        for i in 0..300 {
            let out = perturb_replace(&s, 1, &v, &mut RngStream::new(0, i)).unwrap();
            seen |= words(&v, &out) == ["maya", "doesn't", "to", "school", "."];
        }
        assert!(seen);

        let ab = vocab_of(&["a", "b"]);
        let a = seq(&ab, &["a"]);
        let out = perturb_replace(&a, 1, &ab, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(words(&ab, &out), ["b"]);

        let abc = vocab_of(&["a", "b", "c"]);
        let s = seq(&abc, &["a", "b"]);
        let freq = frequencies(500, |rng| {
            perturb_replace(&s, 1, &abc, rng).unwrap().into_ids()
        });
        let mut outcomes: Vec<Vec<String>> = freq.keys().map(|k| abc.decode(k)).collect();
        outcomes.sort();
        assert_eq!(outcomes, [["a", "c"], ["c", "b"]]);
        assert!(matches!(
            perturb_replace(&s, 2, &abc, &mut RngStream::new(0, 0)),
            Err(Error::NoCandidates { .. })
        ));
    }

    #[test]
    fn gate_extremes_and_balance() {
        let v = vocab_of(&MAYA);
        let s = seq(&v, &MAYA);
        let mut rng = RngStream::new(3, 0);
        let ex = make_single_example(&s, 0, PerturbKind::Delete, 1, 0.0, &v, &mut rng).unwrap();
        assert_eq!((ex.label, &ex.tokens), (Label::Consistent, &s));
        let ex = make_single_example(&s, 0, PerturbKind::Delete, 1, 1.0, &v, &mut rng).unwrap();
        assert_eq!((ex.label, ex.tokens.len()), (Label::Inconsistent, 4));

        let inconsistent = (0..10_000)
            .filter(|&i| {
                let mut rng = RngStream::new(9, i);
                make_single_example(&s, i as usize, PerturbKind::Delete, 1, 0.5, &v, &mut rng)
                    .unwrap()
                    .label
                    == Label::Inconsistent
            })
            .count();
        let frac = inconsistent as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn contiguous_partition() {
        let v = vocab_of(&MAYA);
        let s = seq(&v, &MAYA);
        let p = split_at(&s, 2);
        assert_eq!(words(&v, &p.left), ["maya"]);
        assert_eq!(words(&v, &p.right), ["goes", "to", "school", "."]);

        let three = seq(&v, &["maya", "goes", "to"]);
        for i in 0..20 {
            let p = partition_contiguous(&three, &mut RngStream::new(0, i)).unwrap();
            assert_eq!(p.left.len(), 1);
        }

        let mut counts = [0usize; 5];
        for i in 0..10_000 {
            let p = partition_contiguous(&s, &mut RngStream::new(77, i)).unwrap();
            assert_eq!([p.left.ids(), p.right.ids()].concat(), s.ids());
            counts[p.left.len() + 1] += 1;
        }
        for &c in &counts[2..=4] {
            let f = c as f64 / 10_000.0;
            assert!((0.31..=0.36).contains(&f), "{f}");
        }
        assert!(
            partition_contiguous(&seq(&v, &["maya", "goes"]), &mut RngStream::new(0, 0)).is_err()
        );
    }

    #[test]
    fn noncontiguous_partition() {
        let v = vocab_of(&["a", "b", "c", "d"]);
        let two = seq(&v, &["a", "b"]);
        for i in 0..100 {
            let p = partition_noncontiguous(&two, &mut RngStream::new(0, i)).unwrap();
            assert_eq!(p.merge(), two.ids());
            assert_eq!(p.left.len() + p.right.len(), 2);
        }
        let four = seq(&v, &["a", "b", "c", "d"]);
        let mut counts: HashMap<Vec<bool>, usize> = HashMap::new();
        for i in 0..10_000 {
            let p = partition_noncontiguous(&four, &mut RngStream::new(5, i)).unwrap();
            assert_eq!(p.merge(), four.ids());
            *counts.entry(p.in_left).or_default() += 1;
        }
        assert_eq!(counts.len(), 14);
        for &c in counts.values() {
            let f = c as f64 / 10_000.0;
            assert!((0.060..=0.083).contains(&f), "{f}");
        }
        assert!(partition_noncontiguous(&seq(&v, &["a"]), &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn pair_batch_forced_and_reconstructing() {
        let lines = crate::corpus::synthetic::ToyGrammar::default().generate(8, 4);
        let corpus = crate::corpus::Corpus::from_lines(&lines, 1, None).unwrap();
        let two = &corpus.sentences[..2];
        let batch =
            make_pair_batch(two, PairKind::Contiguous, 2, &mut RngStream::new(0, 0)).unwrap();
        for set in &batch.sets {
            let mut srcs = set.candidate_sources.clone();
            srcs.sort();
            assert_eq!(srcs, [0, 1]);
            assert_eq!(set.candidate_sources[set.target_index], set.anchor_source);
        }

        for kind in [PairKind::Contiguous, PairKind::NonContiguous] {
            let batch =
                make_pair_batch(&corpus.sentences, kind, 3, &mut RngStream::new(1, 0)).unwrap();
            assert_eq!(batch.sets.len(), 8);
            for (i, set) in batch.sets.iter().enumerate() {
                assert_eq!(set.candidates.len(), 3);
                let mask = &batch.partitions[i].in_left;
                let merged = merge_by_mask(&set.anchor, &set.candidates[set.target_index], mask);
                assert_eq!(merged, corpus.sentences[i].ids());
            }
        }

        let batch = make_pair_batch(
            &corpus.sentences,
            PairKind::Contiguous,
            8,
            &mut RngStream::new(2, 0),
        )
        .unwrap();
        for set in &batch.sets {
            let mut srcs = set.candidate_sources.clone();
            srcs.sort();
            assert_eq!(srcs, (0..8).collect::<Vec<_>>());
        }
        assert!(matches!(
            make_pair_batch(
                &corpus.sentences[..2],
                PairKind::Contiguous,
                3,
                &mut RngStream::new(0, 0)
            ),
            Err(Error::BatchTooSmall { .. })
        ));
    }

    #[test]
    fn target_position_is_shuffled() {
        let lines = crate::corpus::synthetic::ToyGrammar::default().generate(16, 8);
        let corpus = crate::corpus::Corpus::from_lines(&lines, 1, None).unwrap();
        let mut positions = [0usize; 4];
        for i in 0..50 {
            let batch = make_pair_batch(
                &corpus.sentences,
                PairKind::NonContiguous,
                4,
                &mut RngStream::new(3, i),
            )
            .unwrap();
            for set in batch.sets {
                positions[set.target_index] += 1;
            }
        }
        assert!(positions.iter().all(|&c| c > 100), "{positions:?}");
    }
}
