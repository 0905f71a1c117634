//! Tokenization, vocabulary construction and dataset splits.

pub mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Deref;

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::{domain, RngStream};

pub const UNK: u32 = 0;
pub const PAD: u32 = 1;
/// First id handed out to a regular token.
pub const FIRST_TOKEN_ID: u32 = 2;

const UNK_TEXT: &str = "<unk>";
const PAD_TEXT: &str = "<pad>";

/// Ordered, non-empty list of vocabulary ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(TokenSequence(ids))
    }

    /// Caller guarantees `ids` is non-empty.
    pub(crate) fn from_vec(ids: Vec<u32>) -> Self {
        debug_assert!(!ids.is_empty());
        TokenSequence(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.0
    }

    pub fn reversed(&self) -> Self {
        TokenSequence(self.0.iter().rev().copied().collect())
    }
}

impl Deref for TokenSequence {
    type Target = [u32];

    fn deref(&self) -> &[u32] {
        &self.0
    }
}

impl TryFrom<Vec<u32>> for TokenSequence {
    type Error = Error;

    fn try_from(ids: Vec<u32>) -> Result<Self> {
        TokenSequence::new(ids)
    }
}

/// Whitespace split plus lowercasing. Punctuation stays wherever whitespace
/// put it.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyText);
    }
    Ok(tokens)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    min_freq: usize,
}

impl Vocabulary {
    /// Every token seen at least `min_freq` times gets an id, ordered by
    /// descending frequency and then lexicographically. `max_size` caps the
    /// total size including the two special ids.
    pub fn build(corpus: &[Vec<String>], min_freq: usize, max_size: Option<usize>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if min_freq == 0 {
            return Err(Error::Config("min_freq must be at least 1".into()));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for sentence in corpus {
            for token in sentence {
                *counts.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut kept: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        if let Some(cap) = max_size {
            kept.truncate(cap.saturating_sub(FIRST_TOKEN_ID as usize));
        }
        Ok(Self::from_tokens(
            kept.into_iter().map(|(t, _)| t.to_owned()),
            min_freq,
        ))
    }

    fn from_tokens(tokens: impl IntoIterator<Item = String>, min_freq: usize) -> Self {
        let mut id_to_token = vec![UNK_TEXT.to_owned(), PAD_TEXT.to_owned()];
        id_to_token.extend(tokens);
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .skip(FIRST_TOKEN_ID as usize)
            .map(|(id, t)| (t.clone(), id as u32))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
            min_freq,
        }
    }

    /// Number of ids including UNK and PAD.
    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= FIRST_TOKEN_ID as usize
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.token_to_id.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        self.id_to_token
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK_TEXT)
    }

    /// Regular (non-special) ids.
    pub fn regular_ids(&self) -> std::ops::Range<u32> {
        FIRST_TOKEN_ID..self.len() as u32
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<TokenSequence> {
        let ids = tokens
            .iter()
            .map(|t| self.id(t.as_ref()).unwrap_or(UNK))
            .collect();
        TokenSequence::new(ids)
    }

    pub fn decode(&self, seq: &[u32]) -> Vec<String> {
        seq.iter().map(|&id| self.token(id).to_owned()).collect()
    }

    pub fn decode_joined(&self, seq: &[u32]) -> String {
        self.decode(seq).join(" ")
    }

    /// One token per line; line `i` holds id `i + 2`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for token in &self.id_to_token[FIRST_TOKEN_ID as usize..] {
            writeln!(w, "{token}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            if line.is_empty() || line.contains(char::is_whitespace) {
                return Err(Error::format(
                    "vocabulary file",
                    format!("bad token line {line:?}"),
                ));
            }
            tokens.push(line);
        }
        let vocab = Self::from_tokens(tokens, 1);
        if vocab.token_to_id.len() + FIRST_TOKEN_ID as usize != vocab.len() {
            return Err(Error::format("vocabulary file", "duplicate token"));
        }
        Ok(vocab)
    }

    /// SHA-256 over the vocabulary file bytes, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)
            .expect("writing to a Vec cannot fail");
        hex::encode(Sha256::digest(&bytes))
    }
}

impl fmt::Display for Vocabulary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vocabulary({} ids)", self.len())
    }
}

/// Deterministic split into (train, valid). Both sides keep the original
/// relative order.
pub fn split_corpus<T: Clone>(
    items: &[T],
    valid_fraction: f64,
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if !(valid_fraction > 0.0 && valid_fraction < 1.0) {
        return Err(Error::Config(format!(
            "valid_fraction must lie in (0, 1), got {valid_fraction}"
        )));
    }
    let n = items.len();
    let n_valid = (n as f64 * valid_fraction).round() as usize;
    if n_valid == 0 || n_valid >= n {
        return Err(Error::TooSmall {
            train: n.saturating_sub(n_valid),
            valid: n_valid,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut RngStream::keyed(seed, &[domain::SPLIT]));
    let mut is_valid = vec![false; n];
    for &i in &order[..n_valid] {
        is_valid[i] = true;
    }
    let mut train = Vec::with_capacity(n - n_valid);
    let mut valid = Vec::with_capacity(n_valid);
    for (item, v) in items.iter().zip(is_valid) {
        if v {
            valid.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, valid))
}

/// Sentences encoded against their vocabulary.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub sentences: Vec<TokenSequence>,
}

impl Corpus {
    /// One sentence per line; blank lines are skipped.
    pub fn from_lines<S: AsRef<str>>(
        lines: &[S],
        min_freq: usize,
        max_vocab: Option<usize>,
    ) -> Result<Self> {
        let tokenized: Vec<Vec<String>> = lines
            .iter()
            .filter_map(|l| tokenize(l.as_ref()).ok())
            .collect();
        let vocab = Vocabulary::build(&tokenized, min_freq, max_vocab)?;
        let sentences = tokenized
            .iter()
            .map(|t| vocab.encode(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Corpus { vocab, sentences })
    }

    pub fn from_text(text: &str, min_freq: usize, max_vocab: Option<usize>) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        Self::from_lines(&lines, min_freq, max_vocab)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use proptest::prelude::*;

    use super::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Maya goes to school .").unwrap(),
            toks(&["maya", "goes", "to", "school", "."])
        );
        assert_eq!(tokenize("A").unwrap(), toks(&["a"]));
        assert_eq!(tokenize("  x   y ").unwrap(), toks(&["x", "y"]));
        assert!(matches!(tokenize("   \t "), Err(Error::EmptyText)));
    }

    #[test]
    fn vocab_min_freq() {
        let corpus = vec![toks(&["a", "b"]), toks(&["a"])];
        let v1 = Vocabulary::build(&corpus, 1, None).unwrap();
        assert_eq!(v1.len(), 4);
        assert_eq!(v1.id("a"), Some(2));
        assert_eq!(v1.id("b"), Some(3));

        let v2 = Vocabulary::build(&corpus, 2, None).unwrap();
        assert_eq!(v2.len(), 3);
        assert_eq!(v2.encode(&["b"]).unwrap().ids(), &[UNK]);
        assert!(matches!(
            Vocabulary::build(&[], 1, None),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn vocab_order_is_frequency_then_lexicographic() {
        let corpus = vec![toks(&["z", "y", "y", "b", "a"])];
        let v = Vocabulary::build(&corpus, 1, None).unwrap();
        let order: Vec<&str> = v.regular_ids().map(|i| v.token(i)).collect();
        assert_eq!(order, ["y", "a", "b", "z"]);
        let capped = Vocabulary::build(&corpus, 1, Some(4)).unwrap();
        assert_eq!(capped.len(), 4);
        assert_eq!(capped.id("z"), None);
    }

    #[test]
    fn vocab_size_matches_frequency_oracle() {
        let lines = synthetic::ToyGrammar::default().generate(1000, 11);
        let tokenized: Vec<Vec<String>> = lines.iter().map(|l| tokenize(l).unwrap()).collect();
        let mut freq: HashMap<String, usize> = HashMap::new();
        for t in tokenized.iter().flatten() {
            *freq.entry(t.clone()).or_default() += 1;
        }
        let expected = freq.values().filter(|&&c| c >= 2).count();
        let vocab = Vocabulary::build(&tokenized, 2, None).unwrap();
        assert_eq!(vocab.len() - 2, expected);
    }

    #[test]
    fn encode_unknown_maps_to_unk() {
        let v = Vocabulary::build(&[toks(&["maya"])], 1, None).unwrap();
        assert_eq!(v.encode(&["maya"]).unwrap().ids(), &[2]);
        assert_eq!(v.encode(&["zzz"]).unwrap().ids(), &[UNK]);
    }

    #[test]
    fn vocab_file_round_trip() {
        let lines = synthetic::ToyGrammar::default().generate(200, 3);
        let corpus = Corpus::from_lines(&lines, 1, None).unwrap();
        let mut buf = Vec::new();
        corpus.vocab.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), corpus.vocab.token(2));
        let back = Vocabulary::read_from(&buf[..]).unwrap();
        assert_eq!(back.len(), corpus.vocab.len());
        assert_eq!(back.content_hash(), corpus.vocab.content_hash());
        assert!(Vocabulary::read_from(&b"a\na\n"[..]).is_err());
    }

    #[test]
    fn split_examples() {
        let items: Vec<u32> = (0..10).collect();
        let (train, valid) = split_corpus(&items, 0.2, 5).unwrap();
        assert_eq!((train.len(), valid.len()), (8, 2));
        assert_eq!(split_corpus(&items, 0.2, 5).unwrap(), (train, valid));
        assert!(matches!(
            split_corpus(&items[..1], 0.2, 5),
            Err(Error::TooSmall { .. })
        ));
        assert!(split_corpus(&items, 1.0, 5).is_err());
    }

    #[test]
    fn split_is_exact_partition() {
        let items: Vec<u32> = (0..1000).collect();
        let (train, valid) = split_corpus(&items, 0.1, 99).unwrap();
        let t: HashSet<u32> = train.iter().copied().collect();
        let v: HashSet<u32> = valid.iter().copied().collect();
        assert!(t.is_disjoint(&v));
        let union: HashSet<u32> = t.union(&v).copied().collect();
        assert_eq!(union, items.iter().copied().collect());
        assert_eq!(t.len() + v.len(), 1000);
    }

    proptest! {
        #[test]
        fn encode_decode_identity(words in proptest::collection::vec(0usize..20, 1..12)) {
            let pool: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
            let vocab = Vocabulary::build(std::slice::from_ref(&pool), 1, None).unwrap();
            let sentence: Vec<String> = words.iter().map(|&i| pool[i].clone()).collect();
            let seq = vocab.encode(&sentence).unwrap();
            prop_assert_eq!(vocab.decode(&seq), sentence);
            let again = vocab.encode(&vocab.decode(&seq)).unwrap();
            prop_assert_eq!(again, seq);
        }
    }
}
