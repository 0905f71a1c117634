//! Shared fixtures for the benchmarks under `benches/`.

use conssent_core::corpus::synthetic::toy_corpus;
use conssent_core::{Corpus, EncoderConfig, EncoderParams, RngStream};

/// A fixed toy corpus.
pub fn corpus(sentences: usize) -> Corpus {
    toy_corpus(sentences, 0).expect("toy corpus")
}

/// A randomly initialised encoder over `corpus`'s vocabulary.
pub fn encoder(corpus: &Corpus, embed_dim: usize, hidden_dim: usize) -> EncoderParams {
    let config = EncoderConfig::new(corpus.vocab.len(), embed_dim, hidden_dim);
    EncoderParams::new(&config, &mut RngStream::new(0, 0))
}
