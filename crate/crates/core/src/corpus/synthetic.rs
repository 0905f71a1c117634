//! A small topical grammar used as a desk-scale training corpus.
//!
//! Sentences follow `subject verb object [prep object] .` with number
//! agreement between subject and verb. Each sentence draws its content words
//! (nouns, verbs, adjectives) from a single topic, so both word order and
//! word co-occurrence carry signal.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::Corpus;
use crate::error::Result;
use crate::rng::{domain, RngStream};

/// `count` toy sentences and the vocabulary of every word they use.
pub fn toy_corpus(count: usize, seed: u64) -> Result<Corpus> {
    Corpus::from_lines(&ToyGrammar::default().generate(count, seed), 1, None)
}

struct Topic {
    nouns: &'static [&'static str],
    verbs: &'static [&'static str],
    adjectives: &'static [&'static str],
}

const TOPICS: &[Topic] = &[
    Topic {
        nouns: &["dog", "cat", "horse", "bird", "fox", "rabbit"],
        verbs: &["chase", "feed", "watch", "follow"],
        adjectives: &["wild", "small", "hungry"],
    },
    Topic {
        nouns: &["apple", "bread", "cake", "soup", "pizza", "salad"],
        verbs: &["cook", "bake", "taste", "serve"],
        adjectives: &["fresh", "warm", "sweet"],
    },
    Topic {
        nouns: &["student", "teacher", "book", "lesson", "desk", "class"],
        verbs: &["read", "teach", "study", "write"],
        adjectives: &["new", "long", "hard"],
    },
    Topic {
        nouns: &["song", "guitar", "drum", "piano", "band", "singer"],
        verbs: &["play", "hear", "sing", "record"],
        adjectives: &["loud", "soft", "old"],
    },
    Topic {
        nouns: &["ball", "team", "coach", "player", "goal", "match"],
        verbs: &["kick", "win", "throw", "lose"],
        adjectives: &["fast", "strong", "young"],
    },
    Topic {
        nouns: &["car", "train", "ship", "road", "map", "ticket"],
        verbs: &["drive", "board", "find", "buy"],
        adjectives: &["red", "big", "cheap"],
    },
    Topic {
        nouns: &["tree", "flower", "seed", "leaf", "rose", "bush"],
        verbs: &["plant", "water", "grow", "cut"],
        adjectives: &["green", "tall", "tiny"],
    },
    Topic {
        nouns: &["street", "shop", "bank", "tower", "bridge", "market"],
        verbs: &["visit", "build", "paint", "clean"],
        adjectives: &["busy", "quiet", "modern"],
    },
];

const NAMES: &[&str] = &["maya", "tom", "sara", "leo", "nina", "omar"];
const SINGULAR_DETERMINERS: &[&str] = &["the", "a", "this", "every", "my"];
const PLURAL_DETERMINERS: &[&str] = &["the", "some", "these", "many", "my"];
const PREPOSITIONS: &[&str] = &["in", "on", "near", "with", "behind"];

fn plural(noun: &str) -> String {
    match noun {
        "leaf" => "leaves".into(),
        n if n.ends_with('s') || n.ends_with('x') || n.ends_with("ch") || n.ends_with("sh") => {
            format!("{n}es")
        }
        n => format!("{n}s"),
    }
}

fn third_person(verb: &str) -> String {
    match verb {
        "study" => "studies".into(),
        v if v.ends_with("ch") || v.ends_with("sh") || v.ends_with('s') => format!("{v}es"),
        v => format!("{v}s"),
    }
}

/// Sentence generator with a few tunable probabilities.
#[derive(Clone, Debug)]
pub struct ToyGrammar {
    pub name_subject_p: f64,
    pub plural_p: f64,
    pub adjective_p: f64,
    pub prep_phrase_p: f64,
}

impl Default for ToyGrammar {
    fn default() -> Self {
        ToyGrammar {
            name_subject_p: 0.15,
            plural_p: 0.4,
            adjective_p: 0.25,
            prep_phrase_p: 0.5,
        }
    }
}

impl ToyGrammar {
    /// Every word the grammar can emit.
    pub fn lexicon() -> Vec<String> {
        let mut words: Vec<String> = Vec::new();
        for topic in TOPICS {
            for n in topic.nouns {
                words.push(n.to_string());
                words.push(plural(n));
            }
            for v in topic.verbs {
                words.push(v.to_string());
                words.push(third_person(v));
            }
            words.extend(topic.adjectives.iter().map(|a| a.to_string()));
        }
        words.extend(NAMES.iter().map(|w| w.to_string()));
        words.extend(SINGULAR_DETERMINERS.iter().map(|w| w.to_string()));
        words.extend(PLURAL_DETERMINERS.iter().map(|w| w.to_string()));
        words.extend(PREPOSITIONS.iter().map(|w| w.to_string()));
        words.push(".".into());
        words.sort();
        words.dedup();
        words
    }

    pub fn num_topics() -> usize {
        TOPICS.len()
    }

    /// Content words (all inflections) of the given topics.
    pub fn topic_words(topics: std::ops::Range<usize>) -> Vec<String> {
        let mut words = Vec::new();
        for topic in &TOPICS[topics] {
            for n in topic.nouns {
                words.push(n.to_string());
                words.push(plural(n));
            }
            for v in topic.verbs {
                words.push(v.to_string());
                words.push(third_person(v));
            }
            words.extend(topic.adjectives.iter().map(|a| a.to_string()));
        }
        words
    }

    /// `count` sentences; sentence `i` depends only on `(seed, i)`.
    pub fn generate(&self, count: usize, seed: u64) -> Vec<String> {
        (0..count)
            .map(|i| {
                let mut rng = RngStream::keyed(seed, &[domain::CORPUS, i as u64]);
                self.sentence(&mut rng).join(" ")
            })
            .collect()
    }

    fn noun_phrase<R: Rng>(
        &self,
        topic: &Topic,
        allow_name: bool,
        rng: &mut R,
        out: &mut Vec<String>,
    ) -> bool {
        if allow_name && rng.random_bool(self.name_subject_p) {
            out.push(NAMES.choose(rng).unwrap().to_string());
            return false;
        }
        let is_plural = rng.random_bool(self.plural_p);
        let dets = if is_plural {
            PLURAL_DETERMINERS
        } else {
            SINGULAR_DETERMINERS
        };
        out.push(dets.choose(rng).unwrap().to_string());
        if rng.random_bool(self.adjective_p) {
            out.push(topic.adjectives.choose(rng).unwrap().to_string());
        }
        let noun = topic.nouns.choose(rng).unwrap();
        out.push(if is_plural {
            plural(noun)
        } else {
            noun.to_string()
        });
        is_plural
    }

    fn clause<R: Rng>(&self, topic: &Topic, rng: &mut R, out: &mut Vec<String>) {
        let plural_subject = self.noun_phrase(topic, true, rng, out);
        let verb = topic.verbs.choose(rng).unwrap();
        out.push(if plural_subject {
            verb.to_string()
        } else {
            third_person(verb)
        });
        self.noun_phrase(topic, false, rng, out);
        if rng.random_bool(self.prep_phrase_p) {
            out.push(PREPOSITIONS.choose(rng).unwrap().to_string());
            self.noun_phrase(topic, false, rng, out);
        }
    }

    pub fn sentence<R: Rng>(&self, rng: &mut R) -> Vec<String> {
        let topic = TOPICS.choose(rng).unwrap();
        let mut out = Vec::with_capacity(12);
        self.clause(topic, rng, &mut out);
        out.push(".".into());
        out
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn lexicon_has_no_collisions() {
        let mut all = Vec::new();
        for topic in TOPICS {
            for n in topic.nouns {
                all.push(n.to_string());
                all.push(plural(n));
            }
            for v in topic.verbs {
                all.push(v.to_string());
                all.push(third_person(v));
            }
            all.extend(topic.adjectives.iter().map(|a| a.to_string()));
        }
        all.extend(NAMES.iter().map(|w| w.to_string()));
        all.extend(PREPOSITIONS.iter().map(|w| w.to_string()));
        let unique: HashSet<&String> = all.iter().collect();
        assert_eq!(unique.len(), all.len());
        let lexicon = ToyGrammar::lexicon();
        assert!((190..=215).contains(&lexicon.len()), "{}", lexicon.len());
    }

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let g = ToyGrammar::default();
        let a = g.generate(300, 1);
        assert_eq!(a, g.generate(300, 1));
        assert_ne!(a, g.generate(300, 2));
        let lexicon: HashSet<String> = ToyGrammar::lexicon().into_iter().collect();
        for s in &a {
            let words: Vec<&str> = s.split(' ').collect();
            assert!((4..=12).contains(&words.len()), "{s}");
            assert_eq!(*words.last().unwrap(), ".");
            assert!(words.iter().all(|w| lexicon.contains(*w)));
        }
    }
}
