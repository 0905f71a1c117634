//! Sentence encoders learned by telling real token sequences apart from
//! randomly perturbed ones.
//!
//! The crate covers the whole pipeline at desk scale: corpus handling
//! ([`corpus`]), example generation ([`perturb`]), a BiLSTM-max encoder with
//! exact reverse-mode gradients ([`encoder`]), single-task and multitask SGD
//! training ([`train`]), frozen-encoder probing ([`probes`]) and
//! validation-weighted ensembles ([`ensemble`]).

pub mod corpus;
pub mod dataset;
pub mod encoder;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod perturb;
pub mod probes;
pub mod rng;
pub mod train;

pub use corpus::{Corpus, TokenSequence, Vocabulary};
pub use encoder::{encode, EncoderConfig, EncoderParams, Encoding, Model, Params};
pub use error::{Error, Result};
pub use perturb::{Label, LabeledExample, PairCandidateSet, PairKind, PerturbKind};
pub use rng::RngStream;
pub use train::{Task, TrainConfig};
