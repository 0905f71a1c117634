//! Central-difference checks of the full encoder + loss gradients on small
//! random models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::grad::{pair_batch_loss_grad, single_batch_loss_grad, Reduction};
use crate::corpus::TokenSequence;
use crate::encoder::{
    encode_with_tape, finite_diff_check_smooth, EncoderConfig, EncoderParams, Model, Params,
};
use crate::error::Result;
use crate::perturb::{make_pair_batch, Label, LabeledExample, PairKind, PerturbKind};
use crate::rng::{domain, RngStream};

/// Size limits for the random models.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckConfig {
    pub models: usize,
    pub max_hidden: usize,
    pub max_vocab: usize,
    pub max_len: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            models: 20,
            max_hidden: 8,
            max_vocab: 32,
            max_len: 5,
            step: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub models: usize,
    /// Coordinates compared, summed over models and both losses.
    pub params_checked: usize,
    /// Coordinates left out because their stencil crossed a max-pool kink.
    pub skipped_at_kinks: usize,
    pub max_rel_err_binary: f64,
    pub max_rel_err_ranking: f64,
}

impl GradcheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.max_rel_err_binary.max(self.max_rel_err_ranking)
    }
}

fn random_sequence<R: Rng>(
    rng: &mut R,
    vocab: usize,
    min_len: usize,
    max_len: usize,
) -> TokenSequence {
    let n = rng.random_range(min_len..=max_len);
    let ids = (0..n).map(|_| rng.random_range(2..vocab as u32)).collect();
    TokenSequence::new(ids).expect("non-empty")
}

fn pool_signature(encoder: &EncoderParams, seqs: &[&TokenSequence]) -> Vec<usize> {
    seqs.iter()
        .flat_map(|s| encode_with_tape(s, encoder).1.argmax_positions().to_vec())
        .collect()
}

/// Binary-head loss on two random sequences, then the ranking loss over a
/// three-sentence batch, for each of `cfg.models` random models.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut report = GradcheckReport {
        models: cfg.models,
        params_checked: 0,
        skipped_at_kinks: 0,
        max_rel_err_binary: 0.0,
        max_rel_err_ranking: 0.0,
    };
    for m in 0..cfg.models {
        let mut rng = RngStream::keyed(cfg.seed, &[domain::INIT, 1000, m as u64]);
        let vocab = rng.random_range(8..=cfg.max_vocab.max(8));
        let hidden = rng.random_range(2..=cfg.max_hidden.max(2));
        let embed = rng.random_range(2..=8);
        let config = EncoderConfig {
            embed_init: 0.5,
            lstm_init_gain: 2.0,
            ..EncoderConfig::new(vocab, embed, hidden)
        };
        let model = Model::new(&config, rng.random_range(2..=6), 1, &mut rng);

        let examples: Vec<LabeledExample> = (0..2)
            .map(|i| LabeledExample {
                tokens: random_sequence(&mut rng, vocab, 1, cfg.max_len),
                label: Label::from_class(i),
                kind: PerturbKind::Replace,
                k: 1,
                source_index: i,
            })
            .collect();
        let refs: Vec<&LabeledExample> = examples.iter().collect();
        let mut grads = model.zeros_like();
        single_batch_loss_grad(&model, 0, &refs, Reduction::Sum, &mut grads);
        let loss =
            |p: &Model| single_batch_loss_grad(p, 0, &refs, Reduction::Sum, &mut p.zeros_like());
        let seqs: Vec<&TokenSequence> = examples.iter().map(|e| &e.tokens).collect();
        let (err, skipped) = finite_diff_check_smooth(
            &model,
            &grads,
            loss,
            |p| pool_signature(&p.encoder, &seqs),
            cfg.step,
        );
        report.max_rel_err_binary = report.max_rel_err_binary.max(err);
        report.skipped_at_kinks += skipped;
        report.params_checked += model.num_params() - skipped;

        let sentences: Vec<TokenSequence> = (0..3)
            .map(|_| random_sequence(&mut rng, vocab, 3, cfg.max_len.max(3)))
            .collect();
        let kind = if m % 2 == 0 {
            PairKind::Contiguous
        } else {
            PairKind::NonContiguous
        };
        let batch = make_pair_batch(&sentences, kind, 3, &mut rng);
        if let Ok(batch) = batch {
            let encoder = &model.encoder;
            let mut g = EncoderParams::zeros(&encoder.config());
            pair_batch_loss_grad(encoder, &batch, Reduction::Sum, &mut g)?;
            let loss = |p: &EncoderParams| {
                pair_batch_loss_grad(
                    p,
                    &batch,
                    Reduction::Sum,
                    &mut EncoderParams::zeros(&p.config()),
                )
                .expect("batch already validated")
            };
            let parts: Vec<&TokenSequence> = batch
                .partitions
                .iter()
                .flat_map(|p| [&p.left, &p.right])
                .collect();
            let (err, skipped) = finite_diff_check_smooth(
                encoder,
                &g,
                loss,
                |p| pool_signature(p, &parts),
                cfg.step,
            );
            report.max_rel_err_ranking = report.max_rel_err_ranking.max(err);
            report.skipped_at_kinks += skipped;
            report.params_checked += encoder.num_params() - skipped;
        }
    }
    Ok(report)
}
