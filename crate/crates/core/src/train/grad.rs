//! Minibatch loss and gradient accumulation.
//!
//! Examples are processed in fixed-size chunks that may run on different
//! threads; chunk gradients are summed in chunk order, so the result does not
//! depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::{binary_loss_grad, ranking_loss_grad, ranks_first};
use crate::encoder::{encode, encode_with_tape, EncoderParams, Model, Params};
use crate::error::Result;
use crate::linalg::{argmax, axpy};
use crate::perturb::{LabeledExample, PairBatch};

const CHUNK: usize = 8;

/// How per-example losses combine into the minibatch objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

impl Reduction {
    fn scale(self, batch: usize) -> f64 {
        match self {
            Reduction::Sum => 1.0,
            Reduction::Mean => 1.0 / batch.max(1) as f64,
        }
    }
}

/// Accumulates the gradient of the batch objective into `grads` and returns
/// the summed (unscaled) loss.
pub fn single_batch_loss_grad(
    model: &Model,
    head: usize,
    examples: &[&LabeledExample],
    reduction: Reduction,
    grads: &mut Model,
) -> f64 {
    let scale = reduction.scale(examples.len());
    let partials: Vec<(f64, Model)> = examples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut g = model.zeros_like();
            let mut loss = 0.0;
            for ex in chunk {
                let (enc, mut tape) = encode_with_tape(&ex.tokens, &model.encoder);
                let (logits, head_tape) = model.heads[head].forward(&enc);
                let (l, mut d_logits) = binary_loss_grad(&logits, ex.label.class());
                loss += l;
                d_logits.iter_mut().for_each(|d| *d *= scale);
                let d_enc = model.heads[head].backward(&head_tape, &d_logits, &mut g.heads[head]);
                tape.backward(&model.encoder, &d_enc, &mut g.encoder)
                    .expect("fresh tape");
            }
            (loss, g)
        })
        .collect();
    let mut total = 0.0;
    for (loss, g) in partials {
        total += loss;
        grads.add_scaled(1.0, &g);
    }
    total
}

/// Ranking objective over in-batch candidates. Every left and right part is
/// encoded once; a right part shared by several candidate sets collects the
/// gradient from each of them.
pub fn pair_batch_loss_grad(
    encoder: &EncoderParams,
    batch: &PairBatch,
    reduction: Reduction,
    grads: &mut EncoderParams,
) -> Result<f64> {
    let scale = reduction.scale(batch.sets.len());
    let mut encoded: Vec<_> = batch
        .partitions
        .par_iter()
        .map(|p| {
            (
                encode_with_tape(&p.left, encoder),
                encode_with_tape(&p.right, encoder),
            )
        })
        .collect();
    let dim = encoder.output_dim();
    let n = encoded.len();
    let mut d_left = vec![vec![0.0; dim]; n];
    let mut d_right = vec![vec![0.0; dim]; n];
    let mut total = 0.0;
    for set in &batch.sets {
        let anchor: &[f64] = &encoded[set.anchor_source].0 .0;
        let cands: Vec<&[f64]> = set
            .candidate_sources
            .iter()
            .map(|&j| &*encoded[j].1 .0)
            .collect();
        let g = ranking_loss_grad(anchor, &cands, set.target_index)?;
        total += g.loss;
        axpy(scale, &g.d_anchor, &mut d_left[set.anchor_source]);
        for (&j, d) in set.candidate_sources.iter().zip(&g.d_candidates) {
            axpy(scale, d, &mut d_right[j]);
        }
    }
    let partials: Vec<EncoderParams> = encoded
        .par_chunks_mut(CHUNK)
        .zip(d_left.par_chunks(CHUNK).zip(d_right.par_chunks(CHUNK)))
        .map(|(chunk, (dl, dr))| {
            let mut g = EncoderParams::zeros(&encoder.config());
            for (((_, lt), (_, rt)), (dl, dr)) in chunk.iter_mut().zip(dl.iter().zip(dr)) {
                lt.backward(encoder, dl, &mut g).expect("fresh tape");
                rt.backward(encoder, dr, &mut g).expect("fresh tape");
            }
            g
        })
        .collect();
    for g in partials {
        grads.add_scaled(1.0, &g);
    }
    Ok(total)
}

/// Fraction of examples whose head prediction matches the label.
pub fn single_accuracy(model: &Model, head: usize, examples: &[LabeledExample]) -> f64 {
    if examples.is_empty() {
        return 0.0;
    }
    let correct: usize = examples
        .par_iter()
        .map(|ex| {
            let logits = model.heads[head].logits(&encode(&ex.tokens, &model.encoder));
            usize::from(argmax(&logits) == ex.label.class())
        })
        .sum();
    correct as f64 / examples.len() as f64
}

/// Fraction of candidate sets where the true candidate has the strictly
/// largest dot product with the anchor.
pub fn pair_accuracy(encoder: &EncoderParams, batches: &[PairBatch]) -> f64 {
    let (correct, total) = batches
        .par_iter()
        .map(|batch| {
            let lefts: Vec<_> = batch
                .partitions
                .iter()
                .map(|p| encode(&p.left, encoder))
                .collect();
            let rights: Vec<_> = batch
                .partitions
                .iter()
                .map(|p| encode(&p.right, encoder))
                .collect();
            let correct = batch
                .sets
                .iter()
                .filter(|set| {
                    let cands: Vec<&[f64]> =
                        set.candidate_sources.iter().map(|&j| &*rights[j]).collect();
                    ranks_first(&lefts[set.anchor_source], &cands, set.target_index)
                })
                .count();
            (correct, batch.sets.len())
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    if total == 0 {
        0.0
    } else {
        correct as f64 / total as f64
    }
}
