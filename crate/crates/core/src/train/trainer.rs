use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::grad::{pair_accuracy, pair_batch_loss_grad, single_accuracy, single_batch_loss_grad};
use super::optim::{sgd_step, LrSchedule, StepStats};
use super::{Objective, Task, TrainConfig};
use crate::corpus::{TokenSequence, Vocabulary};
use crate::encoder::{encode_stack, EncoderConfig, Model, Params};
use crate::error::{Error, Result};
use crate::perturb::{
    make_pair_batch, make_single_example, LabeledExample, PairBatch, PairKind, PerturbKind,
};
use crate::rng::{domain, RngStream};

/// Sentences available to a training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub vocab: &'a Vocabulary,
    pub train: &'a [TokenSequence],
    pub valid: &'a [TokenSequence],
}

/// One line of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub task: String,
    /// Mean per-example loss over the epoch.
    pub train_loss: f64,
    pub valid_acc: f64,
    /// Rate used during this epoch.
    pub lr: f64,
    pub steps: usize,
    pub max_grad_norm: f64,
    pub max_applied_norm: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub member_valid_acc: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub model: Model,
    pub final_model: Model,
    pub objectives: Vec<Objective>,
    pub history: Vec<EpochMetrics>,
    pub steps: Vec<StepStats>,
    pub best_epoch: usize,
    pub best_valid_acc: f64,
    /// Sentences dropped because they fail a task's length requirement.
    pub skipped: usize,
}

impl TrainOutcome {
    pub fn final_train_loss(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |m| m.train_loss)
    }

    /// Validation accuracy of each member at the best epoch.
    pub fn best_member_acc(&self) -> &BTreeMap<String, f64> {
        &self.history[self.best_epoch].member_valid_acc
    }
}

#[derive(Clone, Debug)]
pub struct MultitaskOutcome {
    /// D/P/I/R encoder with one head per task.
    pub first: TrainOutcome,
    /// C/N encoder.
    pub second: TrainOutcome,
}

impl MultitaskOutcome {
    pub fn encode(&self, seq: &TokenSequence) -> Vec<f64> {
        encode_stack(
            seq,
            &[&self.first.model.encoder, &self.second.model.encoder],
        )
    }

    pub fn output_dim(&self) -> usize {
        self.first.model.encoder.output_dim() + self.second.model.encoder.output_dim()
    }
}

/// Member order for one epoch: cycle through members, skipping any whose
/// batches have run out.
pub fn round_robin(batch_counts: &[usize]) -> Vec<usize> {
    let mut remaining = batch_counts.to_vec();
    let mut order = Vec::with_capacity(remaining.iter().sum());
    while remaining.iter().any(|&r| r > 0) {
        for (m, r) in remaining.iter_mut().enumerate() {
            if *r > 0 {
                *r -= 1;
                order.push(m);
            }
        }
    }
    order
}

enum Batch {
    Single(Vec<LabeledExample>),
    Pair(PairBatch),
}

enum ValidSet {
    Single(Vec<LabeledExample>),
    Pair(Vec<PairBatch>),
}

struct Member {
    objective: Objective,
    head: Option<usize>,
    valid: ValidSet,
}

fn objective_code(o: Objective) -> u64 {
    match o.task() {
        Task::D => 1,
        Task::P => 2,
        Task::I => 3,
        Task::R => 4,
        Task::C => 5,
        Task::N => 6,
        Task::MT => 7,
    }
}

struct Group<'a> {
    config: &'a TrainConfig,
    data: TrainData<'a>,
    label: String,
    init_key: u64,
}

impl Group<'_> {
    fn single_examples(
        &self,
        kind: PerturbKind,
        sentences: &[TokenSequence],
        key: &[u64],
    ) -> (Vec<LabeledExample>, usize) {
        let cfg = self.config;
        let results: Vec<Option<LabeledExample>> = sentences
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                if s.len() < kind.min_len(cfg.k) {
                    return None;
                }
                let mut full_key = key.to_vec();
                full_key.push(i as u64);
                let mut rng = RngStream::keyed(cfg.seed, &full_key);
                make_single_example(s, i, kind, cfg.k, cfg.gate_p, self.data.vocab, &mut rng).ok()
            })
            .collect();
        let skipped = results.iter().filter(|r| r.is_none()).count();
        (results.into_iter().flatten().collect(), skipped)
    }

    fn pair_batches(
        &self,
        kind: PairKind,
        sentences: &[TokenSequence],
        key: &[u64],
        shuffle: bool,
    ) -> (Vec<PairBatch>, usize) {
        let cfg = self.config;
        let mut eligible: Vec<usize> = (0..sentences.len())
            .filter(|&i| sentences[i].len() >= kind.min_len())
            .collect();
        let mut skipped = sentences.len() - eligible.len();
        if shuffle {
            let mut shuffle_key = vec![domain::SHUFFLE];
            shuffle_key.extend_from_slice(key);
            eligible.shuffle(&mut RngStream::keyed(cfg.seed, &shuffle_key));
        }
        let chunks: Vec<&[usize]> = eligible
            .chunks(cfg.batch_size)
            .filter(|c| c.len() >= cfg.k)
            .collect();
        skipped += eligible.len() - chunks.iter().map(|c| c.len()).sum::<usize>();
        let batches: Vec<Option<PairBatch>> = chunks
            .par_iter()
            .enumerate()
            .map(|(b, idx)| {
                let sents: Vec<TokenSequence> = idx.iter().map(|&i| sentences[i].clone()).collect();
                let mut full_key = key.to_vec();
                full_key.push(b as u64);
                make_pair_batch(
                    &sents,
                    kind,
                    cfg.k,
                    &mut RngStream::keyed(cfg.seed, &full_key),
                )
                .ok()
            })
            .collect();
        skipped += batches.iter().filter(|b| b.is_none()).count() * cfg.batch_size;
        (batches.into_iter().flatten().collect(), skipped)
    }

    fn epoch_batches(&self, member: &Member, epoch: usize) -> (Vec<Batch>, usize) {
        let cfg = self.config;
        let code = objective_code(member.objective);
        match member.objective {
            Objective::Single(kind) => {
                let key = [domain::TRAIN, code, epoch as u64];
                let (mut examples, skipped) = self.single_examples(kind, self.data.train, &key);
                examples.shuffle(&mut RngStream::keyed(
                    cfg.seed,
                    &[domain::SHUFFLE, code, epoch as u64],
                ));
                let batches = examples
                    .chunks(cfg.batch_size)
                    .map(|c| Batch::Single(c.to_vec()))
                    .collect();
                (batches, skipped)
            }
            Objective::Pair(kind) => {
                let key = [domain::PAIRS, code, epoch as u64];
                let (batches, skipped) = self.pair_batches(kind, self.data.train, &key, true);
                (batches.into_iter().map(Batch::Pair).collect(), skipped)
            }
        }
    }

    fn validation_set(&self, objective: Objective) -> Result<ValidSet> {
        let code = objective_code(objective);
        let set = match objective {
            Objective::Single(kind) => {
                let (ex, _) = self.single_examples(kind, self.data.valid, &[domain::VALID, code]);
                if ex.is_empty() {
                    return Err(Error::TooSmall {
                        train: self.data.train.len(),
                        valid: 0,
                    });
                }
                ValidSet::Single(ex)
            }
            Objective::Pair(kind) => {
                let (b, _) =
                    self.pair_batches(kind, self.data.valid, &[domain::VALID, code], false);
                if b.is_empty() {
                    return Err(Error::TooSmall {
                        train: self.data.train.len(),
                        valid: 0,
                    });
                }
                ValidSet::Pair(b)
            }
        };
        Ok(set)
    }

    fn run(&self, objectives: &[Objective]) -> Result<TrainOutcome> {
        let cfg = self.config;
        let num_heads = objectives
            .iter()
            .filter(|o| matches!(o, Objective::Single(_)))
            .count();
        let enc_cfg = EncoderConfig {
            embed_init: cfg.embed_init,
            lstm_init_gain: cfg.lstm_init_gain,
            ..EncoderConfig::new(self.data.vocab.len(), cfg.embed_dim, cfg.hidden_dim)
        };
        let mut model = Model::new(
            &enc_cfg,
            cfg.head_dim,
            num_heads,
            &mut RngStream::keyed(cfg.seed, &[domain::INIT, self.init_key]),
        );
        let mut next_head = 0;
        let mut members = Vec::new();
        for &objective in objectives {
            let head = matches!(objective, Objective::Single(_)).then(|| {
                next_head += 1;
                next_head - 1
            });
            members.push(Member {
                objective,
                head,
                valid: self.validation_set(objective)?,
            });
        }

        let mut schedule = LrSchedule::new(cfg.lr0, cfg.epoch_decay, cfg.drop_decay);
        let mut grads = model.zeros_like();
        let mut best: Option<(usize, f64, Model)> = None;
        let mut history = Vec::new();
        let mut steps = Vec::new();
        let mut skipped_total = 0;

        for epoch in 0..cfg.max_epochs {
            let mut queues: Vec<std::vec::IntoIter<Batch>> = Vec::new();
            let mut counts = Vec::new();
            for m in &members {
                let (batches, skipped) = self.epoch_batches(m, epoch);
                if epoch == 0 {
                    skipped_total += skipped;
                    if skipped > 0 {
                        log::warn!(
                            "{}: {skipped} sentences skipped for task {}",
                            self.label,
                            m.objective.task()
                        );
                    }
                }
                counts.push(batches.len());
                queues.push(batches.into_iter());
            }
            if counts.iter().all(|&c| c == 0) {
                return Err(Error::TooSmall {
                    train: 0,
                    valid: self.data.valid.len(),
                });
            }
            let lr = schedule.lr;
            let (mut loss_sum, mut seen) = (0.0, 0usize);
            let (mut max_grad, mut max_applied) = (0.0f64, 0.0f64);
            let mut epoch_steps = 0;
            for m in round_robin(&counts) {
                let batch = queues[m].next().expect("round robin respects counts");
                grads.zero();
                let (loss, n) = match (&batch, members[m].head) {
                    (Batch::Single(ex), Some(head)) => {
                        let refs: Vec<&LabeledExample> = ex.iter().collect();
                        (
                            single_batch_loss_grad(&model, head, &refs, cfg.reduction, &mut grads),
                            ex.len(),
                        )
                    }
                    (Batch::Pair(pb), _) => (
                        pair_batch_loss_grad(
                            &model.encoder,
                            pb,
                            cfg.reduction,
                            &mut grads.encoder,
                        )?,
                        pb.sets.len(),
                    ),
                    (Batch::Single(_), None) => unreachable!("single-sequence members own a head"),
                };
                let stats = sgd_step(&mut model, &mut grads, lr, cfg.clip_norm)?;
                max_grad = max_grad.max(stats.grad_norm);
                max_applied = max_applied.max(stats.applied_norm);
                steps.push(stats);
                epoch_steps += 1;
                loss_sum += loss;
                seen += n;
            }

            let mut member_acc = BTreeMap::new();
            let mut acc_sum = 0.0;
            for m in &members {
                let acc = match (&m.valid, m.head) {
                    (ValidSet::Single(ex), Some(head)) => single_accuracy(&model, head, ex),
                    (ValidSet::Pair(b), _) => pair_accuracy(&model.encoder, b),
                    (ValidSet::Single(_), None) => unreachable!(),
                };
                acc_sum += acc;
                member_acc.insert(m.objective.task().to_string(), acc);
            }
            let valid_acc = acc_sum / members.len() as f64;
            let metrics = EpochMetrics {
                epoch,
                task: self.label.clone(),
                train_loss: loss_sum / seen.max(1) as f64,
                valid_acc,
                lr,
                steps: epoch_steps,
                max_grad_norm: max_grad,
                max_applied_norm: max_applied,
                member_valid_acc: member_acc,
            };
            log::info!(
                "{} epoch {epoch}: loss {:.4} valid {:.4} lr {:.5}",
                self.label,
                metrics.train_loss,
                valid_acc,
                lr
            );
            history.push(metrics);
            if best.as_ref().is_none_or(|(_, acc, _)| valid_acc > *acc) {
                best = Some((epoch, valid_acc, model.clone()));
            }
            schedule.update(valid_acc);
        }

        let (best_epoch, best_valid_acc, best_model) = best.expect("at least one epoch");
        Ok(TrainOutcome {
            model: best_model,
            final_model: model,
            objectives: objectives.to_vec(),
            history,
            steps,
            best_epoch,
            best_valid_acc,
            skipped: skipped_total,
        })
    }
}

/// Trains one encoder on one of D/P/I/R (binary head) or C/N (ranking).
pub fn train_single_task(config: &TrainConfig, data: TrainData<'_>) -> Result<TrainOutcome> {
    config.validate()?;
    let objective = config
        .task
        .objective()
        .ok_or_else(|| Error::Config("use train_multitask for MT".into()))?;
    Group {
        config,
        data,
        label: config.task.to_string(),
        init_key: 0,
    }
    .run(&[objective])
}

/// D/P/I/R on one encoder with four heads, C/N on a second encoder; each
/// group cycles through its tasks one minibatch at a time.
pub fn train_multitask(config: &TrainConfig, data: TrainData<'_>) -> Result<MultitaskOutcome> {
    config.validate()?;
    if config.task != Task::MT {
        return Err(Error::Config(format!(
            "train_multitask called with task {}",
            config.task
        )));
    }
    let first: Vec<Objective> = PerturbKind::ALL
        .into_iter()
        .map(Objective::Single)
        .collect();
    let second = [
        Objective::Pair(PairKind::NonContiguous),
        Objective::Pair(PairKind::Contiguous),
    ];
    let g1 = Group {
        config,
        data,
        label: "MT/E1".into(),
        init_key: 1,
    };
    let g2 = Group {
        config,
        data,
        label: "MT/E2".into(),
        init_key: 2,
    };
    let (a, b) = rayon::join(|| g1.run(&first), || g2.run(&second));
    Ok(MultitaskOutcome {
        first: a?,
        second: b?,
    })
}
