//! Losses, SGD with gradient clipping, the learning-rate schedule, and the
//! single-task and multitask trainers.

mod grad;
mod gradcheck;
mod loss;
mod optim;
mod trainer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use self::grad::{
    pair_accuracy, pair_batch_loss_grad, single_accuracy, single_batch_loss_grad, Reduction,
};
pub use self::gradcheck::{run_gradcheck, GradcheckConfig, GradcheckReport};
pub use self::loss::{
    binary_loss, binary_loss_grad, ranking_loss, ranking_loss_grad, ranks_first, RankingGrad,
};
pub use self::optim::{clip_gradients, sgd_step, LrSchedule, StepStats};
pub use self::trainer::{
    round_robin, train_multitask, train_single_task, EpochMetrics, MultitaskOutcome, TrainData,
    TrainOutcome,
};
use crate::error::{Error, Result};
use crate::perturb::{PairKind, PerturbKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    D,
    P,
    I,
    R,
    C,
    N,
    MT,
}

/// What one member of a training group does with its minibatches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Single(PerturbKind),
    Pair(PairKind),
}

impl Objective {
    pub fn task(self) -> Task {
        match self {
            Objective::Single(PerturbKind::Delete) => Task::D,
            Objective::Single(PerturbKind::Permute) => Task::P,
            Objective::Single(PerturbKind::Insert) => Task::I,
            Objective::Single(PerturbKind::Replace) => Task::R,
            Objective::Pair(PairKind::Contiguous) => Task::C,
            Objective::Pair(PairKind::NonContiguous) => Task::N,
        }
    }

    /// Chance-level validation accuracy for `k`.
    pub fn chance(self, k: usize) -> f64 {
        match self {
            Objective::Single(_) => 0.5,
            Objective::Pair(_) => 1.0 / k as f64,
        }
    }
}

impl Task {
    pub const ALL: [Task; 7] = [
        Task::D,
        Task::P,
        Task::I,
        Task::R,
        Task::C,
        Task::N,
        Task::MT,
    ];

    pub fn objective(self) -> Option<Objective> {
        match self {
            Task::D => Some(Objective::Single(PerturbKind::Delete)),
            Task::P => Some(Objective::Single(PerturbKind::Permute)),
            Task::I => Some(Objective::Single(PerturbKind::Insert)),
            Task::R => Some(Objective::Single(PerturbKind::Replace)),
            Task::C => Some(Objective::Pair(PairKind::Contiguous)),
            Task::N => Some(Objective::Pair(PairKind::NonContiguous)),
            Task::MT => None,
        }
    }

    /// The `k` values swept for this task by default.
    pub fn default_k_range(self) -> std::ops::RangeInclusive<usize> {
        match self {
            Task::D | Task::I | Task::R => 1..=5,
            Task::P | Task::C | Task::N | Task::MT => 2..=6,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Task::D => "D",
            Task::P => "P",
            Task::I => "I",
            Task::R => "R",
            Task::C => "C",
            Task::N => "N",
            Task::MT => "MT",
        };
        f.write_str(s)
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub k: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub head_dim: usize,
    /// Half-width of the uniform embedding initialization.
    pub embed_init: f64,
    /// LSTM weights start uniform in `±gain/√H`.
    pub lstm_init_gain: f64,
    pub batch_size: usize,
    pub lr0: f64,
    pub epoch_decay: f64,
    pub drop_decay: f64,
    pub clip_norm: f64,
    pub max_epochs: usize,
    pub gate_p: f64,
    pub seed: u64,
    pub reduction: Reduction,
    /// Reject `k` outside the task's default sweep range.
    pub strict_k: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            task: Task::R,
            k: 1,
            hidden_dim: 32,
            embed_dim: 32,
            head_dim: 64,
            embed_init: 0.1,
            lstm_init_gain: 4.0,
            batch_size: 64,
            lr0: 0.1,
            epoch_decay: 0.99,
            drop_decay: 0.2,
            clip_norm: 5.0,
            max_epochs: 20,
            gate_p: 0.5,
            seed: 0,
            reduction: Reduction::Sum,
            strict_k: true,
        }
    }
}

impl TrainConfig {
    /// Dimensions used for the full-size single-task encoders.
    pub fn reference_scale(task: Task, k: usize) -> Self {
        TrainConfig {
            task,
            k,
            hidden_dim: if task == Task::MT { 1024 } else { 2048 },
            embed_dim: 512,
            head_dim: 512,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.head_dim == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.strict_k && !self.task.default_k_range().contains(&self.k) {
            return bad(format!(
                "k = {} outside the default range {:?} for task {} (set strict_k = false to override)",
                self.k,
                self.task.default_k_range(),
                self.task
            ));
        }
        let min_k = match self.task {
            Task::D | Task::I | Task::R => 1,
            _ => 2,
        };
        if self.k < min_k {
            return bad(format!("task {} needs k >= {min_k}", self.task));
        }
        if self.batch_size == 0
            || (matches!(self.task, Task::C | Task::N | Task::MT) && self.batch_size < self.k)
        {
            return bad(format!(
                "batch_size {} must be >= k = {}",
                self.batch_size, self.k
            ));
        }
        if !(self.lr0 > 0.0) || !(self.clip_norm > 0.0) || !(0.0..=1.0).contains(&self.gate_p) {
            return bad("lr0 and clip_norm must be positive, gate_p in [0, 1]".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive".into());
        }
        Ok(())
    }
}
