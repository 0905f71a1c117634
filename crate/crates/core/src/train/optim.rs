use serde::{Deserialize, Serialize};

use crate::encoder::Params;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    /// Global L2 norm before clipping.
    pub grad_norm: f64,
    /// Global L2 norm of the gradient actually applied.
    pub applied_norm: f64,
}

/// Rescales `grads` in place so their global norm is at most `max_norm`.
pub fn clip_gradients<P: Params>(grads: &mut P, max_norm: f64) -> StepStats {
    let norm = grads.squared_norm().sqrt();
    if norm <= max_norm {
        return StepStats {
            grad_norm: norm,
            applied_norm: norm,
        };
    }
    let mut scale = max_norm / norm;
    let mut applied = rescale(grads, scale);
    // Rounding can leave the result a few ulps above the bound.
    while applied > max_norm {
        scale = max_norm / applied;
        applied = rescale(grads, scale * (1.0 - f64::EPSILON));
    }
    StepStats {
        grad_norm: norm,
        applied_norm: applied,
    }
}

fn rescale<P: Params>(grads: &mut P, scale: f64) -> f64 {
    for t in grads.tensors_mut() {
        for g in t.iter_mut() {
            *g *= scale;
        }
    }
    grads.squared_norm().sqrt()
}

/// Plain SGD: clip, then `θ ← θ − lr · g`. Non-finite gradients abort the
/// step and leave `params` untouched.
pub fn sgd_step<P: Params>(
    params: &mut P,
    grads: &mut P,
    lr: f64,
    clip_norm: f64,
) -> Result<StepStats> {
    if !grads.all_finite() {
        log::error!("non-finite gradient, step aborted");
        return Err(Error::NonFiniteGradient);
    }
    let stats = clip_gradients(grads, clip_norm);
    params.add_scaled(-lr, grads);
    Ok(stats)
}

/// Per-epoch learning-rate decay: `× epoch_decay` normally, `× drop_decay`
/// when validation accuracy falls below the best seen so far.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub lr: f64,
    pub best: Option<f64>,
    pub epoch_decay: f64,
    pub drop_decay: f64,
}

impl LrSchedule {
    pub fn new(lr0: f64, epoch_decay: f64, drop_decay: f64) -> Self {
        LrSchedule {
            lr: lr0,
            best: None,
            epoch_decay,
            drop_decay,
        }
    }

    /// Call once at the end of each epoch; returns the new rate.
    pub fn update(&mut self, valid_acc: f64) -> f64 {
        let dropped = self.best.is_some_and(|b| valid_acc < b);
        self.lr *= if dropped {
            self.drop_decay
        } else {
            self.epoch_decay
        };
        self.best = Some(self.best.map_or(valid_acc, |b| b.max(valid_acc)));
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[derive(Clone)]
    struct Flat(Vec<f64>);

    impl Params for Flat {
        fn tensors(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn step_examples() {
        let mut p = Flat(vec![1.0, 2.0]);
        sgd_step(&mut p, &mut Flat(vec![0.0, 0.0]), 0.1, 5.0).unwrap();
        assert_eq!(p.0, [1.0, 2.0]);

        let mut p = Flat(vec![1.0]);
        let stats = sgd_step(&mut p, &mut Flat(vec![0.5]), 0.1, 5.0).unwrap();
        assert!((p.0[0] - 0.95).abs() < 1e-15);
        assert_eq!(stats.grad_norm, stats.applied_norm);

        // norm 10 → halved
        let mut p = Flat(vec![0.0, 0.0]);
        let mut g = Flat(vec![6.0, 8.0]);
        let stats = sgd_step(&mut p, &mut g, 1.0, 5.0).unwrap();
        assert_eq!(stats.grad_norm, 10.0);
        assert!((stats.applied_norm - 5.0).abs() < 1e-12);
        assert!((p.0[0] + 3.0).abs() < 1e-12 && (p.0[1] + 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn clipped_norm_never_exceeds_bound(
            g in proptest::collection::vec(-1e3f64..1e3, 1..64),
            max_norm in 0.1f64..10.0,
        ) {
            let mut grads = Flat(g);
            let stats = clip_gradients(&mut grads, max_norm);
            prop_assert!(stats.applied_norm <= max_norm);
            prop_assert_eq!(stats.applied_norm, grads.squared_norm().sqrt());
            if stats.grad_norm > max_norm {
                prop_assert!(stats.applied_norm > max_norm * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn non_finite_aborts() {
        let mut p = Flat(vec![1.0]);
        let err = sgd_step(&mut p, &mut Flat(vec![f64::NAN]), 0.1, 5.0);
        assert!(matches!(err, Err(Error::NonFiniteGradient)));
        assert_eq!(p.0, [1.0]);
    }

    #[test]
    fn schedule_examples() {
        let mut s = LrSchedule::new(0.1, 0.99, 0.2);
        assert!((s.update(0.5) - 0.099).abs() < 1e-15);

        let mut s = LrSchedule::new(0.1, 0.99, 0.2);
        s.best = Some(0.8);
        assert!((s.update(0.7) - 0.02).abs() < 1e-15);
        assert!((s.update(0.6) - 0.004).abs() < 1e-15);
        assert_eq!(s.best, Some(0.8));
    }

    #[test]
    fn improving_epochs_follow_geometric_decay() {
        let mut s = LrSchedule::new(0.1, 0.99, 0.2);
        let mut prev = s.lr;
        for e in 1..=20 {
            let lr = s.update(e as f64 / 20.0);
            assert!(lr < prev);
            assert!((lr - 0.1 * 0.99f64.powi(e)).abs() < 1e-15);
            prev = lr;
        }
        // Ties are not drops.
        let mut s = LrSchedule::new(0.1, 0.99, 0.2);
        s.update(0.5);
        assert!((s.update(0.5) - 0.1 * 0.99 * 0.99).abs() < 1e-15);
    }
}
