//! Validation-weighted ensembles of independently trained encoders.
//!
//! Each member contributes the class probabilities of its own probe
//! classifier; the ensemble predicts the argmax of the weighted average.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::argmax;

/// `w_i = s_i / Σ s_j`.
pub fn normalize_weights(scores: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
        return Err(Error::InvalidScore(bad));
    }
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Err(Error::AllZero);
    }
    Ok(scores.iter().map(|s| s / total).collect())
}

/// Weighted average of member probability vectors.
pub fn combine(member_probs: &[&[f64]], weights: &[f64]) -> Result<Vec<f64>> {
    if member_probs.is_empty() || member_probs.len() != weights.len() {
        return Err(Error::Config(format!(
            "{} members for {} weights",
            member_probs.len(),
            weights.len()
        )));
    }
    let arity = member_probs[0].len();
    let mut out = vec![0.0; arity];
    for (p, &w) in member_probs.iter().zip(weights) {
        if p.len() != arity {
            return Err(Error::ArityMismatch {
                expected: arity,
                got: p.len(),
            });
        }
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// Ties go to the lowest class index.
pub fn ensemble_predict(member_probs: &[&[f64]], weights: &[f64]) -> Result<usize> {
    Ok(argmax(&combine(member_probs, weights)?))
}

/// Accuracy over a labelled set; `probs[m][i]` is member `m`'s distribution
/// for example `i`.
pub fn ensemble_accuracy(
    probs: &[Vec<Vec<f64>>],
    weights: &[f64],
    labels: &[usize],
) -> Result<f64> {
    if let Some(p) = probs.iter().find(|p| p.len() != labels.len()) {
        return Err(Error::Config(format!(
            "{} predictions for {} labels",
            p.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for (i, &y) in labels.iter().enumerate() {
        let row: Vec<&[f64]> = probs.iter().map(|p| p[i].as_slice()).collect();
        if ensemble_predict(&row, weights)? == y {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

/// One ensemble member: its checkpoint files (two for a multitask model,
/// whose encodings are concatenated) and validation score per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleMember {
    pub checkpoints: Vec<PathBuf>,
    #[serde(default)]
    pub scores: BTreeMap<String, f64>,
}

/// Ensemble manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub members: Vec<EnsembleMember>,
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::Config(
                "an ensemble needs at least two members".into(),
            ));
        }
        if let Some(m) = self.members.iter().find(|m| m.checkpoints.is_empty()) {
            return Err(Error::Config(format!(
                "member with scores {:?} has no checkpoint",
                m.scores
            )));
        }
        Ok(())
    }

    /// Member weights for `task`, from their validation scores.
    pub fn weights(&self, task: &str) -> Result<Vec<f64>> {
        let scores = self
            .members
            .iter()
            .map(|m| {
                m.scores.get(task).copied().ok_or_else(|| {
                    Error::Config(format!(
                        "member {:?} has no score for {task}",
                        m.checkpoints
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        normalize_weights(&scores)
    }

    /// Tasks scored by every member.
    pub fn tasks(&self) -> Vec<String> {
        let Some(first) = self.members.first() else {
            return Vec::new();
        };
        first
            .scores
            .keys()
            .filter(|t| self.members.iter().all(|m| m.scores.contains_key(*t)))
            .cloned()
            .collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let spec: EnsembleSpec = serde_json::from_str(&fs::read_to_string(path)?)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn weight_examples() {
        let w = normalize_weights(&[0.8, 0.6]).unwrap();
        assert!((w[0] - 0.571_428_571_4).abs() < 1e-9 && (w[1] - 0.428_571_428_6).abs() < 1e-9);
        assert_eq!(normalize_weights(&[1.0, 0.0]).unwrap(), [1.0, 0.0]);
        let w = normalize_weights(&[0.3, 0.3, 0.4]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((w[0] - 0.3).abs() < 1e-12 && (w[2] - 0.4).abs() < 1e-12);
        assert!(matches!(
            normalize_weights(&[0.0, 0.0]),
            Err(Error::AllZero)
        ));
        assert!(matches!(
            normalize_weights(&[0.5, -0.1]),
            Err(Error::InvalidScore(_))
        ));
        assert!(matches!(
            normalize_weights(&[f64::NAN]),
            Err(Error::InvalidScore(_))
        ));
    }

    #[test]
    fn prediction_examples() {
        let a = [0.2, 0.8];
        let b = [0.9, 0.1];
        assert_eq!(ensemble_predict(&[&a, &b], &[1.0, 0.0]).unwrap(), 1);
        assert_eq!(ensemble_predict(&[&a, &b], &[0.0, 1.0]).unwrap(), 0);
        assert_eq!(ensemble_predict(&[&a, &a], &[0.3, 0.7]).unwrap(), 1);
        assert_eq!(ensemble_predict(&[&[0.5, 0.5][..]], &[1.0]).unwrap(), 0);
        assert!(matches!(
            ensemble_predict(&[&a, &[0.2, 0.3, 0.5][..]], &[0.5, 0.5]),
            Err(Error::ArityMismatch {
                expected: 2,
                got: 3
            })
        ));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ensemble.json");
        let member = |name: &str, s: f64| EnsembleMember {
            checkpoints: vec![PathBuf::from(name)],
            scores: [("Downstream".to_string(), s)].into_iter().collect(),
        };
        let spec = EnsembleSpec {
            members: vec![member("a.csnt", 0.8), member("b.csnt", 0.6)],
        };
        spec.save(&path).unwrap();
        let back = EnsembleSpec::load(&path).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.tasks(), ["Downstream"]);
        assert_eq!(
            back.weights("Downstream").unwrap(),
            normalize_weights(&[0.8, 0.6]).unwrap()
        );
        assert!(back.weights("SentLen").is_err());
        let single = EnsembleSpec {
            members: vec![member("a.csnt", 0.8)],
        };
        assert!(single.validate().is_err());
    }

    fn distribution(arity: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.01f64..1.0, arity).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect()
        })
    }

    fn members() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (2usize..5, 1usize..5).prop_flat_map(|(arity, m)| {
            (
                prop::collection::vec(distribution(arity), m),
                prop::collection::vec(0.0f64..1.0, m),
            )
        })
    }

    proptest! {
        #[test]
        fn combined_is_a_distribution((probs, scores) in members()) {
            prop_assume!(scores.iter().sum::<f64>() > 0.0);
            let w = normalize_weights(&scores).unwrap();
            let rows: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
            let c = combine(&rows, &w).unwrap();
            prop_assert!(c.iter().all(|&v| v >= 0.0));
            prop_assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn single_member_is_itself(p in distribution(4)) {
            prop_assert_eq!(combine(&[&p], &[1.0]).unwrap(), p.clone());
            prop_assert_eq!(ensemble_predict(&[&p], &[1.0]).unwrap(), argmax(&p));
        }

        #[test]
        fn degenerate_weights_select_member((probs, _) in members()) {
            let mut w = vec![0.0; probs.len()];
            w[0] = 1.0;
            let rows: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
            prop_assert_eq!(combine(&rows, &w).unwrap(), probs[0].clone());
        }

        #[test]
        fn member_order_is_irrelevant((probs, scores) in members(), rot in 0usize..5) {
            prop_assume!(scores.iter().sum::<f64>() > 0.0);
            let w = normalize_weights(&scores).unwrap();
            let r = rot % probs.len();
            let mut p2 = probs.clone();
            let mut w2 = w.clone();
            p2.rotate_left(r);
            w2.rotate_left(r);
            let rows: Vec<&[f64]> = probs.iter().map(Vec::as_slice).collect();
            let rows2: Vec<&[f64]> = p2.iter().map(Vec::as_slice).collect();
            let a = combine(&rows, &w).unwrap();
            let b = combine(&rows2, &w2).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let second = a.iter().copied().filter(|&v| v < top).fold(f64::NEG_INFINITY, f64::max);
            if top - second > 1e-9 {
                prop_assert_eq!(argmax(&a), argmax(&b));
            }
        }
    }
}
